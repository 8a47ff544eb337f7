//! Versioned checkpoint container.
//!
//! Byte layout (all multi-byte integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       6     magic, the ASCII bytes "FFCKPT"
//! 6       2     format_version, u16 (currently 1)
//! 8       4     header_len, u32
//! 12      H     header: UTF-8 structured text ([model], [train], [params])
//! 12+H    8     param_count, u64
//! 20+H    8*n   parameters, f64 little-endian in partition order
//! ```
//!
//! The `[params]` header section carries the SHA-256 of the parameter block
//! so loads detect truncation or tampering.

use crate::error::{CoreError, Result};
use crate::fingerprint::sha256_hex;
use crate::gradcore::{ParamVector, Reduction};
use crate::models::{build, ModelSpec, Optimizer};
use crate::textkv::{Document, Section};
use std::path::Path;

pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 6] = b"FFCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub optimizer: Optimizer,
    pub reduction: Reduction,
    pub dataset_fingerprint: String,
    pub train_rows: usize,
    pub final_loss: f64,
    /// `‖∇L_learn(θ*)‖` over the training view, NaN when not computed.
    pub grad_norm: f64,
}

/// A trained model: spec, parameters and training provenance. Houses θ*.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u16,
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let param_bytes: Vec<u8> = self
            .params
            .values()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();

        let mut doc = Document::new();
        doc.push(self.spec.to_section("model"));
        let mut t = Section::new("train");
        t.set("epochs", self.meta.epochs)
            .set("lr", fmt_f64(self.meta.lr))
            .set("batch_size", self.meta.batch_size)
            .set("seed", self.meta.seed)
            .set("momentum", fmt_f64(self.meta.momentum))
            .set("optimizer", self.meta.optimizer)
            .set("reduction", self.meta.reduction)
            .set("dataset_fingerprint", &self.meta.dataset_fingerprint)
            .set("train_rows", self.meta.train_rows)
            .set("final_loss", fmt_f64(self.meta.final_loss))
            .set("grad_norm", fmt_f64(self.meta.grad_norm));
        doc.push(t);
        let mut p = Section::new("params");
        p.set("count", self.params.len())
            .set("sha256", sha256_hex(&param_bytes));
        doc.push(p);
        let header = doc.to_text();

        let mut out = Vec::with_capacity(20 + header.len() + param_bytes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        out.extend_from_slice(&param_bytes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let fail = |msg: &str| CoreError::CheckpointFormat(msg.to_string());
        if bytes.len() < 12 || &bytes[0..6] != MAGIC {
            return Err(fail("bad magic (not a checkpoint file)"));
        }
        let version = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CoreError::CheckpointFormat(format!(
                "unsupported format version {}",
                version
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + header_len + 8 {
            return Err(fail("truncated header"));
        }
        let header = std::str::from_utf8(&bytes[12..12 + header_len])
            .map_err(|_| fail("header is not UTF-8"))?;
        let doc = Document::parse(header)?;
        let spec = ModelSpec::from_section(doc.require_section("model")?)?;
        let t = doc.require_section("train")?;
        let meta = TrainMeta {
            epochs: t.parse("epochs")?,
            lr: t.parse("lr")?,
            batch_size: t.parse("batch_size")?,
            seed: t.parse("seed")?,
            momentum: t.parse("momentum")?,
            optimizer: t.parse("optimizer")?,
            reduction: t.parse("reduction")?,
            dataset_fingerprint: t.require("dataset_fingerprint")?.to_string(),
            train_rows: t.parse("train_rows")?,
            final_loss: t.parse("final_loss")?,
            grad_norm: t.parse("grad_norm")?,
        };
        let p = doc.require_section("params")?;
        let declared: usize = p.parse("count")?;

        let mut pos = 12 + header_len;
        let count = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if count != declared {
            return Err(CoreError::CheckpointFormat(format!(
                "header declares {} parameters, block has {}",
                declared, count
            )));
        }
        if bytes.len() != pos + count * 8 {
            return Err(CoreError::CheckpointFormat(format!(
                "expected {} bytes of parameters, file has {}",
                count * 8,
                bytes.len() - pos
            )));
        }
        let block = &bytes[pos..];
        let sha = sha256_hex(block);
        if sha != p.require("sha256")? {
            return Err(fail("parameter block checksum mismatch"));
        }
        let values: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        // rebuild the partition from the spec; reduction is irrelevant here
        let (graph, _) = build(&spec, meta.reduction)?;
        if graph.param_len() != count {
            return Err(CoreError::CheckpointFormat(format!(
                "spec implies {} parameters, file has {}",
                graph.param_len(),
                count
            )));
        }
        let params = ParamVector::new(values, graph.partition().clone())?;
        Ok(Checkpoint {
            format_version: version,
            spec,
            params,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            CoreError::CheckpointFormat(msg) => {
                CoreError::CheckpointFormat(format!("{}: {}", path.display(), msg))
            }
            other => other,
        })
    }
}

/// Round-trippable float formatting for header text.
fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{:?}", v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Reduction;

    fn sample_checkpoint() -> Checkpoint {
        let spec = ModelSpec::mlp(vec![2, 3, 2], 0);
        let (graph, init) = build(&spec, Reduction::Mean).unwrap();
        let _ = graph;
        Checkpoint {
            format_version: FORMAT_VERSION,
            spec,
            params: init,
            meta: TrainMeta {
                epochs: 0,
                lr: 0.1,
                batch_size: 32,
                seed: 0,
                momentum: 0.0,
                optimizer: Optimizer::Sgd,
                reduction: Reduction::Mean,
                dataset_fingerprint: "deadbeef".into(),
                train_rows: 0,
                final_loss: f64::NAN,
                grad_norm: f64::NAN,
            },
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.params.values(), ckpt.params.values());
        assert_eq!(back.spec, ckpt.spec);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_params_detected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{}", err);
    }

    #[test]
    fn truncation_detected() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("parameters"), "{}", err);
    }

    #[test]
    fn wrong_magic_rejected() {
        let err = Checkpoint::from_bytes(b"NOTFMT\x01\x00\x00\x00\x00\x00").unwrap_err();
        assert!(err.to_string().contains("magic"), "{}", err);
    }
}
