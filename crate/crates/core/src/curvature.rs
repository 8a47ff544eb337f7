//! Estimation of the training-loss Hessian diagonal at the learned
//! parameters, with per-layer sharpness aggregates.
//!
//! Two estimators: an exact oracle (`diag_i = eᵢᵀ H eᵢ`, one HVP per
//! coordinate, capped to small models) and the Hutchinson estimator
//! (`E[v ⊙ Hv] = diag(H)` for Rademacher probes, one HVP per probe —
//! per-probe cost linear in the parameter count). Negative estimates are
//! kept as-is: an SGD solution is not exactly stationary and selection
//! ranks raw values.

use crate::error::{CoreError, Result};
use crate::fingerprint::sha256_hex;
use crate::gradcore::{BatchSource, Counts, DatasetLoss, ParamVector, Partition, Segment};
use crate::rng::{stream, Domain};
use crate::textkv::{Document, Section};
use rand::Rng;
use rayon::prelude::*;

/// Default parameter-count cap for the exact estimator.
pub const DEFAULT_EXACT_CAP: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    Hutchinson,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Estimator::Exact => write!(f, "exact"),
            Estimator::Hutchinson => write!(f, "hutchinson"),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Estimator::Exact),
            "hutchinson" => Ok(Estimator::Hutchinson),
            other => Err(CoreError::Config(format!("unknown estimator `{}`", other))),
        }
    }
}

/// Per-parameter diagonal-Hessian estimates plus per-layer aggregates and
/// estimator provenance.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub diag: ParamVector,
    pub layer_means: Vec<(String, f64)>,
    pub estimator: Estimator,
    pub probes_used: usize,
    pub batch_fingerprint: String,
    pub counts: Counts,
}

/// Arithmetic mean of the diagonal over each partition segment, in
/// partition order. Summation is sequential within a segment so the means
/// are bit-reproducible from the stored diagonal.
pub fn layer_means_of(diag: &ParamVector) -> Vec<(String, f64)> {
    diag.partition()
        .segments()
        .iter()
        .map(|s| {
            let mut sum = 0.0;
            for &v in &diag.values()[s.offset..s.offset + s.len] {
                sum += v;
            }
            (s.name.clone(), sum / s.len as f64)
        })
        .collect()
}

impl CurvatureReport {
    /// CSV of per-layer means: the data behind the layer-sharpness plot.
    pub fn layer_means_csv(&self) -> String {
        let mut out = String::from("layer,mean_diag,param_count\n");
        for ((name, mean), seg) in self.layer_means.iter().zip(self.diag.partition().segments())
        {
            out.push_str(&format!("{},{:?},{}\n", name, mean, seg.len));
        }
        out
    }

    const SENTINEL: &'static str = "# --diag-f64le--";

    /// Serializes as a structured-text header followed by the binary
    /// diagonal block (f64 little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let diag_bytes: Vec<u8> = self
            .diag
            .values()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let mut doc = Document::new();
        let mut s = Section::new("curvature");
        s.set("estimator", self.estimator)
            .set("probes_used", self.probes_used)
            .set("batch_fingerprint", &self.batch_fingerprint)
            .set("forward_calls", self.counts.forward)
            .set("grad_calls", self.counts.grad)
            .set("hvp_calls", self.counts.hvp)
            .set("param_count", self.diag.len())
            .set("diag_sha256", sha256_hex(&diag_bytes));
        doc.push(s);
        let mut p = Section::new("partition");
        p.set(
            "segments",
            self.diag
                .partition()
                .segments()
                .iter()
                .map(|s| format!("{}:{}:{}", s.name, s.offset, s.len))
                .collect::<Vec<_>>()
                .join(","),
        );
        doc.push(p);
        let mut m = Section::new("layer_means");
        for (name, mean) in &self.layer_means {
            m.set(name, format!("{:?}", mean));
        }
        doc.push(m);

        let mut out = doc.to_text().into_bytes();
        out.extend_from_slice(Self::SENTINEL.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&diag_bytes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CurvatureReport> {
        let sentinel = format!("{}\n", Self::SENTINEL);
        let split = bytes
            .windows(sentinel.len())
            .position(|w| w == sentinel.as_bytes())
            .ok_or_else(|| CoreError::Data("curvature report: missing diag block".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| CoreError::Data("curvature report header is not UTF-8".into()))?;
        let block = &bytes[split + sentinel.len()..];
        let doc = Document::parse(header)?;
        let c = doc.require_section("curvature")?;
        let param_count: usize = c.parse("param_count")?;
        if block.len() != param_count * 8 {
            return Err(CoreError::Data(format!(
                "diag block has {} bytes, expected {}",
                block.len(),
                param_count * 8
            )));
        }
        if sha256_hex(block) != c.require("diag_sha256")? {
            return Err(CoreError::Data("diag block checksum mismatch".into()));
        }
        let values: Vec<f64> = block
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();

        let mut segments = Vec::new();
        for part in doc
            .require_section("partition")?
            .require("segments")?
            .split(',')
        {
            let mut it = part.rsplitn(3, ':');
            let len: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CoreError::Data(format!("bad segment `{}`", part)))?;
            let offset: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CoreError::Data(format!("bad segment `{}`", part)))?;
            let name = it
                .next()
                .ok_or_else(|| CoreError::Data(format!("bad segment `{}`", part)))?;
            segments.push(Segment {
                name: name.to_string(),
                offset,
                len,
            });
        }
        let diag = ParamVector::new(values, Partition::new(segments)?)?;
        let layer_means = doc
            .require_section("layer_means")?
            .entries
            .iter()
            .map(|(k, v)| {
                v.parse::<f64>()
                    .map(|m| (k.clone(), m))
                    .map_err(|_| CoreError::Data(format!("bad layer mean `{}`", v)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CurvatureReport {
            diag,
            layer_means,
            estimator: c.parse("estimator")?,
            probes_used: c.parse("probes_used")?,
            batch_fingerprint: c.require("batch_fingerprint")?.to_string(),
            counts: Counts {
                forward: c.parse("forward_calls")?,
                grad: c.parse("grad_calls")?,
                hvp: c.parse("hvp_calls")?,
            },
        })
    }

    /// Content hash of the serialized report.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

/// Exact diagonal: `diag_i = eᵢᵀ · (H eᵢ)` for every coordinate, over the
/// loss's full data view. Refuses above `cap` (one HVP per parameter).
pub fn diag_exact<B: BatchSource + ?Sized>(
    loss: &DatasetLoss<'_, B>,
    params: &ParamVector,
    batch_fingerprint: &str,
    cap: Option<usize>,
) -> Result<CurvatureReport> {
    let cap = cap.unwrap_or(DEFAULT_EXACT_CAP);
    let p = params.len();
    if p > cap {
        return Err(CoreError::Config(format!(
            "exact estimator refused: {} parameters exceed the cap of {}; use the \
             hutchinson estimator",
            p, cap
        )));
    }
    let before = loss.counters();
    let partition = loss.graph().partition().clone();
    let mut diag = vec![0.0; p];
    for i in 0..p {
        let e = ParamVector::basis(partition.clone(), i);
        let hv = loss.hvp(params, &e)?;
        diag[i] = hv.values()[i];
    }
    let diag = ParamVector::new(diag, partition)?;
    let layer_means = layer_means_of(&diag);
    let after = loss.counters();
    Ok(CurvatureReport {
        layer_means,
        diag,
        estimator: Estimator::Exact,
        probes_used: 0,
        batch_fingerprint: batch_fingerprint.to_string(),
        counts: Counts {
            forward: after.forward - before.forward,
            grad: after.grad - before.grad,
            hvp: after.hvp - before.hvp,
        },
    })
}

/// Hutchinson diagonal estimate: `(1/K) Σ_k v_k ⊙ (H v_k)` with i.i.d.
/// Rademacher probes. Unbiased; exact on diagonal Hessians. Probes run in
/// parallel on independent seed streams and are averaged in probe order,
/// so results do not depend on thread scheduling.
pub fn diag_hutchinson<B: BatchSource + ?Sized>(
    loss: &DatasetLoss<'_, B>,
    params: &ParamVector,
    probes: usize,
    seed: u64,
    batch_fingerprint: &str,
) -> Result<CurvatureReport> {
    if probes == 0 {
        return Err(CoreError::Config("need at least one probe".into()));
    }
    let before = loss.counters();
    let p = params.len();
    let partition = loss.graph().partition().clone();
    let estimates: Vec<Result<Vec<f64>>> = (0..probes)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, Domain::Probe, k as u64);
            let v: Vec<f64> = (0..p)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let vp = ParamVector::new(v.clone(), partition.clone())?;
            let hv = loss.hvp(params, &vp)?;
            Ok(v.iter()
                .zip(hv.values())
                .map(|(vi, hvi)| vi * hvi)
                .collect())
        })
        .collect();
    let mut acc = vec![0.0; p];
    for est in estimates {
        let est = est?;
        for (a, v) in acc.iter_mut().zip(&est) {
            *a += v;
        }
    }
    let inv = 1.0 / probes as f64;
    for a in &mut acc {
        *a *= inv;
    }
    let diag = ParamVector::new(acc, partition)?;
    let layer_means = layer_means_of(&diag);
    let after = loss.counters();
    Ok(CurvatureReport {
        layer_means,
        diag,
        estimator: Estimator::Hutchinson,
        probes_used: probes,
        batch_fingerprint: batch_fingerprint.to_string(),
        counts: Counts {
            forward: after.forward - before.forward,
            grad: after.grad - before.grad,
            hvp: after.hvp - before.hvp,
        },
    })
}

/// Diagnostic lower bound on the sharpness `max_{‖ε‖≤ρ} L(θ+ε) − L(θ)` by
/// random-direction and gradient-ascent probing. Reported for sanity
/// plots; never used by selection.
pub fn sharpness_gap<B: BatchSource + ?Sized>(
    loss: &DatasetLoss<'_, B>,
    params: &ParamVector,
    rho: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if rho < 0.0 {
        return Err(CoreError::Config("radius must be nonnegative".into()));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let base = loss.loss(params)?;
    let p = params.len();
    let mut best = f64::NEG_INFINITY;
    let mut try_direction = |dir: &[f64], norm: f64| -> Result<()> {
        if norm == 0.0 {
            return Ok(());
        }
        for sign in [1.0, -1.0] {
            let mut probe = params.clone();
            for (pv, d) in probe.values_mut().iter_mut().zip(dir) {
                *pv += sign * rho * d / norm;
            }
            best = best.max(loss.loss(&probe)? - base);
        }
        Ok(())
    };
    let g = loss.grad(params)?;
    try_direction(g.values(), g.l2_norm())?;
    for t in 0..trials {
        let mut rng = stream(seed, Domain::SharpnessProbe, t as u64);
        let dir: Vec<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        try_direction(&dir, norm)?;
    }
    Ok(best)
}
