//! IDX (de-facto MNIST) binary format: big-endian magic, dimension sizes,
//! then raw unsigned bytes. Image files use magic 0x00000803 with three
//! dimensions, label files 0x00000801 with one.

use crate::datahub::LabeledDataset;
use crate::error::{CoreError, Result};
use crate::gradcore::Tensor;
use std::io::Read;
use std::path::Path;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader {
    data: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut data)?;
        Ok(Reader { data, pos: 0 })
    }

    fn err(&self, detail: impl Into<String>) -> CoreError {
        CoreError::Ingestion {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        if self.pos + 4 > self.data.len() {
            return Err(self.err("truncated file while reading u32"));
        }
        let v = u32::from_be_bytes(self.data[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!(
                "truncated file: need {} more bytes, have {}",
                n,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(format!(
                "{} trailing bytes after declared contents",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0, 1]`;
/// features come out shaped `[N, 1, H, W]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut ir = Reader::open(images_path)?;
    let magic = ir.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(CoreError::Ingestion {
            offset: 0,
            detail: format!(
                "bad image magic 0x{:08x} (expected 0x{:08x}) in {}",
                magic,
                IMAGE_MAGIC,
                images_path.display()
            ),
        });
    }
    let n = ir.u32_be()? as usize;
    let h = ir.u32_be()? as usize;
    let w = ir.u32_be()? as usize;
    let pixels = ir.bytes(n * h * w)?;
    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    ir.expect_end()?;

    let mut lr = Reader::open(labels_path)?;
    let magic = lr.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(CoreError::Ingestion {
            offset: 0,
            detail: format!(
                "bad label magic 0x{:08x} (expected 0x{:08x}) in {}",
                magic,
                LABEL_MAGIC,
                labels_path.display()
            ),
        });
    }
    let ln = lr.u32_be()? as usize;
    if ln != n {
        return Err(CoreError::Ingestion {
            offset: 4,
            detail: format!("{} labels but {} images", ln, n),
        });
    }
    let labels: Vec<u32> = lr.bytes(ln)?.iter().map(|&b| b as u32).collect();
    lr.expect_end()?;

    let class_count = labels.iter().max().map(|&m| m as usize + 1).unwrap_or(2).max(2);
    let features = Tensor::new(vec![n, 1, h, w], features)?;
    LabeledDataset::new(features, labels, class_count)
}

/// Writes an image file (features `[N, 1, H, W]` or `[N, H, W]` in `[0,1]`)
/// and a label file. Used for fixtures and round-trip tests.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    features: &Tensor,
    labels: &[u32],
) -> Result<()> {
    let shape = features.shape();
    let (n, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 if shape[1] == 1 => (shape[0], shape[2], shape[3]),
        _ => {
            return Err(CoreError::Data(format!(
                "cannot write features of shape {:?} as IDX images",
                shape
            )))
        }
    };
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in features.data() {
        img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    std::fs::write(images_path, img)?;

    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        lab.push(l as u8);
    }
    std::fs::write(labels_path, lab)?;
    Ok(())
}
