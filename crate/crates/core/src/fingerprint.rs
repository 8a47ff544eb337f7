//! Content fingerprints for artifacts and reproducibility chains.

use sha2::{Digest, Sha256};

/// Incremental SHA-256 fingerprint builder.
pub struct Fingerprint {
    hasher: Sha256,
}

impl Fingerprint {
    pub fn new(tag: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(tag.as_bytes());
        hasher.update([0u8]);
        Fingerprint { hasher }
    }

    pub fn bytes(mut self, data: &[u8]) -> Self {
        self.hasher.update((data.len() as u64).to_le_bytes());
        self.hasher.update(data);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        let b = v.to_le_bytes();
        self.bytes(&b)
    }

    pub fn f64s(mut self, vals: &[f64]) -> Self {
        self.hasher.update((vals.len() as u64).to_le_bytes());
        for v in vals {
            self.hasher.update(v.to_le_bytes());
        }
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

/// SHA-256 of a raw byte slice, hex-encoded.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
