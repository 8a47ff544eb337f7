//! Flat parameter vectors with a named layer partition.

use crate::error::{CoreError, Result};

/// A contiguous span of the flat parameter vector belonging to one layer
/// (or one weight/bias tensor, depending on partition granularity).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, disjoint, contiguous cover of `[0, p)` in forward-pass order.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    segments: Vec<Segment>,
    total: usize,
}

impl Partition {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0usize;
        for s in &segments {
            if s.offset != cursor {
                return Err(CoreError::Config(format!(
                    "partition segment `{}` starts at {} but previous segments end at {}",
                    s.name, s.offset, cursor
                )));
            }
            if s.len == 0 {
                return Err(CoreError::Config(format!(
                    "partition segment `{}` is empty",
                    s.name
                )));
            }
            cursor += s.len;
        }
        Ok(Partition {
            segments,
            total: cursor,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn by_name(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Index of the segment containing flat parameter `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        debug_assert!(i < self.total);
        match self
            .segments
            .binary_search_by(|s| s.offset.cmp(&i))
        {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }
}

/// Flat array of 64-bit parameters plus its layer partition. Houses the
/// learned parameters, gradients, Hessian diagonals and update directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    partition: Partition,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, partition: Partition) -> Result<Self> {
        if values.len() != partition.total_len() {
            return Err(CoreError::Config(format!(
                "parameter vector has {} entries but partition covers {}",
                values.len(),
                partition.total_len()
            )));
        }
        Ok(ParamVector { values, partition })
    }

    pub fn zeros(partition: Partition) -> Self {
        let n = partition.total_len();
        ParamVector {
            values: vec![0.0; n],
            partition,
        }
    }

    /// Unit basis vector `e_i` with the same partition.
    pub fn basis(partition: Partition, i: usize) -> Self {
        let mut v = Self::zeros(partition);
        v.values[i] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, c: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.values {
            *a *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
