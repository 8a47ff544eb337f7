//! Dataset-level loss evaluation with cost accounting.
//!
//! [`DatasetLoss`] evaluates a graph's loss, gradient and Hessian-vector
//! products over a whole data view. Decomposable losses are sharded into
//! fixed-size row chunks that may run on separate threads; partial results
//! are always combined in ascending chunk order, so parallel and serial
//! execution produce bit-identical results.

use crate::error::{CoreError, Result};
use crate::gradcore::eval::{self, Batch};
use crate::gradcore::graph::{Graph, Reduction};
use crate::gradcore::param::ParamVector;
use rayon::prelude::*;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

/// Supplies batches of rows `0..num_rows` on demand.
pub trait BatchSource: Sync {
    fn num_rows(&self) -> usize;
    fn make_batch(&self, rows: Range<usize>) -> Batch;
}

/// A single in-memory batch as a source.
impl BatchSource for Batch {
    fn num_rows(&self) -> usize {
        self.rows()
    }

    fn make_batch(&self, rows: Range<usize>) -> Batch {
        if rows.start == 0 && rows.end == self.rows() {
            return self.clone();
        }
        let idx: Vec<usize> = rows.collect();
        let features = self.features.select_rows(&idx);
        let targets = match &self.targets {
            eval::Targets::Classes(l) => {
                eval::Targets::Classes(idx.iter().map(|&i| l[i]).collect())
            }
            eval::Targets::Values(t) => eval::Targets::Values(t.select_rows(&idx)),
            eval::Targets::None => eval::Targets::None,
        };
        Batch { features, targets }
    }
}

/// Counts of dataset-level evaluations. One public `loss`/`grad`/`hvp` call
/// counts once regardless of internal sharding.
#[derive(Debug, Default)]
pub struct CostCounters {
    forward: AtomicU64,
    grad: AtomicU64,
    hvp: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub forward: u64,
    pub grad: u64,
    pub hvp: u64,
}

impl Counts {
    pub fn merge(self, other: Counts) -> Counts {
        Counts {
            forward: self.forward + other.forward,
            grad: self.grad + other.grad,
            hvp: self.hvp + other.hvp,
        }
    }
}

impl CostCounters {
    pub fn snapshot(&self) -> Counts {
        Counts {
            forward: self.forward.load(Ordering::Relaxed),
            grad: self.grad.load(Ordering::Relaxed),
            hvp: self.hvp.load(Ordering::Relaxed),
        }
    }

    pub fn add_forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_grad(&self) {
        self.grad.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_hvp(&self) {
        self.hvp.fetch_add(1, Ordering::Relaxed);
    }
}

/// A graph bound to a data view, exposing reduced loss/grad/hvp over the
/// full view.
pub struct DatasetLoss<'a, B: BatchSource + ?Sized> {
    graph: &'a Graph,
    source: &'a B,
    chunk_rows: usize,
    counters: CostCounters,
}

const DEFAULT_CHUNK_ROWS: usize = 256;

impl<'a, B: BatchSource + ?Sized> DatasetLoss<'a, B> {
    pub fn new(graph: &'a Graph, source: &'a B) -> Self {
        DatasetLoss {
            graph,
            source,
            chunk_rows: DEFAULT_CHUNK_ROWS,
            counters: CostCounters::default(),
        }
    }

    pub fn with_chunk_rows(mut self, rows: usize) -> Self {
        self.chunk_rows = rows.max(1);
        self
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn num_rows(&self) -> usize {
        self.source.num_rows()
    }

    /// Reduction denominator: row count under mean, 1 under sum.
    pub fn den(&self) -> f64 {
        match self.graph.reduction() {
            Reduction::Sum => 1.0,
            Reduction::Mean => self.source.num_rows().max(1) as f64,
        }
    }

    pub fn counters(&self) -> Counts {
        self.counters.snapshot()
    }

    fn chunks(&self) -> Vec<Range<usize>> {
        let n = self.source.num_rows();
        if !self.graph.decomposable() {
            return vec![0..n];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + self.chunk_rows).min(n);
            out.push(start..end);
            start = end;
        }
        if out.is_empty() {
            out.push(0..0);
        }
        out
    }

    /// Loss over the full view, reduced per the graph's reduction.
    pub fn loss(&self, params: &ParamVector) -> Result<f64> {
        self.counters.add_forward();
        self.check(params)?;
        let partials: Vec<Result<f64>> = self
            .chunks()
            .into_par_iter()
            .map(|r| {
                let batch = self.source.make_batch(r);
                eval::loss_sum(self.graph, params.values(), &batch)
            })
            .collect();
        let mut total = 0.0;
        for p in partials {
            total += p?;
        }
        Ok(total / self.den())
    }

    /// Gradient over the full view.
    pub fn grad(&self, params: &ParamVector) -> Result<ParamVector> {
        self.counters.add_grad();
        self.check(params)?;
        let partials: Vec<Result<Vec<f64>>> = self
            .chunks()
            .into_par_iter()
            .map(|r| {
                let batch = self.source.make_batch(r);
                eval::grad_sum(self.graph, params.values(), &batch)
            })
            .collect();
        self.reduce(partials)
    }

    /// Hessian-vector product over the full view.
    pub fn hvp(&self, params: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        self.counters.add_hvp();
        self.check(params)?;
        self.check(v)?;
        let partials: Vec<Result<Vec<f64>>> = self
            .chunks()
            .into_par_iter()
            .map(|r| {
                let batch = self.source.make_batch(r);
                eval::hvp_sum(self.graph, params.values(), v.values(), &batch)
            })
            .collect();
        self.reduce(partials)
    }

    fn reduce(&self, partials: Vec<Result<Vec<f64>>>) -> Result<ParamVector> {
        let mut total = vec![0.0; self.graph.param_len()];
        for p in partials {
            let p = p?;
            for (t, v) in total.iter_mut().zip(&p) {
                *t += v;
            }
        }
        let inv = 1.0 / self.den();
        for t in &mut total {
            *t *= inv;
        }
        ParamVector::new(total, self.graph.partition().clone())
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.graph.param_len() {
            return Err(CoreError::Config(format!(
                "graph expects {} parameters, got {}",
                self.graph.param_len(),
                params.len()
            )));
        }
        Ok(())
    }
}
