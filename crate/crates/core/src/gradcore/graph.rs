//! Computation graphs over the fixed operation set.
//!
//! A graph is a topologically ordered list of operation records built once
//! per model (or per loss) and then evaluated against many batches. The
//! supported operations are a closed set: dense matmul, bias add, ReLU,
//! 2-D convolution (stride 1, valid/same padding), 2x2 max-pool, flatten,
//! fused log-softmax + NLL, plus the elementwise arithmetic needed for
//! quadratic test losses.

use crate::error::{CoreError, Result};
use crate::gradcore::param::{Partition, Segment};
use crate::gradcore::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reduction::Mean => write!(f, "mean"),
            Reduction::Sum => write!(f, "sum"),
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(CoreError::Config(format!("unknown reduction `{}`", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    /// Batch features supplied at evaluation time.
    Input,
    /// View into the flat parameter vector at `offset` with `shape`.
    Param { offset: usize, shape: Vec<usize> },
    /// Fixed tensor baked into the graph.
    Constant(Tensor),
    /// `a @ b` for rank-2 operands.
    MatMul { a: NodeId, b: NodeId },
    /// Broadcast add of a length-C vector over columns (rank 2) or channels
    /// (rank 4).
    AddBias { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise product.
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Relu { x: NodeId },
    /// Stride-1 2-D convolution; x is NCHW, kernel is [out_c, in_c, kh, kw].
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        padding: Padding,
    },
    MaxPool2x2 { x: NodeId },
    Flatten { x: NodeId },
    /// Sum of all entries, producing a scalar.
    Sum { x: NodeId },
    /// Fused log-softmax + negative log-likelihood over class targets;
    /// produces the per-batch *sum* (reduction applied by the evaluator).
    CrossEntropyLoss { logits: NodeId },
    /// Sum of squared residuals against value targets.
    SquaredErrorLoss { pred: NodeId },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Constant(_) => "constant",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2x2 { .. } => "max_pool_2x2",
            Op::Flatten { .. } => "flatten",
            Op::Sum { .. } => "sum",
            Op::CrossEntropyLoss { .. } => "cross_entropy_loss",
            Op::SquaredErrorLoss { .. } => "squared_error_loss",
        }
    }

    /// Node ids this operation reads. Every referenced id must precede the
    /// node itself, which the builder guarantees by construction.
    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Param { .. } | Op::Constant(_) => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a, b]
            }
            Op::AddBias { x, bias } => vec![x, bias],
            Op::Conv2d { x, kernel, .. } => vec![x, kernel],
            Op::Scale { x, .. }
            | Op::Relu { x }
            | Op::MaxPool2x2 { x }
            | Op::Flatten { x }
            | Op::Sum { x } => vec![x],
            Op::CrossEntropyLoss { logits } => vec![logits],
            Op::SquaredErrorLoss { pred } => vec![pred],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    pub(crate) ops: Vec<Op>,
    pub(crate) input: Option<NodeId>,
    pub(crate) loss: NodeId,
    pub(crate) logits: Option<NodeId>,
    pub(crate) reduction: Reduction,
    /// True when the loss is a sum of independent per-row terms, so dataset
    /// evaluation may shard the batch. Graphs with data-independent terms
    /// (e.g. a ridge penalty) must evaluate in a single chunk.
    pub(crate) decomposable: bool,
    pub(crate) partition: Partition,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.ops.len()
    }

    pub fn param_len(&self) -> usize {
        self.partition.total_len()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn decomposable(&self) -> bool {
        self.decomposable
    }

    pub fn logits_node(&self) -> Option<NodeId> {
        self.logits
    }

    pub fn input_node(&self) -> Option<NodeId> {
        self.input
    }

    pub fn loss_node(&self) -> NodeId {
        self.loss
    }
}

/// Builds graphs with parameters allocated sequentially from a cursor and
/// grouped into named partition segments.
pub struct GraphBuilder {
    ops: Vec<Op>,
    input: Option<NodeId>,
    reduction: Reduction,
    decomposable: bool,
    cursor: usize,
    segment_start: usize,
    segments: Vec<Segment>,
}

impl GraphBuilder {
    pub fn new(reduction: Reduction) -> Self {
        GraphBuilder {
            ops: Vec::new(),
            input: None,
            reduction,
            decomposable: true,
            cursor: 0,
            segment_start: 0,
            segments: Vec::new(),
        }
    }

    /// Marks the graph as non-decomposable (loss has data-independent terms).
    pub fn non_decomposable(&mut self) -> &mut Self {
        self.decomposable = false;
        self
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.ops.len() - 1
    }

    pub fn input(&mut self) -> NodeId {
        assert!(self.input.is_none(), "graph already has an input node");
        let id = self.push(Op::Input);
        self.input = Some(id);
        id
    }

    /// Allocates `shape` parameters at the current cursor.
    pub fn param(&mut self, shape: Vec<usize>) -> NodeId {
        let len: usize = shape.iter().product();
        let id = self.push(Op::Param {
            offset: self.cursor,
            shape,
        });
        self.cursor += len;
        id
    }

    /// Closes the current partition segment, naming all parameters
    /// allocated since the previous mark.
    pub fn mark_segment(&mut self, name: &str) {
        assert!(
            self.cursor > self.segment_start,
            "segment `{}` would be empty",
            name
        );
        self.segments.push(Segment {
            name: name.to_string(),
            offset: self.segment_start,
            len: self.cursor - self.segment_start,
        });
        self.segment_start = self.cursor;
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul { a, b })
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias { x, bias })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale { x, factor })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu { x })
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> NodeId {
        self.push(Op::Conv2d { x, kernel, padding })
    }

    pub fn max_pool_2x2(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MaxPool2x2 { x })
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten { x })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum { x })
    }

    pub fn cross_entropy(&mut self, logits: NodeId) -> NodeId {
        self.push(Op::CrossEntropyLoss { logits })
    }

    pub fn squared_error(&mut self, pred: NodeId) -> NodeId {
        self.push(Op::SquaredErrorLoss { pred })
    }

    pub fn finish(self, loss: NodeId, logits: Option<NodeId>) -> Result<Graph> {
        if self.cursor != self.segment_start {
            return Err(CoreError::Config(
                "unnamed parameters: call mark_segment after the last param".into(),
            ));
        }
        for (id, op) in self.ops.iter().enumerate() {
            for input in op.inputs() {
                if input >= id {
                    return Err(CoreError::Config(format!(
                        "node {} ({}) references node {} out of order",
                        id,
                        op.name(),
                        input
                    )));
                }
            }
        }
        if loss >= self.ops.len() {
            return Err(CoreError::Config("loss node out of range".into()));
        }
        let partition = Partition::new(self.segments)?;
        Ok(Graph {
            ops: self.ops,
            input: self.input,
            loss,
            logits,
            reduction: self.reduction,
            decomposable: self.decomposable,
            partition,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_allocates_params_and_segments() {
        let mut g = GraphBuilder::new(Reduction::Mean);
        let x = g.input();
        let w = g.param(vec![4, 3]);
        let b = g.param(vec![3]);
        g.mark_segment("fc1");
        let h = g.matmul(x, w);
        let h = g.add_bias(h, b);
        let loss = g.cross_entropy(h);
        let graph = g.finish(loss, Some(h)).unwrap();
        assert_eq!(graph.param_len(), 15);
        assert_eq!(graph.partition().segments().len(), 1);
        assert_eq!(graph.partition().segments()[0].name, "fc1");
    }

    #[test]
    fn unnamed_params_rejected() {
        let mut g = GraphBuilder::new(Reduction::Sum);
        let p = g.param(vec![2]);
        let loss = g.sum(p);
        assert!(g.finish(loss, None).is_err());
    }
}
