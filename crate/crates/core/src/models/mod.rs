//! Classifier architectures, seed-deterministic initialization, SGD
//! training, prediction, and the layer partition used by selection.

mod checkpoint;

pub use checkpoint::{Checkpoint, TrainMeta, FORMAT_VERSION};

use crate::datahub::{DatasetView, LabeledDataset};
use crate::error::{CoreError, Result};
use crate::gradcore::{
    forward_node, grad, Batch, Counts, DatasetLoss, Graph, GraphBuilder, Padding,
    ParamVector, Reduction, Targets, Tensor,
};
use crate::rng::{stream, Domain};
use crate::textkv::Section;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Mlp,
    SmallCnn,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Mlp => write!(f, "mlp"),
            Architecture::SmallCnn => write!(f, "small_cnn"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "small_cnn" => Ok(Architecture::SmallCnn),
            other => Err(CoreError::Config(format!(
                "unknown architecture `{}`",
                other
            ))),
        }
    }
}

/// How parameters group into partition segments: one segment per weight or
/// bias tensor (`fc1.weight`, `fc1.bias`, ...) or one per layer (`conv1`,
/// `fc2`, ...). MLPs default to per-tensor, the CNN to per-layer so that
/// layer selection operates on the four network layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    PerLayer,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Granularity::PerTensor => write!(f, "per_tensor"),
            Granularity::PerLayer => write!(f, "per_layer"),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_tensor" => Ok(Granularity::PerTensor),
            "per_layer" => Ok(Granularity::PerLayer),
            other => Err(CoreError::Config(format!(
                "unknown partition granularity `{}`",
                other
            ))),
        }
    }
}

/// Convolutional stack configuration for `small_cnn`: two stride-1 valid
/// convolutions, each followed by ReLU and 2x2 max-pool, then two dense
/// layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub fc_hidden: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        // 26,990 parameters on 1x28x28 inputs with 10 classes, matching the
        // scale of the reference MNIST CNN
        CnnConfig {
            conv1_channels: 8,
            conv2_channels: 12,
            kernel: 5,
            fc_hidden: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// MLP: `[input_dim, hidden..., class_count]`. Unused for the CNN.
    pub layer_sizes: Vec<usize>,
    pub cnn: Option<CnnConfig>,
    /// `[d]` for MLPs, `[channels, height, width]` for the CNN.
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub init_seed: u64,
    pub granularity: Granularity,
}

impl ModelSpec {
    pub fn mlp(layer_sizes: Vec<usize>, init_seed: u64) -> Self {
        let input = layer_sizes.first().copied().unwrap_or(0);
        let classes = layer_sizes.last().copied().unwrap_or(0);
        ModelSpec {
            architecture: Architecture::Mlp,
            layer_sizes,
            cnn: None,
            input_shape: vec![input],
            class_count: classes,
            init_seed,
            granularity: Granularity::PerTensor,
        }
    }

    pub fn small_cnn(input_shape: Vec<usize>, class_count: usize, init_seed: u64) -> Self {
        ModelSpec {
            architecture: Architecture::SmallCnn,
            layer_sizes: Vec::new(),
            cnn: Some(CnnConfig::default()),
            input_shape,
            class_count,
            init_seed,
            granularity: Granularity::PerLayer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(CoreError::Config("class_count must be at least 2".into()));
        }
        match self.architecture {
            Architecture::Mlp => {
                if self.layer_sizes.len() < 2 {
                    return Err(CoreError::Config(
                        "mlp needs at least input and output sizes".into(),
                    ));
                }
                if self.layer_sizes.iter().any(|&s| s == 0) {
                    return Err(CoreError::Config("mlp layer sizes must be positive".into()));
                }
                if *self.layer_sizes.last().unwrap() != self.class_count {
                    return Err(CoreError::Config(format!(
                        "mlp output size {} != class_count {}",
                        self.layer_sizes.last().unwrap(),
                        self.class_count
                    )));
                }
                if self.input_shape != vec![self.layer_sizes[0]] {
                    return Err(CoreError::Config(format!(
                        "mlp input_shape {:?} != [{}]",
                        self.input_shape, self.layer_sizes[0]
                    )));
                }
            }
            Architecture::SmallCnn => {
                let cfg = self
                    .cnn
                    .as_ref()
                    .ok_or_else(|| CoreError::Config("small_cnn needs a conv config".into()))?;
                if self.input_shape.len() != 3 {
                    return Err(CoreError::Config(format!(
                        "small_cnn input_shape must be [c, h, w], got {:?}",
                        self.input_shape
                    )));
                }
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                let k = cfg.kernel;
                for (name, d) in [("height", h), ("width", w)] {
                    let after1 = d.checked_sub(k - 1).ok_or_else(|| {
                        CoreError::Config(format!("kernel larger than input {}", name))
                    })?;
                    if after1 % 2 != 0 {
                        return Err(CoreError::Config(format!(
                            "{} {} leaves odd size {} before first pool",
                            name, d, after1
                        )));
                    }
                    let after2 = (after1 / 2).checked_sub(k - 1).ok_or_else(|| {
                        CoreError::Config("kernel larger than pooled map".into())
                    })?;
                    if after2 % 2 != 0 {
                        return Err(CoreError::Config(format!(
                            "{} {} leaves odd size {} before second pool",
                            name, d, after2
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Flattened feature size after the convolutional stack.
    fn cnn_flat_size(&self) -> usize {
        let cfg = self.cnn.as_ref().unwrap();
        let (h, w) = (self.input_shape[1], self.input_shape[2]);
        let h2 = ((h - cfg.kernel + 1) / 2 - cfg.kernel + 1) / 2;
        let w2 = ((w - cfg.kernel + 1) / 2 - cfg.kernel + 1) / 2;
        cfg.conv2_channels * h2 * w2
    }

    pub fn to_section(&self, name: &str) -> Section {
        let mut s = Section::new(name);
        s.set("architecture", self.architecture);
        if !self.layer_sizes.is_empty() {
            s.set(
                "layer_sizes",
                self.layer_sizes
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        if let Some(cfg) = &self.cnn {
            s.set("conv1_channels", cfg.conv1_channels);
            s.set("conv2_channels", cfg.conv2_channels);
            s.set("kernel", cfg.kernel);
            s.set("fc_hidden", cfg.fc_hidden);
        }
        s.set(
            "input_shape",
            self.input_shape
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        s.set("class_count", self.class_count);
        s.set("init_seed", self.init_seed);
        s.set("granularity", self.granularity);
        s
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        let architecture: Architecture = s.parse("architecture")?;
        let layer_sizes = if s.get("layer_sizes").is_some() {
            s.parse_list("layer_sizes")?
        } else {
            Vec::new()
        };
        let cnn = if s.get("conv1_channels").is_some() {
            Some(CnnConfig {
                conv1_channels: s.parse("conv1_channels")?,
                conv2_channels: s.parse("conv2_channels")?,
                kernel: s.parse("kernel")?,
                fc_hidden: s.parse("fc_hidden")?,
            })
        } else if architecture == Architecture::SmallCnn {
            Some(CnnConfig::default())
        } else {
            None
        };
        let spec = ModelSpec {
            architecture,
            layer_sizes,
            cnn,
            input_shape: s.parse_list("input_shape")?,
            class_count: s.parse("class_count")?,
            init_seed: s.parse("init_seed")?,
            granularity: s.parse("granularity")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

struct LayerShape {
    name: &'static str,
    weight: Vec<usize>,
    bias: usize,
    fan_in: usize,
}

fn layer_shapes(spec: &ModelSpec) -> Vec<LayerShape> {
    match spec.architecture {
        Architecture::Mlp => {
            const NAMES: [&str; 8] = ["fc1", "fc2", "fc3", "fc4", "fc5", "fc6", "fc7", "fc8"];
            spec.layer_sizes
                .windows(2)
                .enumerate()
                .map(|(i, win)| LayerShape {
                    name: NAMES[i],
                    weight: vec![win[0], win[1]],
                    bias: win[1],
                    fan_in: win[0],
                })
                .collect()
        }
        Architecture::SmallCnn => {
            let cfg = spec.cnn.as_ref().unwrap();
            let cin = spec.input_shape[0];
            let k = cfg.kernel;
            vec![
                LayerShape {
                    name: "conv1",
                    weight: vec![cfg.conv1_channels, cin, k, k],
                    bias: cfg.conv1_channels,
                    fan_in: cin * k * k,
                },
                LayerShape {
                    name: "conv2",
                    weight: vec![cfg.conv2_channels, cfg.conv1_channels, k, k],
                    bias: cfg.conv2_channels,
                    fan_in: cfg.conv1_channels * k * k,
                },
                LayerShape {
                    name: "fc1",
                    weight: vec![spec.cnn_flat_size(), cfg.fc_hidden],
                    bias: cfg.fc_hidden,
                    fan_in: spec.cnn_flat_size(),
                },
                LayerShape {
                    name: "fc2",
                    weight: vec![cfg.fc_hidden, spec.class_count],
                    bias: spec.class_count,
                    fan_in: cfg.fc_hidden,
                },
            ]
        }
    }
}

/// Builds the loss graph and the seed-deterministic initial parameters.
/// Weights draw from a scaled-uniform fan-in scheme, biases start at zero.
pub fn build(spec: &ModelSpec, reduction: Reduction) -> Result<(Graph, ParamVector)> {
    spec.validate()?;
    if spec.architecture == Architecture::Mlp && spec.layer_sizes.len() > 9 {
        return Err(CoreError::Config("mlp depth capped at 8 layers".into()));
    }
    let shapes = layer_shapes(spec);
    let mut b = GraphBuilder::new(reduction);
    let x = b.input();
    let mut params: Vec<(Vec<usize>, usize)> = Vec::new(); // (weight shape, fan_in)

    let mut cur = x;
    match spec.architecture {
        Architecture::Mlp => {
            let last = shapes.len() - 1;
            for (i, layer) in shapes.iter().enumerate() {
                let w = b.param(layer.weight.clone());
                params.push((layer.weight.clone(), layer.fan_in));
                if spec.granularity == Granularity::PerTensor {
                    b.mark_segment(&format!("{}.weight", layer.name));
                }
                let bias = b.param(vec![layer.bias]);
                params.push((vec![layer.bias], layer.fan_in));
                match spec.granularity {
                    Granularity::PerTensor => b.mark_segment(&format!("{}.bias", layer.name)),
                    Granularity::PerLayer => b.mark_segment(layer.name),
                }
                cur = b.matmul(cur, w);
                cur = b.add_bias(cur, bias);
                if i != last {
                    cur = b.relu(cur);
                }
            }
        }
        Architecture::SmallCnn => {
            for layer in &shapes[..2] {
                let w = b.param(layer.weight.clone());
                params.push((layer.weight.clone(), layer.fan_in));
                if spec.granularity == Granularity::PerTensor {
                    b.mark_segment(&format!("{}.weight", layer.name));
                }
                let bias = b.param(vec![layer.bias]);
                params.push((vec![layer.bias], layer.fan_in));
                match spec.granularity {
                    Granularity::PerTensor => b.mark_segment(&format!("{}.bias", layer.name)),
                    Granularity::PerLayer => b.mark_segment(layer.name),
                }
                cur = b.conv2d(cur, w, Padding::Valid);
                cur = b.add_bias(cur, bias);
                cur = b.relu(cur);
                cur = b.max_pool_2x2(cur);
            }
            cur = b.flatten(cur);
            for (i, layer) in shapes[2..].iter().enumerate() {
                let w = b.param(layer.weight.clone());
                params.push((layer.weight.clone(), layer.fan_in));
                if spec.granularity == Granularity::PerTensor {
                    b.mark_segment(&format!("{}.weight", layer.name));
                }
                let bias = b.param(vec![layer.bias]);
                params.push((vec![layer.bias], layer.fan_in));
                match spec.granularity {
                    Granularity::PerTensor => b.mark_segment(&format!("{}.bias", layer.name)),
                    Granularity::PerLayer => b.mark_segment(layer.name),
                }
                cur = b.matmul(cur, w);
                cur = b.add_bias(cur, bias);
                if i == 0 {
                    cur = b.relu(cur);
                }
            }
        }
    }
    let loss = b.cross_entropy(cur);
    let graph = b.finish(loss, Some(cur))?;

    // initialization draws in allocation order
    let mut rng = stream(spec.init_seed, Domain::Init, 0);
    let mut values = Vec::with_capacity(graph.param_len());
    for (shape, fan_in) in &params {
        let n: usize = shape.iter().product();
        if shape.len() == 1 {
            values.extend(std::iter::repeat(0.0).take(n)); // bias
        } else {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            for _ in 0..n {
                values.push(rng.gen_range(-bound..bound));
            }
        }
    }
    let init = ParamVector::new(values, graph.partition().clone())?;
    Ok((graph, init))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::Adam => write!(f, "adam"),
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(CoreError::Config(format!("unknown optimizer `{}`", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub reduction: Reduction,
    pub optimizer: Optimizer,
    /// Compute `‖∇L_learn(θ*)‖` over the full training view at the end so
    /// experiments can verify near-stationarity. Costs one gradient pass.
    pub grad_norm_report: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            momentum: 0.0,
            reduction: Reduction::Mean,
            optimizer: Optimizer::Sgd,
            grad_norm_report: true,
        }
    }
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Minibatch SGD (optionally with momentum, or Adam behind the flag) on the
/// given view. Returns the final parameters and the gradient-call count.
pub fn sgd_on_view(
    graph: &Graph,
    start: &ParamVector,
    view: &DatasetView<'_>,
    cfg: &TrainConfig,
) -> Result<(ParamVector, Counts, Vec<f64>)> {
    let mut params = start.clone();
    let p = params.len();
    let mut velocity = vec![0.0; p];
    let mut adam_m = vec![0.0; p];
    let mut adam_v = vec![0.0; p];
    let mut adam_t = 0u64;
    let mut grad_calls = 0u64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let n = view.len();
    if n == 0 && cfg.epochs > 0 {
        return Err(CoreError::Data("cannot train on an empty view".into()));
    }
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = view.restrict(chunk).whole_batch();
            let loss = crate::gradcore::forward(graph, &params, &batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(CoreError::TrainingDiverged { epoch, loss });
            }
            let g = grad(graph, &params, &batch)?;
            grad_calls += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    if cfg.momentum != 0.0 {
                        for ((vel, gv), pv) in velocity
                            .iter_mut()
                            .zip(g.values())
                            .zip(params.values_mut())
                        {
                            *vel = cfg.momentum * *vel + gv;
                            *pv -= cfg.lr * *vel;
                        }
                    } else {
                        params.add_scaled(&g, -cfg.lr);
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                    adam_t += 1;
                    let bc1 = 1.0 - b1.powi(adam_t as i32);
                    let bc2 = 1.0 - b2.powi(adam_t as i32);
                    for (((m, v), gv), pv) in adam_m
                        .iter_mut()
                        .zip(adam_v.iter_mut())
                        .zip(g.values())
                        .zip(params.values_mut())
                    {
                        *m = b1 * *m + (1.0 - b1) * gv;
                        *v = b2 * *v + (1.0 - b2) * gv * gv;
                        *pv -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
            epoch_loss += loss;
            batches += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        epoch_losses.push(mean_loss);
        log::debug!("epoch {}: mean minibatch loss {:.6}", epoch, mean_loss);
    }
    let counts = Counts {
        forward: grad_calls, // one forward per step, fused with the gradient pass
        grad: grad_calls,
        hvp: 0,
    };
    Ok((params, counts, epoch_losses))
}

/// Trains on the dataset's training split (retain + forget rows with
/// observed labels) and packages a checkpoint.
pub fn train(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let view = dataset.splits().train();
    train_on_view(spec, &view, cfg)
}

/// Trains on an arbitrary view (the retrain oracle trains on the corrected
/// view; fine-tuning uses the retain view).
pub fn train_on_view(
    spec: &ModelSpec,
    view: &DatasetView<'_>,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let (graph, init) = build(spec, cfg.reduction)?;
    let (params, _counts, trace) = sgd_on_view(&graph, &init, view, cfg)?;
    let grad_norm = if cfg.grad_norm_report && cfg.epochs > 0 {
        let loss = DatasetLoss::new(&graph, view);
        loss.grad(&params)?.l2_norm()
    } else {
        f64::NAN
    };
    let final_loss = trace.last().copied().unwrap_or(f64::NAN);
    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        params,
        meta: TrainMeta {
            epochs: cfg.epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            momentum: cfg.momentum,
            optimizer: cfg.optimizer,
            reduction: cfg.reduction,
            dataset_fingerprint: view.fingerprint(),
            train_rows: view.len(),
            final_loss,
            grad_norm,
        },
    })
}

/// Class predictions and softmax probabilities for a feature batch.
pub fn predict_with_graph(
    graph: &Graph,
    params: &ParamVector,
    features: &Tensor,
) -> Result<(Vec<u32>, Tensor)> {
    let logits_node = graph
        .logits_node()
        .ok_or_else(|| CoreError::Config("graph has no logits node".into()))?;
    let batch = Batch {
        features: features.clone(),
        targets: Targets::None,
    };
    let logits = forward_node(graph, params, &batch, logits_node)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = vec![0.0; n * c];
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let row = &logits.data()[r * c..(r + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &l) in row.iter().enumerate() {
            let e = (l - m).exp();
            probs[r * c + j] = e;
            z += e;
        }
        for v in &mut probs[r * c..(r + 1) * c] {
            *v /= z;
        }
        let mut best = 0usize;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        labels.push(best as u32);
    }
    Ok((labels, Tensor::new(vec![n, c], probs)?))
}

/// Convenience wrapper that rebuilds the graph from the checkpoint's spec.
pub fn predict(checkpoint: &Checkpoint, features: &Tensor) -> Result<(Vec<u32>, Tensor)> {
    let (graph, _) = build(&checkpoint.spec, checkpoint.meta.reduction)?;
    predict_with_graph(&graph, &checkpoint.params, features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_parameter_count_and_partition() {
        let spec = ModelSpec::mlp(vec![784, 100, 10], 0);
        let (graph, init) = build(&spec, Reduction::Mean).unwrap();
        assert_eq!(init.len(), 784 * 100 + 100 + 100 * 10 + 10);
        assert_eq!(init.len(), 79_510);
        let segs = graph.partition().segments();
        assert_eq!(segs.len(), 4);
        let names: Vec<&str> = segs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = ModelSpec::mlp(vec![12, 7, 3], 99);
        let (_, a) = build(&spec, Reduction::Mean).unwrap();
        let (_, b) = build(&spec, Reduction::Mean).unwrap();
        assert_eq!(a.values(), b.values());
        let spec2 = ModelSpec::mlp(vec![12, 7, 3], 100);
        let (_, c) = build(&spec2, Reduction::Mean).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn biases_start_at_zero_weights_bounded() {
        let spec = ModelSpec::mlp(vec![6, 4, 2], 1);
        let (graph, init) = build(&spec, Reduction::Mean).unwrap();
        let part = graph.partition();
        let b1 = part.by_name("fc1.bias").unwrap();
        for &v in &init.values()[b1.offset..b1.offset + b1.len] {
            assert_eq!(v, 0.0);
        }
        let w1 = part.by_name("fc1.weight").unwrap();
        let bound = 1.0 / 6.0f64.sqrt();
        for &v in &init.values()[w1.offset..w1.offset + w1.len] {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn small_cnn_matches_reference_scale() {
        let spec = ModelSpec::small_cnn(vec![1, 28, 28], 10, 0);
        let (graph, init) = build(&spec, Reduction::Mean).unwrap();
        assert!(
            (25_000..=35_000).contains(&init.len()),
            "cnn has {} parameters",
            init.len()
        );
        let names: Vec<&str> = graph
            .partition()
            .segments()
            .iter()
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(names, ["conv1", "conv2", "fc1", "fc2"]);
    }

    #[test]
    fn partition_is_stable_across_builds() {
        let spec = ModelSpec::small_cnn(vec![1, 28, 28], 10, 7);
        let (g1, _) = build(&spec, Reduction::Mean).unwrap();
        let (g2, _) = build(&spec, Reduction::Sum).unwrap();
        assert_eq!(g1.partition(), g2.partition());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = ModelSpec::mlp(vec![4, 3, 2], 5);
        let ds = crate::datahub::make_blobs(2, 10, 4, 3.0, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let ckpt = train(&spec, &ds, &cfg).unwrap();
        let (_, init) = build(&spec, cfg.reduction).unwrap();
        assert_eq!(ckpt.params.values(), init.values());
    }

    #[test]
    fn predict_probabilities_sum_to_one() {
        let spec = ModelSpec::mlp(vec![5, 8, 3], 3);
        let (graph, params) = build(&spec, Reduction::Mean).unwrap();
        let feats = Tensor::new(
            vec![4, 5],
            (0..20).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let (_, probs) = predict_with_graph(&graph, &params, &feats).unwrap();
        for r in 0..4 {
            let s: f64 = probs.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(probs.data()[r * 3..(r + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn prediction_invariant_to_logit_shift() {
        let spec = ModelSpec::mlp(vec![3, 4], 11);
        let (graph, mut params) = build(&spec, Reduction::Mean).unwrap();
        let feats =
            Tensor::new(vec![6, 3], (0..18).map(|i| (i as f64 * 0.61).cos()).collect()).unwrap();
        let (before, _) = predict_with_graph(&graph, &params, &feats).unwrap();
        // adding a constant to every output bias shifts all logits equally
        let bias_seg = graph.partition().by_name("fc1.bias").unwrap().clone();
        for v in &mut params.values_mut()[bias_seg.offset..bias_seg.offset + bias_seg.len] {
            *v += 7.5;
        }
        let (after, _) = predict_with_graph(&graph, &params, &feats).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn spec_section_round_trip() {
        for spec in [
            ModelSpec::mlp(vec![10, 6, 3], 42),
            ModelSpec::small_cnn(vec![1, 28, 28], 10, 17),
        ] {
            let s = spec.to_section("model");
            let back = ModelSpec::from_section(&s).unwrap();
            assert_eq!(spec, back);
        }
    }
}
