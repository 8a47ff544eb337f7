//! Unlearning procedures: the forget loss, masked one-step first-order and
//! second-order updates, the fine-tuning baseline, the retrain-from-scratch
//! oracle, and the relearn attack evaluator.

mod cg;

pub use cg::{cg_solve, CgOutcome};

use crate::datahub::LabeledDataset;
use crate::error::{CoreError, Result};
use crate::gradcore::{
    BatchSource, CostCounters, Counts, DatasetLoss, Graph, ParamVector,
};
use crate::models::{
    self, predict_with_graph, Checkpoint, ModelSpec, TrainConfig,
};
use crate::rng::{stream, Domain};
use crate::selection::SelectionMask;
use rand::seq::SliceRandom;
use std::time::{Duration, Instant};

/// CG settings for the second-order solve. Damping keeps the system
/// well-posed: the training-loss Hessian at an SGD solution is typically
/// near-singular. The damping applies on the sum-reduced scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            max_iter: 200,
            tol: 1e-8,
            damping: 1e-3,
        }
    }
}

/// Hyperparameters of the unlearning procedures.
#[derive(Debug, Clone)]
pub struct ForgetLossSpec {
    /// Retain-regularizer weight of the iterative objective.
    pub lambda: f64,
    /// Fraction of the retain set sampled for the iterative objective.
    pub retain_fraction: f64,
    /// First-order step size.
    pub tau: f64,
    pub cg: CgSettings,
}

impl Default for ForgetLossSpec {
    fn default() -> Self {
        ForgetLossSpec {
            lambda: 1.0,
            retain_fraction: 0.1,
            tau: 0.05,
            cg: CgSettings::default(),
        }
    }
}

impl ForgetLossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(CoreError::Config("lambda must be >= 0".into()));
        }
        if self.tau <= 0.0 {
            return Err(CoreError::Config("tau must be > 0".into()));
        }
        if self.cg.damping < 0.0 {
            return Err(CoreError::Config("CG damping must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FirstOrder,
    SecondOrder,
    Finetune,
    Retrain,
    Iterative,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::FirstOrder => write!(f, "first_order"),
            Method::SecondOrder => write!(f, "second_order"),
            Method::Finetune => write!(f, "finetune"),
            Method::Retrain => write!(f, "retrain"),
            Method::Iterative => write!(f, "iterative"),
        }
    }
}

/// Updated parameters plus method provenance and cost counters. For masked
/// methods, coordinates outside the mask are bit-identical to the inputs.
#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub params_after: ParamVector,
    pub method: Method,
    pub mask: Option<SelectionMask>,
    pub counts: Counts,
    pub epochs: usize,
    pub degraded: bool,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub wall_clock: Duration,
}

impl UnlearnResult {
    fn check_finite(self) -> Result<Self> {
        if !self.params_after.all_finite() {
            return Err(CoreError::Numerical(format!(
                "{} produced non-finite parameters",
                self.method
            )));
        }
        Ok(self)
    }
}

/// The forget loss `L(D̃_f) − L(D_f)`: replacement rows as positive
/// samples, forgotten rows as negative samples. Each term reduces per the
/// training convention (a mean under mean reduction, a sum otherwise).
///
/// One `loss`/`grad` call goes over the samples of both sets exactly once
/// and counts once, which is what the one-step update's efficiency
/// accounting measures.
pub struct ForgetLoss<'a, B: BatchSource + ?Sized> {
    replacement: DatasetLoss<'a, B>,
    forget: DatasetLoss<'a, B>,
    counters: CostCounters,
}

impl<'a, B: BatchSource + ?Sized> ForgetLoss<'a, B> {
    /// `replacement` holds the corrected rows (may be empty for pure
    /// removal), `forget` the rows being forgotten, aligned row-wise.
    pub fn new(graph: &'a Graph, replacement: &'a B, forget: &'a B) -> Result<Self> {
        if replacement.num_rows() == 0 && forget.num_rows() == 0 {
            return Err(CoreError::Data(
                "nothing to forget: both the forget and replacement sets are empty".into(),
            ));
        }
        if replacement.num_rows() != 0 && replacement.num_rows() != forget.num_rows() {
            return Err(CoreError::Data(format!(
                "replacement set has {} rows, forget set {}",
                replacement.num_rows(),
                forget.num_rows()
            )));
        }
        Ok(ForgetLoss {
            replacement: DatasetLoss::new(graph, replacement),
            forget: DatasetLoss::new(graph, forget),
            counters: CostCounters::default(),
        })
    }

    pub fn graph(&self) -> &Graph {
        self.forget.graph()
    }

    /// Reduction denominator shared by both terms.
    pub fn den(&self) -> f64 {
        self.forget.den().max(self.replacement.den())
    }

    pub fn loss(&self, params: &ParamVector) -> Result<f64> {
        self.counters.add_forward();
        let pos = if self.replacement.num_rows() > 0 {
            self.replacement.loss(params)?
        } else {
            0.0
        };
        Ok(pos - self.forget.loss(params)?)
    }

    pub fn grad(&self, params: &ParamVector) -> Result<ParamVector> {
        self.counters.add_grad();
        let mut g = if self.replacement.num_rows() > 0 {
            self.replacement.grad(params)?
        } else {
            ParamVector::zeros(self.graph().partition().clone())
        };
        let neg = self.forget.grad(params)?;
        g.add_scaled(&neg, -1.0);
        Ok(g)
    }

    pub fn counters(&self) -> Counts {
        self.counters.snapshot()
    }
}

/// One-step first-order update: `θᵘ = θ* − τ · mask ⊙ ∇L_forget(θ*)`.
/// Exactly one forget-gradient evaluation; unmasked coordinates are never
/// written.
pub fn first_order_unlearn<B: BatchSource + ?Sized>(
    params_star: &ParamVector,
    forget: &ForgetLoss<'_, B>,
    mask: &SelectionMask,
    tau: f64,
) -> Result<UnlearnResult> {
    if tau < 0.0 {
        return Err(CoreError::Config("tau must be >= 0".into()));
    }
    if mask.len() != params_star.len() {
        return Err(CoreError::Config(format!(
            "mask over {} parameters does not fit model with {}",
            mask.len(),
            params_star.len()
        )));
    }
    let start = Instant::now();
    let before = forget.counters();
    let g = forget.grad(params_star)?;
    let mut params = params_star.clone();
    for i in mask.selected_indices() {
        params.values_mut()[i] -= tau * g.values()[i];
    }
    let after = forget.counters();
    UnlearnResult {
        params_after: params,
        method: Method::FirstOrder,
        mask: Some(mask.clone()),
        counts: Counts {
            forward: after.forward - before.forward,
            grad: after.grad - before.grad,
            hvp: 0,
        },
        epochs: 0,
        degraded: false,
        cg_iterations: 0,
        cg_residual: 0.0,
        wall_clock: start.elapsed(),
    }
    .check_finite()
}

/// One-step second-order update: solves `(H_learn + γI) s = ∇L_forget(θ*)`
/// by conjugate gradients on Hessian-vector products and steps
/// `θᵘ = θ* − mask ⊙ s`. The Hessian comes from the learning loss over
/// the full training data while the gradient comes from the forget loss
/// (not a Newton step). Both sides are brought to the sum-reduced scale so
/// the step is invariant to the training reduction convention.
///
/// CG non-convergence yields a `degraded` result with the final residual,
/// not a hard error.
pub fn second_order_unlearn<BL, BF>(
    params_star: &ParamVector,
    learn: &DatasetLoss<'_, BL>,
    forget: &ForgetLoss<'_, BF>,
    cg: &CgSettings,
    mask: Option<&SelectionMask>,
) -> Result<UnlearnResult>
where
    BL: BatchSource + ?Sized,
    BF: BatchSource + ?Sized,
{
    let start = Instant::now();
    let learn_before = learn.counters();
    let forget_before = forget.counters();

    let mut rhs = forget.grad(params_star)?;
    rhs.scale(forget.den());
    let learn_den = learn.den();
    let partition = learn.graph().partition().clone();
    let outcome = cg_solve(
        |v| {
            let vp = ParamVector::new(v.to_vec(), partition.clone())?;
            let mut hv = learn.hvp(params_star, &vp)?;
            hv.scale(learn_den);
            if cg.damping != 0.0 {
                hv.add_scaled(&vp, cg.damping);
            }
            Ok(hv.values().to_vec())
        },
        rhs.values(),
        cg.tol,
        cg.max_iter,
    )?;

    let mut params = params_star.clone();
    match mask {
        Some(m) => {
            if m.len() != params.len() {
                return Err(CoreError::Config(format!(
                    "mask over {} parameters does not fit model with {}",
                    m.len(),
                    params.len()
                )));
            }
            for i in m.selected_indices() {
                params.values_mut()[i] -= outcome.x[i];
            }
        }
        None => {
            for (p, s) in params.values_mut().iter_mut().zip(&outcome.x) {
                *p -= s;
            }
        }
    }
    let learn_after = learn.counters();
    let forget_after = forget.counters();
    UnlearnResult {
        params_after: params,
        method: Method::SecondOrder,
        mask: mask.cloned(),
        counts: Counts {
            forward: (learn_after.forward - learn_before.forward)
                + (forget_after.forward - forget_before.forward),
            grad: forget_after.grad - forget_before.grad,
            hvp: learn_after.hvp - learn_before.hvp,
        },
        epochs: 0,
        degraded: !outcome.converged,
        cg_iterations: outcome.iterations,
        cg_residual: outcome.rel_residual,
        wall_clock: start.elapsed(),
    }
    .check_finite()
}

/// Diagonal-preconditioner variant of the second-order update: with `H`
/// replaced by `diag(H)`, each selected coordinate steps by
/// `∇ᵢ / (diag(H)ᵢ + γ)` — flat coordinates get the largest effective
/// learning rate, which is the selection rule's rationale.
pub fn second_order_diag<B: BatchSource + ?Sized>(
    params_star: &ParamVector,
    diag: &ParamVector,
    learn_den: f64,
    forget: &ForgetLoss<'_, B>,
    damping: f64,
    mask: Option<&SelectionMask>,
) -> Result<UnlearnResult> {
    let start = Instant::now();
    let before = forget.counters();
    let mut g = forget.grad(params_star)?;
    g.scale(forget.den());
    let mut params = params_star.clone();
    let indices: Vec<usize> = match mask {
        Some(m) => m.selected_indices(),
        None => (0..params.len()).collect(),
    };
    for i in indices {
        let h = diag.values()[i] * learn_den + damping;
        params.values_mut()[i] -= g.values()[i] / h;
    }
    let after = forget.counters();
    UnlearnResult {
        params_after: params,
        method: Method::SecondOrder,
        mask: mask.cloned(),
        counts: Counts {
            forward: after.forward - before.forward,
            grad: after.grad - before.grad,
            hvp: 0,
        },
        epochs: 0,
        degraded: false,
        cg_iterations: 0,
        cg_residual: 0.0,
        wall_clock: start.elapsed(),
    }
    .check_finite()
}

/// Fine-tuning baseline: SGD on the retain split only, all parameters,
/// starting from θ*. Records one gradient call per minibatch step.
pub fn finetune_baseline(
    graph: &Graph,
    checkpoint: &Checkpoint,
    retain: &crate::datahub::DatasetView<'_>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<UnlearnResult> {
    if epochs == 0 {
        return Err(CoreError::Config(
            "fine-tuning needs at least one epoch".into(),
        ));
    }
    let start = Instant::now();
    let cfg = TrainConfig {
        lr,
        epochs,
        batch_size,
        seed,
        momentum: 0.0,
        reduction: checkpoint.meta.reduction,
        optimizer: models::Optimizer::Sgd,
        grad_norm_report: false,
    };
    let (params, counts, _trace) = models::sgd_on_view(graph, &checkpoint.params, retain, &cfg)?;
    UnlearnResult {
        params_after: params,
        method: Method::Finetune,
        mask: None,
        counts,
        epochs,
        degraded: false,
        cg_iterations: 0,
        cg_residual: 0.0,
        wall_clock: start.elapsed(),
    }
    .check_finite()
}

/// Retrain-from-scratch oracle: fresh initialization, full training on the
/// corrected data (`D_r ∪ D̃_f`). This is the gold reference θ̃*.
pub fn retrain_oracle(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let view = dataset.splits().unlearn_train()?;
    let mut fresh_spec = spec.clone();
    fresh_spec.init_seed = stream(cfg.seed, Domain::Init, 1).next_u64();
    models::train_on_view(&fresh_spec, &view, cfg)
}

use rand::RngCore;

#[derive(Debug, Clone)]
pub struct AttackSettings {
    /// Fraction of the forget set the adversary sees (0 < fraction ≤ 1).
    pub fraction: f64,
    pub steps: usize,
    pub lr: f64,
    /// Radius of the ℓ2 ball around θᵘ the adversary is confined to.
    pub rho: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    /// Accuracy of the poisoned labels on the full forget set before the
    /// attack (i.e. at θᵘ).
    pub recovery_before: f64,
    /// Same metric after the relearn attack.
    pub recovery_after: f64,
    pub steps: usize,
    pub subset_size: usize,
    /// Final `‖θ − θᵘ‖`.
    pub final_distance: f64,
    pub params_after: ParamVector,
}

/// Relearn attack: fine-tunes the unlearned parameters on a small subset
/// of the forget set with its original (pre-unlearn, poisoned) labels,
/// optionally projecting back onto the ℓ2 ball of radius ρ around θᵘ
/// after every step. Reports how much poisoned behavior is recovered.
pub fn relearn_attack(
    graph: &Graph,
    unlearned: &ParamVector,
    dataset: &LabeledDataset,
    settings: &AttackSettings,
) -> Result<AttackReport> {
    if !(settings.fraction > 0.0 && settings.fraction <= 1.0) {
        return Err(CoreError::Config(
            "attack fraction must be in (0, 1]".into(),
        ));
    }
    let splits = dataset.splits();
    let forget = splits.forget();
    if forget.is_empty() {
        return Err(CoreError::Data("no forget rows to attack".into()));
    }
    let subset_size = ((forget.len() as f64 * settings.fraction).ceil() as usize).max(1);
    let mut positions: Vec<usize> = (0..forget.len()).collect();
    positions.shuffle(&mut stream(settings.seed, Domain::Attack, 0));
    positions.truncate(subset_size);
    positions.sort_unstable();
    let adversary_view = forget.restrict(&positions);
    let attack_batch = adversary_view.whole_batch();

    let poisoned_accuracy = |params: &ParamVector| -> Result<f64> {
        let full = forget.whole_batch();
        let (pred, _) = predict_with_graph(graph, params, &full.features)?;
        let labels = forget.labels_vec();
        let hits = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    };

    let recovery_before = poisoned_accuracy(unlearned)?;
    let mut params = unlearned.clone();
    for _ in 0..settings.steps {
        let g = crate::gradcore::grad(graph, &params, &attack_batch)?;
        params.add_scaled(&g, -settings.lr);
        if let Some(rho) = settings.rho {
            let mut delta = params.clone();
            delta.add_scaled(unlearned, -1.0);
            let norm = delta.l2_norm();
            if norm > rho {
                let scale = if rho == 0.0 { 0.0 } else { rho / norm };
                params = unlearned.clone();
                params.add_scaled(&delta, scale);
            }
        }
    }
    let recovery_after = poisoned_accuracy(&params)?;
    let mut delta = params.clone();
    delta.add_scaled(unlearned, -1.0);
    Ok(AttackReport {
        recovery_before,
        recovery_after,
        steps: settings.steps,
        subset_size,
        final_distance: delta.l2_norm(),
        params_after: params,
    })
}

/// Iterative unlearning (flag-gated): gradient descent on
/// `L_forget + λ·L_{D'_r}` starting from θ*. The experiments use the
/// one-step updates; this path exists for the regularized objective.
pub fn iterative_unlearn<BF, BR>(
    params_star: &ParamVector,
    forget: &ForgetLoss<'_, BF>,
    retain_subset: &DatasetLoss<'_, BR>,
    lambda: f64,
    steps: usize,
    lr: f64,
    mask: Option<&SelectionMask>,
) -> Result<UnlearnResult>
where
    BF: BatchSource + ?Sized,
    BR: BatchSource + ?Sized,
{
    let start = Instant::now();
    let forget_before = forget.counters();
    let retain_before = retain_subset.counters();
    let mut params = params_star.clone();
    for _ in 0..steps {
        let mut g = forget.grad(&params)?;
        if lambda != 0.0 && retain_subset.num_rows() > 0 {
            let gr = retain_subset.grad(&params)?;
            g.add_scaled(&gr, lambda);
        }
        match mask {
            Some(m) => {
                for i in m.selected_indices() {
                    params.values_mut()[i] -= lr * g.values()[i];
                }
            }
            None => params.add_scaled(&g, -lr),
        }
    }
    let forget_after = forget.counters();
    let retain_after = retain_subset.counters();
    UnlearnResult {
        params_after: params,
        method: Method::Iterative,
        mask: mask.cloned(),
        counts: Counts {
            forward: 0,
            grad: (forget_after.grad - forget_before.grad)
                + (retain_after.grad - retain_before.grad),
            hvp: 0,
        },
        epochs: steps,
        degraded: false,
        cg_iterations: 0,
        cg_residual: 0.0,
        wall_clock: start.elapsed(),
    }
    .check_finite()
}
