//! Closed-form ridge regression testbed.
//!
//! For squared loss with fixed features, the optimum, the Hessian, its
//! diagonal and the retrained-from-scratch optimum are all analytic, which
//! makes this module the ground-truth oracle for curvature estimation,
//! selection and the one-step second-order update: when only labels of the
//! forget rows change, the Hessians of the learn and unlearn losses
//! coincide and the second-order update is an exact Newton step onto the
//! retrained optimum.

use crate::error::{CoreError, Result};
use crate::gradcore::{Batch, Graph, GraphBuilder, ParamVector, Reduction, Targets, Tensor};
use crate::rng::{stream, Domain};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest supported feature dimension for the dense factorization.
pub const DIM_CAP: usize = 2_000;

/// Ridge problem `L(θ) = Σᵢ (xᵢᵀθ − yᵢ)² + μ‖θ‖²` (reduced per
/// `reduction`), with an optional set of forget rows whose targets get
/// replaced.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    x: Tensor, // [N, d]
    y: Vec<f64>,
    mu: f64,
    forget_rows: Vec<usize>,
    y_replacement: Vec<f64>,
    reduction: Reduction,
}

impl RidgeProblem {
    pub fn new(x: Tensor, y: Vec<f64>, mu: f64, reduction: Reduction) -> Result<Self> {
        if x.shape().len() != 2 {
            return Err(CoreError::Data(format!(
                "design matrix must be rank 2, got {:?}",
                x.shape()
            )));
        }
        if x.rows() != y.len() {
            return Err(CoreError::Data(format!(
                "{} rows vs {} targets",
                x.rows(),
                y.len()
            )));
        }
        if x.shape()[1] > DIM_CAP {
            return Err(CoreError::Config(format!(
                "dimension {} exceeds the dense-solve cap {}",
                x.shape()[1],
                DIM_CAP
            )));
        }
        if mu < 0.0 {
            return Err(CoreError::Config("ridge coefficient must be >= 0".into()));
        }
        Ok(RidgeProblem {
            x,
            y,
            mu,
            forget_rows: Vec::new(),
            y_replacement: Vec::new(),
            reduction,
        })
    }

    /// Declares which rows are forgotten and their replacement targets.
    pub fn with_forget(mut self, rows: Vec<usize>, y_new: Vec<f64>) -> Result<Self> {
        if rows.len() != y_new.len() {
            return Err(CoreError::Data(format!(
                "{} forget rows vs {} replacement targets",
                rows.len(),
                y_new.len()
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(CoreError::Data(format!("forget row {} out of range", bad)));
        }
        self.forget_rows = rows;
        self.y_replacement = y_new;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn forget_rows(&self) -> &[usize] {
        &self.forget_rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    fn den(&self) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => self.n().max(1) as f64,
        }
    }

    fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.d(), self.x.data())
    }

    fn normal_matrix(&self) -> DMatrix<f64> {
        let xm = self.design();
        let mut a = xm.transpose() * &xm;
        for i in 0..self.d() {
            a[(i, i)] += self.mu;
        }
        a
    }

    fn factorize(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        self.normal_matrix()
            .cholesky()
            .ok_or_else(|| CoreError::Numerical("XᵀX + μI is not positive definite".into()))
    }

    fn solve_rhs(&self, targets: &[f64]) -> Result<Vec<f64>> {
        let chol = self.factorize()?;
        let xm = self.design();
        let rhs = xm.transpose() * DVector::from_row_slice(targets);
        Ok(chol.solve(&rhs).as_slice().to_vec())
    }

    /// Analytic optimum `θ* = (XᵀX + μI)⁻¹ Xᵀ y` on the original targets.
    pub fn solve(&self) -> Result<Vec<f64>> {
        self.solve_rhs(&self.y)
    }

    /// Targets with forget-row replacements applied.
    pub fn corrected_targets(&self) -> Vec<f64> {
        let mut y = self.y.clone();
        for (&r, &v) in self.forget_rows.iter().zip(&self.y_replacement) {
            y[r] = v;
        }
        y
    }

    /// Retrained-from-scratch optimum `θ̃*` on the corrected targets.
    pub fn retrain_closed_form(&self) -> Result<Vec<f64>> {
        self.solve_rhs(&self.corrected_targets())
    }

    /// Same optimum via the cached factorization and a right-hand-side
    /// correction: label-only changes leave `XᵀX + μI` fixed, so
    /// `θ̃* = θ* + A⁻¹ Σ xᵢ (ỹᵢ − yᵢ)` (the rank-one-update route).
    pub fn retrain_rank_update(&self) -> Result<Vec<f64>> {
        let chol = self.factorize()?;
        let xm = self.design();
        let rhs = xm.transpose() * DVector::from_row_slice(&self.y);
        let theta = chol.solve(&rhs);
        let mut delta = DVector::zeros(self.d());
        for (&r, &v) in self.forget_rows.iter().zip(&self.y_replacement) {
            let dy = v - self.y[r];
            for j in 0..self.d() {
                delta[j] += self.x.data()[r * self.d() + j] * dy;
            }
        }
        let correction = chol.solve(&delta);
        Ok((theta + correction).as_slice().to_vec())
    }

    /// Full Hessian `2(XᵀX + μI)/den` and its diagonal.
    pub fn hessian(&self) -> (DMatrix<f64>, Vec<f64>) {
        let mut h = self.normal_matrix();
        h.scale_mut(2.0 / self.den());
        let diag = (0..self.d()).map(|i| h[(i, i)]).collect();
        (h, diag)
    }

    pub fn hessian_diag(&self) -> Vec<f64> {
        self.hessian().1
    }

    /// The equivalent gradcore graph: `input @ θ` into a squared-error loss
    /// plus the `μ‖θ‖²` penalty. The penalty is data-independent, so the
    /// graph is marked non-decomposable.
    pub fn graph(&self) -> Result<Graph> {
        let d = self.d();
        let mut b = GraphBuilder::new(self.reduction);
        b.non_decomposable();
        let x = b.input();
        let theta = b.param(vec![d, 1]);
        b.mark_segment("theta");
        let pred = b.matmul(x, theta);
        let data_loss = b.squared_error(pred);
        let loss = if self.mu > 0.0 {
            let sq = b.mul(theta, theta);
            let pen = b.sum(sq);
            let pen = b.scale(pen, self.mu);
            b.add(data_loss, pen)
        } else {
            data_loss
        };
        b.finish(loss, Some(pred))
    }

    pub fn params_from(&self, values: Vec<f64>) -> Result<ParamVector> {
        let graph = self.graph()?;
        ParamVector::new(values, graph.partition().clone())
    }

    fn batch_of(&self, rows: &[usize], targets: &[f64]) -> Batch {
        let features = self.x.select_rows(rows);
        let vals: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
        Batch {
            features,
            targets: Targets::Values(
                Tensor::new(vec![rows.len(), 1], vals).expect("targets finite"),
            ),
        }
    }

    /// Full data with original targets: the learn loss.
    pub fn learn_batch(&self) -> Batch {
        self.batch_of(&(0..self.n()).collect::<Vec<_>>(), &self.y)
    }

    /// Forget rows with original targets.
    pub fn forget_batch(&self) -> Batch {
        self.batch_of(&self.forget_rows, &self.y)
    }

    /// Forget rows with replacement targets.
    pub fn replacement_batch(&self) -> Batch {
        self.batch_of(&self.forget_rows, &self.corrected_targets())
    }

    /// Full data with corrected targets: the unlearn loss.
    pub fn unlearn_batch(&self) -> Batch {
        self.batch_of(&(0..self.n()).collect::<Vec<_>>(), &self.corrected_targets())
    }
}

/// Random well-posed problem with label-only forget changes: `N ≥ d`,
/// Gaussian design, targets from a planted parameter plus noise, a random
/// subset of rows with shifted replacement targets.
pub fn random_problem(
    d: usize,
    n: usize,
    forget: usize,
    reduction: Reduction,
    seed: u64,
) -> Result<RidgeProblem> {
    let mut rng = stream(seed, Domain::Blobs, 1);
    let x: Vec<f64> = (0..n * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let planted: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let mut v = 0.0;
        for j in 0..d {
            v += x[r * d + j] * planted[j];
        }
        y.push(v + 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let mu = rng.gen_range(1e-3..1.0);
    let mut rows: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(rows.as_mut_slice(), &mut rng);
    rows.truncate(forget);
    rows.sort_unstable();
    let y_new: Vec<f64> = rows
        .iter()
        .map(|&r| y[r] + rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    RidgeProblem::new(Tensor::new(vec![n, d], x)?, y, mu, reduction)?.with_forget(rows, y_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{self, DatasetLoss};

    fn identity_problem(mu: f64) -> RidgeProblem {
        let d = 4;
        let mut x = vec![0.0; d * d];
        for i in 0..d {
            x[i * d + i] = 1.0;
        }
        RidgeProblem::new(
            Tensor::new(vec![d, d], x).unwrap(),
            vec![1.0, -2.0, 0.5, 3.0],
            mu,
            Reduction::Sum,
        )
        .unwrap()
    }

    #[test]
    fn identity_design_recovers_targets() {
        let p = identity_problem(0.0);
        let theta = p.solve().unwrap();
        for (t, y) in theta.iter().zip(&[1.0, -2.0, 0.5, 3.0]) {
            assert!((t - y).abs() < 1e-12);
        }
    }

    #[test]
    fn solution_is_stationary() {
        let p = random_problem(12, 40, 5, Reduction::Sum, 3).unwrap();
        let theta = p.params_from(p.solve().unwrap()).unwrap();
        let graph = p.graph().unwrap();
        let g = gradcore::grad(&graph, &theta, &p.learn_batch()).unwrap();
        assert!(
            g.l2_norm() < 1e-10,
            "gradient norm at optimum: {}",
            g.l2_norm()
        );
    }

    #[test]
    fn gradient_descent_converges_to_solve() {
        let p = random_problem(6, 30, 0, Reduction::Mean, 7).unwrap();
        let graph = p.graph().unwrap();
        let batch = p.learn_batch();
        let mut theta = p.params_from(vec![0.0; 6]).unwrap();
        for _ in 0..8000 {
            let g = gradcore::grad(&graph, &theta, &batch).unwrap();
            theta.add_scaled(&g, -0.05);
        }
        let analytic = p.solve().unwrap();
        for (a, b) in theta.values().iter().zip(&analytic) {
            assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn identity_hessian_diag() {
        let p = identity_problem(0.25);
        let (h, diag) = p.hessian();
        for i in 0..4 {
            assert!((diag[i] - 2.0 * 1.25).abs() < 1e-12);
            for j in 0..4 {
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }

    #[test]
    fn hessian_matches_graph_hvp() {
        let p = random_problem(8, 25, 0, Reduction::Mean, 11).unwrap();
        let graph = p.graph().unwrap();
        let theta = p.params_from(vec![0.1; 8]).unwrap();
        let (h, _) = p.hessian();
        let batch = p.learn_batch();
        for i in 0..8 {
            let e = ParamVector::basis(graph.partition().clone(), i);
            let hv = gradcore::hvp(&graph, &theta, &batch, &e).unwrap();
            for j in 0..8 {
                assert!(
                    (hv.values()[j] - h[(j, i)]).abs() < 1e-10,
                    "H e_{} mismatch at {}",
                    i,
                    j
                );
            }
        }
    }

    #[test]
    fn replacement_equal_to_original_is_identity() {
        let p = random_problem(5, 20, 0, Reduction::Sum, 13).unwrap();
        let rows = vec![2, 7, 11];
        let y_same: Vec<f64> = rows.iter().map(|&r| p.targets()[r]).collect();
        let p = p.with_forget(rows, y_same).unwrap();
        let a = p.solve().unwrap();
        let b = p.retrain_closed_form().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_update_matches_full_resolve() {
        let base = random_problem(10, 60, 0, Reduction::Sum, 17).unwrap();
        let p = base.clone().with_forget(vec![4], vec![9.0]).unwrap();
        let full = p.retrain_closed_form().unwrap();
        let fast = p.retrain_rank_update().unwrap();
        for (a, b) in full.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn newton_step_with_exact_inverse_lands_on_retrained_optimum() {
        // fixed features mean H_unlearn == H_learn, so
        // θ* − H⁻¹ ∇L_forget(θ*) == θ̃* exactly
        let p = random_problem(8, 40, 6, Reduction::Sum, 23).unwrap();
        let graph = p.graph().unwrap();
        let theta_star = p.solve().unwrap();
        let theta = p.params_from(theta_star.clone()).unwrap();

        let pos = p.replacement_batch();
        let neg = p.forget_batch();
        let g_pos = DatasetLoss::new(&graph, &pos).grad(&theta).unwrap();
        let g_neg = DatasetLoss::new(&graph, &neg).grad(&theta).unwrap();
        let mut forget_grad = g_pos;
        forget_grad.add_scaled(&g_neg, -1.0);

        let (h, _) = p.hessian();
        let chol = h.cholesky().unwrap();
        let step = chol.solve(&DVector::from_row_slice(forget_grad.values()));

        let retrained = p.retrain_closed_form().unwrap();
        for i in 0..p.d() {
            let moved = theta_star[i] - step[i];
            assert!(
                (moved - retrained[i]).abs() < 1e-10,
                "coordinate {}: {} vs {}",
                i,
                moved,
                retrained[i]
            );
        }
    }

    #[test]
    fn dimension_cap_enforced() {
        let err = RidgeProblem::new(
            Tensor::zeros(vec![2, DIM_CAP + 1]),
            vec![0.0; 2],
            1.0,
            Reduction::Sum,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cap"));
    }
}
