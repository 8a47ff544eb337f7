//! Conjugate gradient solver for symmetric positive (semi-)definite
//! systems given only a matrix-vector product.

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual `‖Ax − b‖ / ‖b‖`, recomputed at the end.
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` from `x₀ = 0`, stopping when `‖r‖ ≤ tol·‖b‖` or after
/// `max_iter` iterations.
pub fn cg_solve<F>(mut matvec: F, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let mut iterations = 0;
    let mut converged = rs_old.sqrt() <= tol * b_norm;

    while !converged && iterations < max_iter {
        let ap = matvec(&p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap.abs() < f64::MIN_POSITIVE {
            break; // direction annihilated; give up with current iterate
        }
        let alpha = rs_old / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        iterations += 1;
        if rs_new.sqrt() <= tol * b_norm {
            converged = true;
            break;
        }
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }

    let ax = matvec(&x)?;
    let true_res: f64 = ax
        .iter()
        .zip(b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(CgOutcome {
        x,
        iterations,
        rel_residual: true_res / b_norm,
        converged,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn random_spd(d: usize, seed: u64) -> Vec<Vec<f64>> {
        // B Bᵀ + I is symmetric positive definite
        let mut rng = stream(seed, Domain::Probe, 50);
        let b: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    a[i][j] += b[i][k] * b[j][k];
                }
            }
            a[i][i] += 1.0;
        }
        a
    }

    fn apply(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(v).map(|(r, x)| r * x).sum())
            .collect()
    }

    #[test]
    fn identity_system() {
        let b = vec![1.0, -2.0, 3.0];
        let out = cg_solve(|v| Ok(v.to_vec()), &b, 1e-12, 100).unwrap();
        assert!(out.converged);
        for (x, want) in out.x.iter().zip(&b) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let out = cg_solve(|v| Ok(v.to_vec()), &[0.0; 4], 1e-12, 100).unwrap();
        assert!(out.converged);
        assert_eq!(out.x, vec![0.0; 4]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn recovers_known_solution_on_random_spd_systems() {
        for seed in 0..5u64 {
            let d = 30;
            let a = random_spd(d, seed);
            let mut rng = stream(seed, Domain::Probe, 51);
            let x_true: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b = apply(&a, &x_true);
            let tol = 1e-10;
            let out = cg_solve(|v| Ok(apply(&a, v)), &b, tol, 10 * d).unwrap();
            assert!(out.converged, "seed {} did not converge", seed);
            assert!(
                out.rel_residual <= tol * 10.0,
                "seed {}: residual {}",
                seed,
                out.rel_residual
            );
            for (x, want) in out.x.iter().zip(&x_true) {
                assert!((x - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reports_non_convergence() {
        let a = random_spd(20, 9);
        let b = vec![1.0; 20];
        let out = cg_solve(|v| Ok(apply(&a, v)), &b, 1e-14, 2).unwrap();
        assert!(!out.converged);
        assert!(out.iterations <= 2);
        assert!(out.rel_residual > 1e-14);
    }
}
