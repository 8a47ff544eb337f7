//! Scalar abstraction over the evaluation arithmetic.
//!
//! The graph evaluator is generic over [`Scalar`]: running it on `f64` gives
//! values and gradients; running it on [`Dual`] numbers seeded with a
//! direction `v` gives, in the tangent slot of the gradient, the exact
//! Hessian-vector product `H v` (forward-over-reverse differentiation).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    /// Primal (value) part.
    fn primal(self) -> f64;
    /// Tangent part; zero for plain `f64`.
    fn tangent(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;
    /// Branch decisions (ReLU gates, max-pool argmax, log-sum-exp shifts)
    /// compare primal values only.
    fn gt_primal(self, other: Self) -> bool {
        self.primal() > other.primal()
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn primal(self) -> f64 {
        self
    }
    fn tangent(self) -> f64 {
        0.0
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// First-order dual number `v + t·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub t: f64,
}

impl Dual {
    pub fn new(v: f64, t: f64) -> Self {
        Dual { v, t }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.v + rhs.v, self.t + rhs.t)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.v - rhs.v, self.t - rhs.t)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.v * rhs.v, self.v * rhs.t + self.t * rhs.v)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let q = self.v / rhs.v;
        Dual::new(q, (self.t - q * rhs.t) / rhs.v)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.t)
    }
}

impl Scalar for Dual {
    fn zero() -> Self {
        Dual::new(0.0, 0.0)
    }
    fn one() -> Self {
        Dual::new(1.0, 0.0)
    }
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn primal(self) -> f64 {
        self.v
    }
    fn tangent(self) -> f64 {
        self.t
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.t * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.t / self.v)
    }
    fn is_finite(self) -> bool {
        self.v.is_finite() && self.t.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        // d/dx (x^2) at x=3 along t=1 is 6
        let x = Dual::new(3.0, 1.0);
        let y = x * x;
        assert_eq!(y.v, 9.0);
        assert_eq!(y.t, 6.0);
    }

    #[test]
    fn dual_chain_through_exp_ln() {
        // f(x) = ln(exp(x) + 1), f'(x) = e^x / (e^x + 1)
        let x = Dual::new(0.7, 1.0);
        let y = (x.exp() + Dual::one()).ln();
        let expect = 0.7f64.exp() / (0.7f64.exp() + 1.0);
        assert!((y.t - expect).abs() < 1e-14);
    }

    #[test]
    fn dual_division() {
        // f(x) = 1/x, f'(x) = -1/x^2
        let x = Dual::new(2.0, 1.0);
        let y = Dual::one() / x;
        assert!((y.v - 0.5).abs() < 1e-15);
        assert!((y.t + 0.25).abs() < 1e-15);
    }
}
