//! Scalar abstraction for running the model math either on plain `f64` or on
//! forward-mode dual numbers.
//!
//! The gradient code is written once, generically; evaluating it over
//! [`Dual`] with the tangent seeded to a direction `v` turns the gradient
//! into an exact Hessian-vector product (forward-over-reverse).

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Minimal real-number interface used by the model implementations.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal (value) part.
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// First-order dual number: value plus directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    pub fn constant(val: f64) -> Self {
        Dual { val, dot: 0.0 }
    }

    pub fn seeded(val: f64, dot: f64) -> Self {
        Dual { val, dot }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            val: self.val + rhs.val,
            dot: self.dot + rhs.dot,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            val: self.val - rhs.val,
            dot: self.dot - rhs.dot,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            val: self.val * rhs.val,
            dot: self.val * rhs.dot + self.dot * rhs.val,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual {
            val: self.val / rhs.val,
            dot: (self.dot * rhs.val - self.val * rhs.dot) / (rhs.val * rhs.val),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            val: -self.val,
            dot: -self.dot,
        }
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        Dual {
            val: t,
            dot: self.dot * (1.0 - t * t),
        }
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        Dual {
            val: e,
            dot: self.dot * e,
        }
    }
    fn ln(self) -> Self {
        Dual {
            val: self.val.ln(),
            dot: self.dot / self.val,
        }
    }
}
