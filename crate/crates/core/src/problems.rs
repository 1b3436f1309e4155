//! Small entropy-carrying ODE systems used to exercise the relaxation
//! machinery without any spatial discretization.
//!
//! Both systems have the form q' = f(q) with an entropy eta(q) that is
//! exactly conserved along the flow: <eta'(q), f(q)> cancels termwise, so
//! the cancellation also holds in floating point.

use crate::relax::Entropy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdeKind {
    /// q' = (-exp(q2), exp(q1)), eta = exp(q1) + exp(q2).
    ExponentialEntropy,
    /// q' = (-sin(q2), q1), eta = q1^2/2 - cos(q2) (q1 velocity, q2 angle).
    Pendulum,
}

/// A two-component ODE with conserved entropy, its standard initial
/// condition, and the frozen Jacobian used as the implicit part of IMEX
/// splittings.
pub struct OdeProblem {
    pub name: &'static str,
    pub kind: OdeKind,
    pub q0: Vec<f64>,
    /// Row-major 2x2 linearization, frozen for the whole run.
    pub lref: [f64; 4],
}

pub fn exponential_entropy_problem() -> OdeProblem {
    OdeProblem {
        name: "exponential",
        kind: OdeKind::ExponentialEntropy,
        q0: vec![1.0, 0.5],
        // Jacobian of the right-hand side at the initial condition
        lref: [0.0, -(0.5f64.exp()), 1.0f64.exp(), 0.0],
    }
}

pub fn pendulum_problem() -> OdeProblem {
    OdeProblem {
        name: "pendulum",
        kind: OdeKind::Pendulum,
        q0: vec![1.5, 0.0],
        // small-angle linearization about the origin
        lref: [0.0, -1.0, 1.0, 0.0],
    }
}

impl OdeProblem {
    pub fn rhs(&self, q: &[f64], out: &mut [f64]) {
        match self.kind {
            OdeKind::ExponentialEntropy => {
                out[0] = -q[1].exp();
                out[1] = q[0].exp();
            }
            OdeKind::Pendulum => {
                out[0] = -q[1].sin();
                out[1] = q[0];
            }
        }
    }

    pub fn entropy(&self) -> OdeEntropy {
        OdeEntropy { kind: self.kind }
    }
}

impl crate::ark::System for OdeProblem {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, q: &[f64], out: &mut [f64]) {
        OdeProblem::rhs(self, q, out);
    }

    fn apply_l(&self, q: &[f64], out: &mut [f64]) {
        let l = &self.lref;
        out[0] = l[0] * q[0] + l[1] * q[1];
        out[1] = l[2] * q[0] + l[3] * q[1];
    }

    fn solve_shifted(&mut self, shift: f64, r: &[f64]) -> crate::Result<Vec<f64>> {
        let l = &self.lref;
        let m = [
            1.0 - shift * l[0],
            -shift * l[1],
            -shift * l[2],
            1.0 - shift * l[3],
        ];
        let det = m[0] * m[3] - m[1] * m[2];
        if det.abs() <= 1e-14 {
            return Err(crate::error::Error::SingularMatrix(format!(
                "shifted system is singular for shift {shift}"
            )));
        }
        Ok(vec![
            (m[3] * r[0] - m[1] * r[1]) / det,
            (m[0] * r[1] - m[2] * r[0]) / det,
        ])
    }
}

/// Entropy functional of an [`OdeProblem`].
#[derive(Clone, Copy)]
pub struct OdeEntropy {
    kind: OdeKind,
}

impl Entropy for OdeEntropy {
    fn eta(&self, q: &[f64]) -> f64 {
        match self.kind {
            OdeKind::ExponentialEntropy => q[0].exp() + q[1].exp(),
            OdeKind::Pendulum => 0.5 * q[0] * q[0] - q[1].cos(),
        }
    }

    fn phi(&self, q: &[f64], out: &mut [f64]) {
        match self.kind {
            OdeKind::ExponentialEntropy => {
                out[0] = q[0].exp();
                out[1] = q[1].exp();
            }
            OdeKind::Pendulum => {
                out[0] = q[0];
                out[1] = q[1].sin();
            }
        }
    }
}
