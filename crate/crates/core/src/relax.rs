//! Relaxation of Runge-Kutta steps for discrete entropy control.
//!
//! A step q_n -> q_{n+1} is post-processed by moving along the update
//! direction, q_{n+gamma} = q_n + gamma (q_{n+1} - q_n), with gamma chosen
//! so that the entropy change of the numerical solution matches the
//! estimate accumulated from the stage values:
//!
//!   theta(gamma) = eta(q_n + gamma dq) - eta(q_n) - gamma S = 0,
//!
//! where S sums coef * <phi(Q), rhs(Q)> over the ledger entries recorded
//! during the step. theta(0) = 0 always; for convex eta there is exactly
//! one further root gamma* near 1. Advancing time by gamma dt (relaxation)
//! keeps the full order of the method; advancing by dt (IDT, incremental
//! direction technique) trades one order for plain bookkeeping.
//!
//! For quadratic entropies eta(q) = 1/2 <q, q>_w the root is closed-form:
//! gamma* = 2 S_num / <dq, dq>_w with S_num = sum coef <rhs, Q - q_n>_w.
//! General entropies use bracketing plus Brent's method driven to the
//! machine interval floor, so per-step residuals stay at roundoff and do
//! not accumulate over long horizons.

use crate::error::Error;
use crate::Result;

/// Entropy functional with gradient, used both for relaxation solves and
/// for reporting entropy histories.
pub trait Entropy {
    fn eta(&self, q: &[f64]) -> f64;
    /// Writes the entropy variables phi = eta'(q).
    fn phi(&self, q: &[f64], out: &mut [f64]);
    /// Quadratic entropies get the closed-form gamma.
    fn is_quadratic(&self) -> bool {
        false
    }
    /// Inner-product weights the step ledger should use, if any.
    fn weights(&self) -> Option<&[f64]> {
        None
    }
}

/// eta(q) = 1/2 sum w_i q_i^2 (unit weights when `weights` is None).
pub struct QuadraticEntropy {
    pub weights: Option<Vec<f64>>,
}

impl Entropy for QuadraticEntropy {
    fn eta(&self, q: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => 0.5 * w.iter().zip(q).map(|(w, v)| w * v * v).sum::<f64>(),
            None => 0.5 * q.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    fn phi(&self, q: &[f64], out: &mut [f64]) {
        match &self.weights {
            Some(w) => {
                for i in 0..q.len() {
                    out[i] = w[i] * q[i];
                }
            }
            None => out.copy_from_slice(q),
        }
    }

    fn is_quadratic(&self) -> bool {
        true
    }

    fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

/// How a finished step is turned into the accepted state and time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain method: accept q_{n+1}, advance by dt.
    Standard,
    /// Accept q_{n+gamma}, advance by gamma dt (order-preserving).
    Relaxation,
    /// Accept q_{n+gamma}, advance by dt (loses one order).
    Idt,
}

/// Result of a gamma solve.
#[derive(Clone, Copy, Debug)]
pub struct RelaxationOutcome {
    pub gamma: f64,
    /// |theta(gamma)| at the accepted root.
    pub residual: f64,
    /// Entropy-function evaluations spent by the root solve.
    pub iterations: u32,
    /// True when the solve failed and gamma = 1 was substituted.
    pub fallback: bool,
}

impl RelaxationOutcome {
    pub fn standard() -> Self {
        RelaxationOutcome {
            gamma: 1.0,
            residual: 0.0,
            iterations: 0,
            fallback: false,
        }
    }
}

struct Entry {
    coef: f64,
    state: usize,
    rhs: usize,
    len: usize,
    at: usize,
}

/// Record of one time step: start and end states plus (coefficient, stage
/// state, stage rhs) triples such that q_end = q_start + sum coef * rhs.
/// Entries may cover the whole state or a contiguous slice (multirate
/// schemes contribute per-element entries at their own local step sizes).
/// Stage data live in one flat arena that is reused across steps.
pub struct StageLedger {
    pub dim: usize,
    pub dt: f64,
    pub q_start: Vec<f64>,
    pub q_end: Vec<f64>,
    entries: Vec<Entry>,
    buf: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl StageLedger {
    pub fn new() -> Self {
        StageLedger {
            dim: 0,
            dt: 0.0,
            q_start: Vec::new(),
            q_end: Vec::new(),
            entries: Vec::new(),
            buf: Vec::new(),
            weights: None,
        }
    }

    /// Weights of the discrete inner product (kept across `begin` calls).
    pub fn set_weights(&mut self, weights: Option<Vec<f64>>) {
        self.weights = weights;
    }

    /// Starts recording a step from `q_start` of size `dt`.
    pub fn begin(&mut self, dt: f64, q_start: &[f64]) {
        self.dim = q_start.len();
        self.dt = dt;
        self.q_start.clear();
        self.q_start.extend_from_slice(q_start);
        self.q_end.clear();
        self.entries.clear();
        self.buf.clear();
    }

    /// Appends raw values to the arena, returning their offset. Used for
    /// both stage states and stage right-hand sides; entries reference the
    /// offsets, so a state pushed once can back several entries.
    pub fn push_vals(&mut self, vals: &[f64]) -> usize {
        let off = self.buf.len();
        self.buf.extend_from_slice(vals);
        off
    }

    /// Full-state entry: q_end accumulates coef * rhs.
    pub fn push_entry(&mut self, coef: f64, state: usize, rhs: usize) {
        let len = self.dim;
        self.entries.push(Entry { coef, state, rhs, len, at: 0 });
    }

    /// Slice entry covering `len` components starting at global index `at`.
    pub fn push_entry_at(&mut self, coef: f64, state: usize, rhs: usize, len: usize, at: usize) {
        self.entries.push(Entry { coef, state, rhs, len, at });
    }

    pub fn set_end(&mut self, q_end: &[f64]) {
        self.q_end.clear();
        self.q_end.extend_from_slice(q_end);
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    /// q_end - q_start.
    pub fn delta(&self) -> Vec<f64> {
        self.q_end
            .iter()
            .zip(&self.q_start)
            .map(|(e, s)| e - s)
            .collect()
    }

    /// Max-norm defect of q_start + sum coef * rhs against q_end.
    pub fn reconstruction_error(&self) -> f64 {
        let mut recon = self.q_start.clone();
        for e in &self.entries {
            let rhs = &self.buf[e.rhs..e.rhs + e.len];
            for i in 0..e.len {
                recon[e.at + i] += e.coef * rhs[i];
            }
        }
        recon
            .iter()
            .zip(&self.q_end)
            .map(|(r, e)| (r - e).abs())
            .fold(0.0, f64::max)
    }

    fn wdot_at(&self, at: usize, a: &[f64], b: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => (0..a.len()).map(|i| w[at + i] * a[i] * b[i]).sum(),
            None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// S_num = sum coef <rhs, Q - q_n>_w over all entries.
    pub fn snum_quadratic(&self) -> f64 {
        let mut acc = 0.0;
        for e in &self.entries {
            let state = &self.buf[e.state..e.state + e.len];
            let rhs = &self.buf[e.rhs..e.rhs + e.len];
            let mut dot = 0.0;
            match &self.weights {
                Some(w) => {
                    for i in 0..e.len {
                        dot += w[e.at + i] * rhs[i] * (state[i] - self.q_start[e.at + i]);
                    }
                }
                None => {
                    for i in 0..e.len {
                        dot += rhs[i] * (state[i] - self.q_start[e.at + i]);
                    }
                }
            }
            acc += e.coef * dot;
        }
        acc
    }

    /// Entropy production estimate S = sum coef <phi(Q), rhs>. Since phi is
    /// the full gradient of eta (weights included), the pairing is a plain
    /// dot product. Requires full-state entries.
    pub fn entropy_estimate(&self, entropy: &dyn Entropy) -> Result<f64> {
        let mut phi = vec![0.0; self.dim];
        let mut acc = 0.0;
        for e in &self.entries {
            if e.len != self.dim || e.at != 0 {
                return Err(Error::InvalidInput(
                    "general-entropy solve needs full-state ledger entries".into(),
                ));
            }
            let state = &self.buf[e.state..e.state + e.len];
            let rhs = &self.buf[e.rhs..e.rhs + e.len];
            entropy.phi(state, &mut phi);
            let dot: f64 = phi.iter().zip(rhs).map(|(p, r)| p * r).sum();
            acc += e.coef * dot;
        }
        Ok(acc)
    }
}

impl Default for StageLedger {
    fn default() -> Self {
        StageLedger::new()
    }
}

/// theta(gamma) in the cheap quadratic form
/// 1/2 gamma^2 <dq, dq>_w - gamma S_num.
pub fn theta_quadratic(ledger: &StageLedger, gamma: f64) -> f64 {
    let dq = ledger.delta();
    let dq2 = ledger.wdot_at(0, &dq, &dq);
    0.5 * gamma * gamma * dq2 - gamma * ledger.snum_quadratic()
}

/// theta(gamma) by direct evaluation of the entropy functional.
pub fn theta_general(ledger: &StageLedger, entropy: &dyn Entropy, gamma: f64) -> Result<f64> {
    let s = ledger.entropy_estimate(entropy)?;
    let dq = ledger.delta();
    let probe: Vec<f64> = ledger
        .q_start
        .iter()
        .zip(&dq)
        .map(|(q, d)| q + gamma * d)
        .collect();
    Ok(entropy.eta(&probe) - entropy.eta(&ledger.q_start) - gamma * s)
}

/// Closed-form relaxation parameter for quadratic entropies.
pub fn gamma_quadratic(ledger: &StageLedger) -> Result<RelaxationOutcome> {
    let dq = ledger.delta();
    let dq2 = ledger.wdot_at(0, &dq, &dq);
    let qn2 = ledger.wdot_at(0, &ledger.q_start, &ledger.q_start);
    if dq2 <= 1e-28 * qn2 {
        return Err(Error::DegenerateStep(format!(
            "update direction vanished: |dq|^2 = {dq2:.3e} against |q|^2 = {qn2:.3e}"
        )));
    }
    let snum = ledger.snum_quadratic();
    let gamma = 2.0 * snum / dq2;
    let residual = (0.5 * gamma * gamma * dq2 - gamma * snum).abs();
    Ok(RelaxationOutcome {
        gamma,
        residual,
        iterations: 0,
        fallback: false,
    })
}

/// Brent's method (zeroin) on a sign-changing bracket, driven to the
/// machine-precision interval floor.
fn brent_root(
    f: &mut dyn FnMut(f64) -> f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
) -> (f64, f64, u32) {
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    let mut evals = 0u32;
    for _ in 0..200 {
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-18;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return (b, fb, evals);
        }
        if e.abs() < tol || fa.abs() <= fb.abs() {
            d = m;
            e = m;
        } else {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * q0 * (q0 - r) - (b - a) * (r - 1.0));
                q = (q0 - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol {
            d
        } else if m > 0.0 {
            tol
        } else {
            -tol
        };
        fb = f(b);
        evals += 1;
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    (b, fb, evals)
}

/// Brent root of `f` on [lo, hi]; `None` when the bracket does not change
/// sign. Returns (root, f(root), function evaluations).
pub fn brent(f: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64) -> Option<(f64, f64, u32)> {
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some((lo, 0.0, 2));
    }
    if fhi == 0.0 {
        return Some((hi, 0.0, 2));
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let (root, fr, evals) = brent_root(f, lo, flo, hi, fhi);
    Some((root, fr, evals + 2))
}

/// Relaxation parameter for a general entropy functional.
///
/// theta vanishes at 0 and is negative between its roots, so the bracket
/// is grown outward from gamma = 1: if theta(1) < 0 the second root lies
/// above 1 and the upper end expands geometrically; if theta(1) > 0 it
/// lies in (0, 1) and trial lower ends walk down until theta goes
/// negative. The initial offset scales with dt since gamma* - 1 shrinks
/// with the step size.
pub fn gamma_general(ledger: &StageLedger, entropy: &dyn Entropy) -> Result<RelaxationOutcome> {
    let s = ledger.entropy_estimate(entropy)?;
    let dq = ledger.delta();
    let eta0 = entropy.eta(&ledger.q_start);
    let scale = eta0.abs().max(1.0);
    let mut probe = vec![0.0; ledger.dim];
    let mut evals = 0u32;
    let mut theta = |g: f64, evals: &mut u32| -> f64 {
        for i in 0..ledger.dim {
            probe[i] = ledger.q_start[i] + g * dq[i];
        }
        *evals += 1;
        entropy.eta(&probe) - eta0 - g * s
    };

    let f1 = theta(1.0, &mut evals);
    if f1.abs() <= 1e-15 * scale {
        return Ok(RelaxationOutcome {
            gamma: 1.0,
            residual: f1.abs(),
            iterations: evals,
            fallback: false,
        });
    }

    let w0 = (10.0 * ledger.dt).clamp(0.01, 0.5);
    let (lo, flo, hi, fhi) = if f1 < 0.0 {
        // root above 1: expand the upper end
        let mut w = w0;
        let mut b = 1.0 + w;
        let mut fb = theta(b, &mut evals);
        let mut ok = fb > 0.0;
        for _ in 0..64 {
            if ok {
                break;
            }
            w *= 2.0;
            b = 1.0 + w;
            fb = theta(b, &mut evals);
            ok = fb > 0.0;
        }
        if !ok && fb != 0.0 {
            return Err(Error::NoBracket(format!(
                "no sign change above gamma = 1 within [1, {b:.3e}]"
            )));
        }
        (1.0, f1, b, fb)
    } else {
        // root in (0, 1): walk the lower end down until theta < 0, first by
        // doubling the distance from 1, then by halving toward 0
        let mut a = 1.0 - w0;
        let mut fa = theta(a, &mut evals);
        let mut found = fa <= 0.0;
        for _ in 0..80 {
            if found {
                break;
            }
            let next = 1.0 - 2.0 * (1.0 - a);
            a = if next > 1e-13 { next } else { 0.5 * a };
            if a <= 1e-13 {
                break;
            }
            fa = theta(a, &mut evals);
            found = fa <= 0.0;
        }
        if !found {
            return Err(Error::NoBracket(
                "theta stays nonnegative on (0, 1): no relaxation root".into(),
            ));
        }
        (a, fa, 1.0, f1)
    };

    let (gamma, res, _) = brent_root(&mut |g| theta(g, &mut evals), lo, flo, hi, fhi);
    if !gamma.is_finite() {
        return Err(Error::SolverFailure("gamma solve returned non-finite".into()));
    }
    Ok(RelaxationOutcome {
        gamma,
        residual: res.abs(),
        iterations: evals,
        fallback: false,
    })
}

/// Dispatches to the closed-form or iterative gamma solve.
pub fn solve_gamma(ledger: &StageLedger, entropy: &dyn Entropy) -> Result<RelaxationOutcome> {
    if entropy.is_quadratic() {
        gamma_quadratic(ledger)
    } else {
        gamma_general(ledger, entropy)
    }
}

/// Turns a recorded step plus gamma into the accepted state and new time.
pub fn apply_completion(
    ledger: &StageLedger,
    gamma: f64,
    mode: Mode,
    t_n: f64,
) -> (Vec<f64>, f64) {
    match mode {
        Mode::Standard => (ledger.q_end.clone(), t_n + ledger.dt),
        Mode::Relaxation | Mode::Idt => {
            let q: Vec<f64> = ledger
                .q_start
                .iter()
                .zip(&ledger.q_end)
                .map(|(s, e)| s + gamma * (e - s))
                .collect();
            let t = if mode == Mode::Relaxation {
                t_n + gamma * ledger.dt
            } else {
                t_n + ledger.dt
            };
            (q, t)
        }
    }
}
