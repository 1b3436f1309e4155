//! Explicit and additive (IMEX) Runge-Kutta stepping.
//!
//! Steps record their stage data in a [`StageLedger`] so the relaxation
//! layer can solve for gamma afterwards. IMEX steps split the right-hand
//! side as R(q) = L q + N(q) around a linearization L frozen at the start
//! of each step; each stage solves (I - a_ii dt L) Q_i = r_i and both the
//! stiff and nonstiff pieces enter the ledger against the same stage
//! state, so the entropy estimate sees the full additive structure.

use crate::error::Error;
use crate::relax::{apply_completion, solve_gamma, Entropy, Mode, RelaxationOutcome, StageLedger};
use crate::tableaux::{ButcherTableau, ImexPair, Scheme};
use crate::Result;

/// Right-hand side plus (optionally) a frozen linear part for implicit
/// stage solves. Purely explicit systems only implement `dim` and `rhs`.
pub trait System {
    fn dim(&self) -> usize;
    /// Full right-hand side R(q).
    fn rhs(&self, q: &[f64], out: &mut [f64]);
    /// Re-freezes the linearization at the state starting a step.
    fn refresh(&mut self, _q: &[f64]) {}
    /// out = L q for the current linearization (default: L = 0).
    fn apply_l(&self, _q: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    /// Solves (I - shift L) x = r.
    fn solve_shifted(&mut self, _shift: f64, r: &[f64]) -> Result<Vec<f64>> {
        Ok(r.to_vec())
    }
}

pub(crate) fn check_finite(q: &[f64], what: &str) -> Result<()> {
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} left the finite range")))
    }
}

/// One explicit RK step; fills `ledger` and returns q_{n+1}.
pub fn erk_step(
    sys: &dyn System,
    tab: &ButcherTableau,
    dt: f64,
    q: &[f64],
    ledger: &mut StageLedger,
) -> Result<Vec<f64>> {
    let n = q.len();
    let s = tab.s();
    ledger.begin(dt, q);
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut stage = vec![0.0; n];
    for i in 0..s {
        stage.copy_from_slice(q);
        for (j, k) in ks.iter().enumerate() {
            let a = tab.a[i][j];
            if a != 0.0 {
                for p in 0..n {
                    stage[p] += dt * a * k[p];
                }
            }
        }
        let mut k = vec![0.0; n];
        sys.rhs(&stage, &mut k);
        let soff = ledger.push_vals(&stage);
        let koff = ledger.push_vals(&k);
        ledger.push_entry(dt * tab.b[i], soff, koff);
        ks.push(k);
    }
    let mut end = q.to_vec();
    for (i, k) in ks.iter().enumerate() {
        let b = tab.b[i];
        if b != 0.0 {
            for p in 0..n {
                end[p] += dt * b * k[p];
            }
        }
    }
    check_finite(&end, "explicit step")?;
    ledger.set_end(&end);
    Ok(end)
}

/// One additive IMEX step; fills `ledger` and returns q_{n+1}.
pub fn ark_step(
    sys: &mut dyn System,
    pair: &ImexPair,
    dt: f64,
    q: &[f64],
    ledger: &mut StageLedger,
) -> Result<Vec<f64>> {
    let ex = &pair.explicit_part;
    let im = &pair.implicit_part;
    let n = q.len();
    let s = ex.s();
    ledger.begin(dt, q);
    let mut ns: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut gs: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut r = vec![0.0; n];
    let mut full = vec![0.0; n];
    for i in 0..s {
        r.copy_from_slice(q);
        for j in 0..i {
            let ae = ex.a[i][j];
            if ae != 0.0 {
                for p in 0..n {
                    r[p] += dt * ae * ns[j][p];
                }
            }
            let ai = im.a[i][j];
            if ai != 0.0 {
                for p in 0..n {
                    r[p] += dt * ai * gs[j][p];
                }
            }
        }
        let aii = im.a[i][i];
        let stage = if aii == 0.0 {
            r.clone()
        } else {
            sys.solve_shifted(dt * aii, &r)?
        };
        check_finite(&stage, "implicit stage")?;
        let mut g = vec![0.0; n];
        sys.apply_l(&stage, &mut g);
        sys.rhs(&stage, &mut full);
        let nvec: Vec<f64> = full.iter().zip(&g).map(|(f, g)| f - g).collect();
        let soff = ledger.push_vals(&stage);
        let noff = ledger.push_vals(&nvec);
        ledger.push_entry(dt * ex.b[i], soff, noff);
        let goff = ledger.push_vals(&g);
        ledger.push_entry(dt * im.b[i], soff, goff);
        ns.push(nvec);
        gs.push(g);
    }
    let mut end = q.to_vec();
    for i in 0..s {
        let (be, bi) = (ex.b[i], im.b[i]);
        for p in 0..n {
            end[p] += dt * (be * ns[i][p] + bi * gs[i][p]);
        }
    }
    check_finite(&end, "imex step")?;
    ledger.set_end(&end);
    Ok(end)
}

/// Aggregate results of a time integration.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Steps where the gamma solve failed and gamma = 1 was used instead.
    pub fallbacks: usize,
}

/// Integrates q' = R(q) from 0 to `t_end` with fixed step `dt` under the
/// given completion mode. Relaxation shortens each accepted step to
/// gamma dt, so the loop keeps taking remainder-sized steps until the end
/// time is hit to within 1e-12 (relative). `observer` sees every accepted
/// step; `post_step` may modify the accepted state (e.g. a limiter).
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    sys: &mut dyn System,
    scheme: &Scheme,
    entropy: &dyn Entropy,
    mode: Mode,
    q0: &[f64],
    t_end: f64,
    dt: f64,
    mut observer: Option<&mut dyn FnMut(usize, f64, &[f64], &RelaxationOutcome)>,
    mut post_step: Option<&mut dyn FnMut(&mut [f64])>,
) -> Result<RunSummary> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
    }
    let pair = match scheme {
        Scheme::Explicit(tab) => {
            if !tab.is_explicit() {
                return Err(Error::InvalidInput(format!(
                    "tableau {} is not explicit",
                    tab.name
                )));
            }
            None
        }
        Scheme::Imex(pair) => Some(pair),
        Scheme::Multirate(_) => {
            return Err(Error::InvalidInput(
                "multirate schemes use their own driver".into(),
            ));
        }
    };

    let mut ledger = StageLedger::new();
    ledger.set_weights(entropy.weights().map(|w| w.to_vec()));

    let mut q = q0.to_vec();
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut gamma_min = f64::INFINITY;
    let mut gamma_max = f64::NEG_INFINITY;
    let mut fallbacks = 0usize;
    let tol_t = 1e-12 * t_end.abs().max(1.0);
    let max_steps = 4 * ((t_end / dt).ceil().max(1.0) as usize) + 64;

    // Relaxation advances by gamma dt, so remainder-sized steps (signed:
    // gamma > 1 can overshoot slightly) walk t onto t_end; the offset
    // shrinks by |1 - gamma| per tail step.
    while (t_end - t).abs() > tol_t {
        if steps >= max_steps {
            return Err(Error::SolverFailure(format!(
                "step budget exhausted at t = {t} (gamma collapsing?)"
            )));
        }
        let rem = t_end - t;
        let dt_step = if rem.abs() < dt { rem } else { dt };
        sys.refresh(&q);
        match (&pair, scheme) {
            (Some(p), _) => ark_step(sys, p, dt_step, &q, &mut ledger)?,
            (None, Scheme::Explicit(tab)) => erk_step(&*sys, tab, dt_step, &q, &mut ledger)?,
            _ => unreachable!(),
        };
        let outcome = if mode == Mode::Standard {
            RelaxationOutcome::standard()
        } else {
            match solve_gamma(&ledger, entropy) {
                Ok(o) => o,
                Err(Error::DegenerateStep(_)) | Err(Error::NoBracket(_)) => {
                    fallbacks += 1;
                    RelaxationOutcome {
                        gamma: 1.0,
                        residual: 0.0,
                        iterations: 0,
                        fallback: true,
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let (mut q_new, t_new) = apply_completion(&ledger, outcome.gamma, mode, t);
        if let Some(ps) = post_step.as_mut() {
            ps(&mut q_new);
        }
        check_finite(&q_new, "accepted state")?;
        gamma_min = gamma_min.min(outcome.gamma);
        gamma_max = gamma_max.max(outcome.gamma);
        steps += 1;
        if let Some(obs) = observer.as_mut() {
            obs(steps, t_new, &q_new, &outcome);
        }
        q = q_new;
        t = t_new;
    }

    if steps == 0 {
        gamma_min = 1.0;
        gamma_max = 1.0;
    }
    Ok(RunSummary {
        steps,
        t,
        q,
        gamma_min,
        gamma_max,
        fallbacks,
    })
}
