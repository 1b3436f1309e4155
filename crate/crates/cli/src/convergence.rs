//! Temporal convergence studies: run a ladder of step sizes against a
//! reference solution and report errors and observed orders.
//!
//! The reference is either the closed form (exponential system only) or an
//! RK4 run with a step at least ten times below the finest ladder rung.
//! Ladder rungs are independent, so they can run on several threads; rung
//! results are assembled by index, which keeps the report identical for any
//! thread count.

use serde::{Deserialize, Serialize};

use relaxrk::ark::integrate;
use relaxrk::dg::{apply_limiter, BurgersSystem, DgGrid};
use relaxrk::mesh::build_nonuniform_mesh;
use relaxrk::multirate::{decompose, mrk2_integrate};
use relaxrk::relax::{Mode, QuadraticEntropy};
use relaxrk::tableaux::Scheme;

use crate::config::{ProblemId, ReferenceSpec, RunConfig, SchemeId};
use crate::driver::{initial_profile, ode_problem, scheme_object};
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderRow {
    pub dt: f64,
    /// Relative weighted L2 error against the reference; absent when the
    /// run failed.
    pub error: Option<f64>,
    /// Observed order against the previous rung.
    pub order: Option<f64>,
    /// Failure note for runs that did not finish.
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: u32,
    pub problem: String,
    pub scheme: String,
    pub mode: String,
    /// "EC", "ES" or "-" for the ODE problems.
    pub flux: String,
    /// Method label in table headers, e.g. "Relaxation-ARK2".
    pub label: String,
    pub t_end: f64,
    pub reference: String,
    pub rows: Vec<LadderRow>,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Standard => "standard",
        Mode::Relaxation => "relaxation",
        Mode::Idt => "idt",
    }
}

/// Closed-form solution of the exponential system. With u = exp(q1) and
/// v = exp(q2) the sum C = u + v is conserved and v' = v (C - v), so v is
/// logistic and q follows by taking logarithms.
pub fn exponential_exact(q0: &[f64], t: f64) -> Vec<f64> {
    let u0 = q0[0].exp();
    let v0 = q0[1].exp();
    let c = u0 + v0;
    let v = c / (1.0 + ((c - v0) / v0) * (-c * t).exp());
    vec![(c - v).ln(), v.ln()]
}

/// Integrates the configured problem once with the given scheme, mode and
/// step; returns the final state. Builds its own spatial objects so rungs
/// can run concurrently.
fn run_once(
    cfg: &RunConfig,
    scheme_id: SchemeId,
    mode: Mode,
    dt: f64,
) -> relaxrk::Result<Vec<f64>> {
    let scheme = scheme_object(scheme_id);
    match cfg.problem {
        ProblemId::Exponential | ProblemId::Pendulum => {
            let mut sys = ode_problem(cfg.problem).expect("ode problem");
            let ent = sys.entropy();
            let q0 = sys.q0.clone();
            let summary = integrate(
                &mut sys, &scheme, &ent, mode, &q0, cfg.t_end, dt, None, None,
            )?;
            Ok(summary.q)
        }
        ProblemId::Burgers => {
            let spec = cfg.mesh.as_ref().expect("validated for burgers");
            let grid = DgGrid::new(build_nonuniform_mesh(spec)?, cfg.degree);
            let flux = cfg.flux.expect("validated for burgers");
            let q0 = grid.project(initial_profile);
            let energy = QuadraticEntropy {
                weights: Some(grid.mass.clone()),
            };
            let lim_grid = grid.clone();
            let mut limit = move |q: &mut [f64]| apply_limiter(&lim_grid, q);
            let post: Option<&mut dyn FnMut(&mut [f64])> = if cfg.limiter {
                Some(&mut limit)
            } else {
                None
            };
            let summary = match &scheme {
                Scheme::Multirate(tabs) => {
                    let decomp = decompose(&grid.mesh.levels)?;
                    mrk2_integrate(
                        &grid, flux, &decomp, tabs, &energy, mode, &q0, cfg.t_end, dt, None, post,
                    )?
                }
                _ => {
                    let mut sys = BurgersSystem::new(grid.clone(), flux);
                    integrate(
                        &mut sys, &scheme, &energy, mode, &q0, cfg.t_end, dt, None, post,
                    )?
                }
            };
            Ok(summary.q)
        }
    }
}

/// Relative weighted L2 error: ||a - b|| / ||b||, falling back to the
/// absolute norm when the reference is (numerically) zero.
fn error_norm(cfg: &RunConfig, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (num, den) = match cfg.problem {
        ProblemId::Burgers => {
            let spec = cfg.mesh.as_ref().expect("validated for burgers");
            let grid = DgGrid::new(
                build_nonuniform_mesh(spec).expect("mesh built before"),
                cfg.degree,
            );
            (grid.inner(&d, &d).sqrt(), grid.inner(b, b).sqrt())
        }
        _ => (
            d.iter().map(|x| x * x).sum::<f64>().sqrt(),
            b.iter().map(|x| x * x).sum::<f64>().sqrt(),
        ),
    };
    if den > 1e-300 {
        num / den
    } else {
        num
    }
}

fn reference_state(cfg: &RunConfig, reference: ReferenceSpec) -> Result<Vec<f64>, CliError> {
    match reference {
        ReferenceSpec::Exact => {
            let prob = ode_problem(cfg.problem)
                .ok_or_else(|| CliError::Config("config.reference.kind: exact needs an ODE".into()))?;
            Ok(exponential_exact(&prob.q0, cfg.t_end))
        }
        ReferenceSpec::Rk4Fine { dt } => {
            run_once(cfg, SchemeId::Rk4, Mode::Standard, dt).map_err(CliError::from)
        }
    }
}

fn reference_descriptor(reference: ReferenceSpec) -> String {
    match reference {
        ReferenceSpec::Exact => "exact".to_string(),
        ReferenceSpec::Rk4Fine { dt } => format!("rk4 dt={dt:e}"),
    }
}

pub fn ladder_threads_from_env() -> usize {
    std::env::var("RELAXRK_LADDER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs the configured ladder with the given worker count. Failed rungs stay
/// in the report with a note instead of an error value.
pub fn run_ladder_with_threads(cfg: &RunConfig, threads: usize) -> Result<ConvergenceReport, CliError> {
    let ladder = cfg
        .ladder
        .clone()
        .ok_or_else(|| CliError::Config("config.ladder: required for converge".into()))?;
    let reference = cfg
        .reference
        .ok_or_else(|| CliError::Config("config.reference: required for converge".into()))?;
    let q_ref = reference_state(cfg, reference)?;

    let n = ladder.len();
    let workers = threads.max(1).min(n);
    let mut slots: Vec<Option<Result<f64, String>>> = vec![None; n];
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let ladder = &ladder;
            let q_ref = &q_ref;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = w;
                while i < n {
                    let res = run_once(cfg, cfg.scheme, cfg.mode, ladder[i])
                        .map(|q| error_norm(cfg, &q, q_ref))
                        .map_err(|e| e.to_string());
                    out.push((i, res));
                    i += workers;
                }
                out
            }));
        }
        for h in handles {
            for (i, res) in h.join().expect("ladder worker panicked") {
                slots[i] = Some(res);
            }
        }
    });

    let mut rows: Vec<LadderRow> = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        let row = match slot.expect("every rung assigned") {
            Ok(error) => LadderRow {
                dt: ladder[i],
                error: Some(error),
                order: None,
                note: None,
            },
            Err(note) => LadderRow {
                dt: ladder[i],
                error: None,
                order: None,
                note: Some(note),
            },
        };
        rows.push(row);
    }
    for i in 1..rows.len() {
        if let (Some(ep), Some(ei)) = (rows[i - 1].error, rows[i].error) {
            if ep > 0.0 && ei > 0.0 {
                rows[i].order = Some((ep / ei).ln() / (rows[i - 1].dt / rows[i].dt).ln());
            }
        }
    }

    Ok(ConvergenceReport {
        version: 1,
        problem: cfg.problem.label().to_string(),
        scheme: cfg.scheme.label().to_string(),
        mode: mode_name(cfg.mode).to_string(),
        flux: cfg.flux_label().to_string(),
        label: cfg.method_label(),
        t_end: cfg.t_end,
        reference: reference_descriptor(reference),
        rows,
    })
}

pub fn run_ladder(cfg: &RunConfig) -> Result<ConvergenceReport, CliError> {
    run_ladder_with_threads(cfg, ladder_threads_from_env())
}

#[cfg(test)]
mod tests {
    use super::*;
    use relaxrk::mesh::MeshSpec;

    fn expo_cfg() -> RunConfig {
        RunConfig {
            version: 1,
            problem: ProblemId::Exponential,
            scheme: SchemeId::Ark2,
            mode: Mode::Relaxation,
            flux: None,
            limiter: false,
            degree: 3,
            mesh: None,
            dt: 0.05,
            t_end: 1.0,
            seed: 0,
            ladder: Some(vec![0.05, 0.025, 0.0125]),
            reference: Some(ReferenceSpec::Exact),
        }
    }

    #[test]
    fn exact_solution_matches_fine_rk4() {
        let cfg = expo_cfg();
        let exact = reference_state(&cfg, ReferenceSpec::Exact).unwrap();
        let fine = reference_state(&cfg, ReferenceSpec::Rk4Fine { dt: 1e-4 }).unwrap();
        for (a, b) in exact.iter().zip(&fine) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn ladder_orders_near_two_and_thread_invariance() {
        let cfg = expo_cfg();
        let one = run_ladder_with_threads(&cfg, 1).unwrap();
        let three = run_ladder_with_threads(&cfg, 3).unwrap();
        assert_eq!(one.rows.len(), 3);
        for (a, b) in one.rows.iter().zip(&three.rows) {
            assert_eq!(a.error, b.error, "thread count changed a rung");
            assert_eq!(a.order, b.order);
        }
        assert!(one.rows[0].order.is_none());
        for row in &one.rows[1..] {
            let p = row.order.unwrap();
            assert!((p - 2.0).abs() <= 0.2, "order {p}");
        }
        assert_eq!(one.label, "Relaxation-ARK2");
        assert_eq!(one.flux, "-");
    }

    #[test]
    fn failed_rungs_are_annotated_not_fatal() {
        let mut cfg = expo_cfg();
        cfg.problem = ProblemId::Burgers;
        cfg.scheme = SchemeId::Rk2;
        cfg.mode = Mode::Standard;
        cfg.flux = Some(relaxrk::dg::FluxKind::LaxFriedrichs);
        cfg.mesh = Some(MeshSpec::uniform(-1.0, 1.0, 16));
        cfg.t_end = 1.0;
        // The first rung sits far beyond the explicit stability limit; the
        // nonlinear term then drives the iterates past the float range.
        cfg.ladder = Some(vec![0.05, 1e-3]);
        cfg.reference = Some(ReferenceSpec::Rk4Fine { dt: 1e-4 });
        let report = run_ladder_with_threads(&cfg, 2).unwrap();
        assert!(report.rows[0].error.is_none());
        assert!(report.rows[0].note.is_some(), "{:?}", report.rows[0]);
        let e1 = report.rows[1].error.unwrap();
        assert!(e1.is_finite() && e1 < 1e-2, "fine rung error {e1}");
        assert!(report.rows[1].order.is_none(), "order needs two finished rungs");
    }
}
