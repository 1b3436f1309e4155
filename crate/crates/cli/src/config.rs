//! Versioned JSON run configuration and its validation.
//!
//! Validation errors name the offending field (`config.dt: ...`) so bad
//! configs are diagnosable without reading source.

use serde::{Deserialize, Serialize};

use relaxrk::dg::FluxKind;
use relaxrk::mesh::MeshSpec;
use relaxrk::relax::Mode;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Exponential,
    Pendulum,
    Burgers,
}

impl ProblemId {
    pub fn is_ode(self) -> bool {
        matches!(self, ProblemId::Exponential | ProblemId::Pendulum)
    }

    pub fn label(self) -> &'static str {
        match self {
            ProblemId::Exponential => "exponential",
            ProblemId::Pendulum => "pendulum",
            ProblemId::Burgers => "burgers",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Rk2,
    Rk4,
    Ark2,
    Ark3,
    Mrk2,
}

impl SchemeId {
    pub fn label(self) -> &'static str {
        match self {
            SchemeId::Rk2 => "RK2",
            SchemeId::Rk4 => "RK4",
            SchemeId::Ark2 => "ARK2",
            SchemeId::Ark3 => "ARK3",
            SchemeId::Mrk2 => "MRK2",
        }
    }
}

/// Reference solution for convergence studies: a closed form where one
/// exists, otherwise RK4 with a step far below the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Exact,
    Rk4Fine { dt: f64 },
}

fn default_degree() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub problem: ProblemId,
    pub scheme: SchemeId,
    pub mode: Mode,
    #[serde(default)]
    pub flux: Option<FluxKind>,
    #[serde(default)]
    pub limiter: bool,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    /// Ladder of step sizes for `converge`; ignored by plain runs.
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
}

impl RunConfig {
    /// Method label in the usual relaxation-literature style, e.g.
    /// "Relaxation-ARK2".
    pub fn method_label(&self) -> String {
        match self.mode {
            Mode::Standard => self.scheme.label().to_string(),
            Mode::Relaxation => format!("Relaxation-{}", self.scheme.label()),
            Mode::Idt => format!("IDT-{}", self.scheme.label()),
        }
    }

    pub fn flux_label(&self) -> &'static str {
        match self.flux {
            Some(FluxKind::EntropyConserving) => "EC",
            Some(FluxKind::LaxFriedrichs) => "ES",
            None => "-",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.version != CONFIG_VERSION {
            errs.push(format!(
                "config.version: expected {CONFIG_VERSION}, got {}",
                self.version
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            errs.push(format!("config.dt: must be a positive number, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            errs.push(format!(
                "config.t_end: must be a nonnegative number, got {}",
                self.t_end
            ));
        }
        match self.problem {
            ProblemId::Burgers => {
                if self.flux.is_none() {
                    errs.push("config.flux: required for the burgers problem".into());
                }
                if self.mesh.is_none() {
                    errs.push("config.mesh: required for the burgers problem".into());
                }
                if !(1..=8).contains(&self.degree) {
                    errs.push(format!(
                        "config.degree: polynomial degree must be in 1..=8, got {}",
                        self.degree
                    ));
                }
                if self.scheme == SchemeId::Mrk2 {
                    if let Some(mesh) = &self.mesh {
                        if !mesh.periodic {
                            errs.push("config.mesh.periodic: mrk2 needs a periodic mesh".into());
                        }
                    }
                }
            }
            _ => {
                if self.scheme == SchemeId::Mrk2 {
                    errs.push(format!(
                        "config.scheme: mrk2 integrates the burgers problem, not {}",
                        self.problem.label()
                    ));
                }
                if self.limiter {
                    errs.push("config.limiter: only the burgers problem has a limiter".into());
                }
            }
        }
        if let Some(ladder) = &self.ladder {
            if ladder.is_empty() {
                errs.push("config.ladder: must not be empty".into());
            }
            for (i, &dt) in ladder.iter().enumerate() {
                if !(dt > 0.0) || !dt.is_finite() {
                    errs.push(format!("config.ladder[{i}]: must be positive, got {dt}"));
                }
            }
            if ladder.windows(2).any(|w| w[1] >= w[0]) {
                errs.push("config.ladder: step sizes must be strictly decreasing".into());
            }
            match self.reference {
                None => errs.push("config.reference: required when a ladder is given".into()),
                Some(ReferenceSpec::Rk4Fine { dt }) => {
                    let smallest = ladder.iter().cloned().fold(f64::INFINITY, f64::min);
                    if !(dt > 0.0) || !dt.is_finite() {
                        errs.push(format!("config.reference.dt: must be positive, got {dt}"));
                    } else if dt > smallest / 10.0 {
                        errs.push(format!(
                            "config.reference.dt: {dt} is not well below the smallest ladder step {smallest}"
                        ));
                    }
                }
                Some(ReferenceSpec::Exact) => {
                    if self.problem != ProblemId::Exponential {
                        errs.push(format!(
                            "config.reference.kind: no closed-form solution for {}",
                            self.problem.label()
                        ));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("\n"))
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub flux: Option<FluxKind>,
    pub limiter: Option<bool>,
}

pub fn load(path: &std::path::Path, over: &Overrides) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("config {}: {e}", path.display()))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| format!("config {}: {e}", path.display()))?;
    if let Some(mode) = over.mode {
        cfg.mode = mode;
    }
    if let Some(flux) = over.flux {
        cfg.flux = Some(flux);
    }
    if let Some(limiter) = over.limiter {
        cfg.limiter = limiter;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig {
            version: 1,
            problem: ProblemId::Exponential,
            scheme: SchemeId::Ark2,
            mode: Mode::Relaxation,
            flux: None,
            limiter: false,
            degree: 3,
            mesh: None,
            dt: 0.1,
            t_end: 5.0,
            seed: 0,
            ladder: None,
            reference: None,
        }
    }

    #[test]
    fn valid_ode_config_passes() {
        base().validate().unwrap();
    }

    #[test]
    fn field_paths_reported() {
        let mut cfg = base();
        cfg.dt = -0.5;
        cfg.version = 7;
        let msg = cfg.validate().unwrap_err();
        assert!(msg.contains("config.dt"), "{msg}");
        assert!(msg.contains("config.version"), "{msg}");
    }

    #[test]
    fn burgers_needs_flux_and_mesh() {
        let mut cfg = base();
        cfg.problem = ProblemId::Burgers;
        let msg = cfg.validate().unwrap_err();
        assert!(msg.contains("config.flux"), "{msg}");
        assert!(msg.contains("config.mesh"), "{msg}");
    }

    #[test]
    fn ladder_rules() {
        let mut cfg = base();
        cfg.ladder = Some(vec![1e-2, 1e-2]);
        let msg = cfg.validate().unwrap_err();
        assert!(msg.contains("strictly decreasing"), "{msg}");
        assert!(msg.contains("config.reference"), "{msg}");

        cfg.ladder = Some(vec![1e-2, 5e-3]);
        cfg.reference = Some(ReferenceSpec::Rk4Fine { dt: 1e-3 });
        let msg = cfg.validate().unwrap_err();
        assert!(msg.contains("config.reference.dt"), "{msg}");

        cfg.reference = Some(ReferenceSpec::Exact);
        cfg.validate().unwrap();
        cfg.problem = ProblemId::Pendulum;
        let msg = cfg.validate().unwrap_err();
        assert!(msg.contains("closed-form"), "{msg}");
    }

    #[test]
    fn json_roundtrip_and_unknown_fields() {
        let cfg = base();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.dt, cfg.dt);
        assert!(serde_json::from_str::<RunConfig>(
            "{\"version\":1,\"problem\":\"pendulum\",\"scheme\":\"rk4\",\"mode\":\"standard\",\"dt\":0.1,\"t_end\":1.0,\"typo\":3}"
        )
        .is_err());
    }
}
