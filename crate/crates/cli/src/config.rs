//! Run configuration (TOML). Times in µs, rates in MHz, angles in degrees.

use serde::{Deserialize, Serialize};

use qtraj::analytics::CurveKind;
use qtraj::{PureState, Scheme, TrajectoryConfig};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub simulation: Simulation,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub capture: Option<CaptureSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub scheme: String,
    pub initial: String,
    pub trajectories: usize,
    #[serde(default = "one")]
    pub gamma_mhz: f64,
    #[serde(default = "default_dt")]
    pub dt_us: f64,
    #[serde(default = "default_t")]
    pub t_total_us: f64,
    #[serde(default)]
    pub theta_deg: f64,
    #[serde(default = "default_vartheta")]
    pub vartheta_deg: f64,
    /// Sets both detector efficiencies; `eta3` / `eta4` override it per port.
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default)]
    pub eta3: Option<f64>,
    #[serde(default)]
    pub eta4: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Curve name, `"auto"` or `"none"`.
    #[serde(default = "default_reference")]
    pub reference: String,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    /// Trajectory indices whose step-by-step record is written.
    #[serde(default)]
    pub trajectories: Vec<u64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub count: usize,
    #[serde(default)]
    pub max_trajectories: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn one() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.002
}
fn default_t() -> f64 {
    5.0
}
fn default_vartheta() -> f64 {
    90.0
}
fn default_stride() -> usize {
    10
}
fn default_reference() -> String {
    "auto".into()
}
fn default_threshold() -> f64 {
    0.999
}
fn default_bins() -> usize {
    40
}

pub fn parse(text: &str) -> Result<Config, CliError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CliError::Config(format!("{path}: {}", inner.message().trim()))
    })
}

pub fn load(path: &std::path::Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

pub fn initial_state(name: &str) -> Option<PureState> {
    Some(match name {
        "ee" => PureState::ee(),
        "eg" => PureState::eg(),
        "ge" => PureState::ge(),
        "gg" => PureState::gg(),
        "phi_plus" => PureState::phi_plus(),
        "phi_minus" => PureState::phi_minus(),
        "psi_plus" => PureState::psi_plus(),
        "psi_minus" => PureState::psi_minus(),
        _ => return None,
    })
}

impl Simulation {
    pub fn scheme(&self) -> Result<Scheme, CliError> {
        Scheme::parse(&self.scheme).ok_or_else(|| {
            field(
                "simulation.scheme",
                format!(
                    "unknown scheme `{}` (photodetection, homodyne, heterodyne, mixed_het_pd, mixed_het_discard)",
                    self.scheme
                ),
            )
        })
    }

    pub fn trajectory_config(&self) -> Result<TrajectoryConfig, CliError> {
        let scheme = self.scheme()?;
        let init = initial_state(&self.initial).ok_or_else(|| {
            field(
                "simulation.initial",
                format!(
                    "unknown state `{}` (ee, eg, ge, gg, phi_plus, phi_minus, psi_plus, psi_minus)",
                    self.initial
                ),
            )
        })?;
        if self.trajectories == 0 {
            return Err(field("simulation.trajectories", "must be >= 1"));
        }
        for (name, v) in [
            ("simulation.gamma_mhz", self.gamma_mhz),
            ("simulation.dt_us", self.dt_us),
            ("simulation.t_total_us", self.t_total_us),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, "must be a positive number"));
            }
        }
        let eta3 = self.eta3.unwrap_or(self.eta);
        let eta4 = self.eta4.unwrap_or(self.eta);
        for (name, v) in [
            ("simulation.eta", self.eta),
            ("simulation.eta3", eta3),
            ("simulation.eta4", eta4),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(field(name, "must lie in [0, 1]"));
            }
        }
        if self.snapshot_stride == 0 {
            return Err(field("simulation.snapshot_stride", "must be >= 1"));
        }
        let mut cfg = TrajectoryConfig::new(scheme, init)
            .with_time(self.dt_us, self.t_total_us)
            .with_phases(self.theta_deg.to_radians(), self.vartheta_deg.to_radians())
            .with_seed(self.seed);
        cfg.gamma = self.gamma_mhz;
        cfg.eta3 = eta3;
        cfg.eta4 = eta4;
        cfg.snapshot_stride = self.snapshot_stride;
        cfg.validate().map_err(|e| field("simulation", e))?;
        Ok(cfg)
    }

    /// Reference curve for the ensemble mean, when one is known.
    pub fn reference(
        &self,
        cfg: &TrajectoryConfig,
    ) -> Result<Option<(CurveKind, Option<f64>)>, CliError> {
        match self.reference.as_str() {
            "none" => Ok(None),
            "auto" => Ok(auto_reference(cfg, &self.initial)),
            other => {
                let kind = CurveKind::parse(other).ok_or_else(|| {
                    field("simulation.reference", format!("unknown curve `{other}`"))
                })?;
                Ok(Some((kind, Some(cfg.eta3))))
            }
        }
    }
}

fn auto_reference(cfg: &TrajectoryConfig, initial: &str) -> Option<(CurveKind, Option<f64>)> {
    let equal_eta = cfg.eta3 == cfg.eta4;
    let ideal = cfg.eta3 == 1.0 && cfg.eta4 == 1.0;
    let eta = Some(cfg.eta3);
    let quadrature_90 =
        cfg.theta == 0.0 && (cfg.vartheta - std::f64::consts::FRAC_PI_2).abs() < 1e-12;
    match (cfg.scheme, initial) {
        (Scheme::Photodetection, "ee") if equal_eta => Some((CurveKind::PdEtaAvg, eta)),
        (Scheme::Photodetection, "psi_plus" | "psi_minus") if ideal => {
            Some((CurveKind::PsiDecay, None))
        }
        (Scheme::Photodetection, "phi_plus" | "phi_minus") if ideal => {
            Some((CurveKind::PhiDecay, None))
        }
        (Scheme::Homodyne, "ee") if quadrature_90 && equal_eta => Some((CurveKind::HomEtaAvg, eta)),
        (Scheme::Homodyne, "psi_plus" | "psi_minus") if quadrature_90 && ideal => {
            Some((CurveKind::PsiDecay, None))
        }
        (Scheme::Homodyne, "phi_minus") if quadrature_90 && ideal => {
            Some((CurveKind::PhiDecay, None))
        }
        (Scheme::Homodyne, "phi_plus") if quadrature_90 && ideal => {
            Some((CurveKind::PhiPlusHom, None))
        }
        (Scheme::MixedHetPd, "psi_plus" | "psi_minus") => Some((CurveKind::PsiDecay, None)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[simulation]
scheme = "photodetection"
initial = "ee"
trajectories = 10
"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse(MINIMAL).unwrap();
        let s = &c.simulation;
        assert_eq!((s.gamma_mhz, s.dt_us, s.t_total_us), (1.0, 0.002, 5.0));
        assert_eq!(s.vartheta_deg, 90.0);
        let cfg = s.trajectory_config().unwrap();
        assert_eq!(cfg.steps(), 2500);
        assert_eq!(
            s.reference(&cfg).unwrap(),
            Some((CurveKind::PdEtaAvg, Some(1.0)))
        );
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = parse(&MINIMAL.replace("trajectories = 10", "trajectories = \"ten\""))
            .unwrap_err()
            .to_string();
        assert!(e.contains("simulation.trajectories"), "{e}");
        let e = parse(&format!("{MINIMAL}bogus = 1\n"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("bogus"), "{e}");
        let c = parse(&format!("{MINIMAL}eta = 1.5\n")).unwrap();
        let e = c.simulation.trajectory_config().unwrap_err().to_string();
        assert!(e.contains("simulation.eta"), "{e}");
        let c = parse(&MINIMAL.replace("\"ee\"", "\"xx\"")).unwrap();
        let e = c.simulation.trajectory_config().unwrap_err().to_string();
        assert!(e.contains("simulation.initial"), "{e}");
    }

    #[test]
    fn auto_reference_cases() {
        let mut c = parse(MINIMAL).unwrap().simulation;
        c.scheme = "homodyne".into();
        c.initial = "phi_plus".into();
        let cfg = c.trajectory_config().unwrap();
        assert_eq!(
            c.reference(&cfg).unwrap(),
            Some((CurveKind::PhiPlusHom, None))
        );
        c.theta_deg = 10.0;
        let cfg = c.trajectory_config().unwrap();
        assert_eq!(c.reference(&cfg).unwrap(), None);
    }
}
