//! Scenario configuration. A run starts from the registered defaults of a
//! scenario, then applies a JSON override file, then CLI flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::canonical::GainChoice;
use crate::estimation::{ExtensionMode, DEFAULT_RHO_THRESHOLD};
use crate::gpebo::LreRows;
use crate::numerics::{DEFAULT_RANK_TOL, DEFAULT_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverPath {
    SemiExplicitGpebo,
    CanonicalStrangenessFree,
    CanonicalZw,
}

/// A scalar gain applied to every component, or one gain per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Scalar(f64),
    PerComponent(Vec<f64>),
}

impl Gamma {
    pub fn expand(&self, p: usize) -> Result<Vec<f64>, HarnessError> {
        let g = match self {
            Gamma::Scalar(g) => vec![*g; p],
            Gamma::PerComponent(v) if v.len() == p => v.clone(),
            Gamma::PerComponent(v) => {
                return Err(HarnessError::Config(format!(
                    "gamma has {} entries, the scenario estimates {p} unknowns",
                    v.len()
                )))
            }
        };
        if g.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(HarnessError::Config(format!(
                "gamma must be positive and finite, got {g:?}"
            )));
        }
        Ok(g)
    }

    /// Every component multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Gamma {
        match self {
            Gamma::Scalar(g) => Gamma::Scalar(g * k),
            Gamma::PerComponent(v) => Gamma::PerComponent(v.iter().map(|g| g * k).collect()),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub observer: ObserverPath,
    pub t0: f64,
    pub t1: f64,
    pub h: f64,
    pub estimator: ExtensionMode,
    pub lambda: Vec<f64>,
    pub gamma: Gamma,
    /// Initial value of the extension state `ξa(t0)`.
    pub xi_a0: Vec<f64>,
    /// Initial parameter estimate; zero when absent.
    pub eta_hat0: Option<Vec<f64>>,
    /// True parameter for scenarios with an unknown parameter.
    pub theta: Vec<f64>,
    pub rho_threshold: f64,
    pub rank_tol: f64,
    pub lre_rows: LreRows,
    pub gain: GainChoice,
    /// Error levels for the time-to-threshold metrics.
    pub epsilons: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

/// Partial configuration: every field optional. This is the schema of the
/// JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigOverrides {
    pub scenario: Option<String>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub h: Option<f64>,
    pub estimator: Option<ExtensionMode>,
    pub lambda: Option<Vec<f64>>,
    pub gamma: Option<Gamma>,
    pub xi_a0: Option<Vec<f64>>,
    pub eta_hat0: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub rho_threshold: Option<f64>,
    pub rank_tol: Option<f64>,
    pub lre_rows: Option<LreRows>,
    pub gain: Option<GainChoice>,
    pub epsilons: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("config file: {e}")))
    }

    /// Values of `self` win over `base`.
    pub fn merge_over(self, base: ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigOverrides { $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            scenario,
            t0,
            t1,
            h,
            estimator,
            lambda,
            gamma,
            xi_a0,
            eta_hat0,
            theta,
            rho_threshold,
            rank_tol,
            lre_rows,
            gain,
            epsilons,
            out_dir
        )
    }

    pub fn apply(self, mut cfg: ScenarioConfig) -> ScenarioConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            t0,
            t1,
            h,
            estimator,
            lambda,
            gamma,
            xi_a0,
            theta,
            rho_threshold,
            rank_tol,
            lre_rows,
            gain,
            epsilons
        );
        if self.eta_hat0.is_some() {
            cfg.eta_hat0 = self.eta_hat0;
        }
        if self.out_dir.is_some() {
            cfg.out_dir = self.out_dir;
        }
        cfg
    }
}

impl ScenarioConfig {
    /// Defaults shared by every scenario; the registry overrides the rest.
    pub fn base(scenario: &str, observer: ObserverPath) -> Self {
        Self {
            scenario: scenario.to_string(),
            observer,
            t0: 0.0,
            t1: 30.0,
            h: DEFAULT_STEP,
            estimator: ExtensionMode::FilterBank,
            lambda: vec![],
            gamma: Gamma::Scalar(1.0),
            xi_a0: vec![],
            eta_hat0: None,
            theta: vec![],
            rho_threshold: DEFAULT_RHO_THRESHOLD,
            rank_tol: DEFAULT_RANK_TOL,
            lre_rows: LreRows::Output,
            gain: GainChoice::Lti,
            epsilons: vec![1e-1, 1e-2, 1e-3],
            out_dir: None,
        }
    }

    /// Range and sign checks that do not depend on the system.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad(format!("step h must be positive, got {}", self.h));
        }
        if !self.t0.is_finite() || !self.t1.is_finite() || self.t1 < self.t0 {
            return bad(format!("need t1 >= t0, got t0 = {}, t1 = {}", self.t0, self.t1));
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad(format!("lambda must be non-empty and positive, got {:?}", self.lambda));
        }
        if !(self.rho_threshold > 0.0) || !(self.rank_tol > 0.0) {
            return bad("rho_threshold and rank_tol must be positive".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return bad(format!("epsilons must be positive, got {:?}", self.epsilons));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_accepts_scalar_or_list() {
        let o = ConfigOverrides::from_json(r#"{"gamma": 1e8}"#).unwrap();
        assert_eq!(o.gamma, Some(Gamma::Scalar(1e8)));
        let o = ConfigOverrides::from_json(r#"{"gamma": [1, 2, 3]}"#).unwrap();
        assert_eq!(o.gamma.unwrap().expand(3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(Gamma::PerComponent(vec![1.0]).expand(3).is_err());
        assert!(Gamma::Scalar(-1.0).expand(2).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ConfigOverrides::from_json(r#"{"gamme": 1}"#).is_err());
    }

    #[test]
    fn later_layers_win() {
        let file = ConfigOverrides::from_json(r#"{"t1": 10, "h": 0.01, "lre_rows": "auto"}"#).unwrap();
        let cli = ConfigOverrides {
            t1: Some(5.0),
            ..Default::default()
        };
        let cfg = cli
            .merge_over(file)
            .apply(ScenarioConfig::base("x", ObserverPath::SemiExplicitGpebo));
        assert_eq!((cfg.t1, cfg.h, cfg.lre_rows), (5.0, 0.01, LreRows::Auto));
    }

    #[test]
    fn explicit_rows_parse() {
        let o = ConfigOverrides::from_json(r#"{"lre_rows": {"indices": [2]}}"#).unwrap();
        assert_eq!(o.lre_rows, Some(LreRows::Indices(vec![2])));
    }
}
