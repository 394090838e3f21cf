//! Registered scenarios and their plants.

use std::sync::Arc;

use super::config::{Gamma, ObserverPath, ScenarioConfig};
use super::HarnessError;
use crate::benchmark::{adaptive_variant, nominal_xa0, nominal_xi_a0, Circuit};
use crate::canonical::{mfn, vfn, GainChoice, ScfJet, StandardCanonicalForm};
use crate::descriptor::{Dimensions, InvertibleA22Plant, PlantOracle, SemiExplicitDescriptor};
use crate::estimation::ExtensionMode;
use crate::gpebo::LreRows;
use crate::numerics::{Matrix, Vector};

pub const CIRCUIT_BOBTSOV: &str = "circuit-bobtsov";
pub const CIRCUIT_ADAPTIVE: &str = "circuit-adaptive";
pub const SCF_STRANGENESS_FREE: &str = "synthetic-scf-strangeness-free";
pub const SCF_ZW: &str = "synthetic-scf-zw";
pub const LTV_INVERTIBLE_A22: &str = "synthetic-ltv-invertible-a22";

pub const SCENARIOS: [&str; 5] = [
    CIRCUIT_BOBTSOV,
    CIRCUIT_ADAPTIVE,
    SCF_STRANGENESS_FREE,
    SCF_ZW,
    LTV_INVERTIBLE_A22,
];

/// One-line description for `list-scenarios`.
pub fn describe(name: &str) -> &'static str {
    match name {
        CIRCUIT_BOBTSOV => "time-varying RLC circuit with negative resistances, no unknown parameter",
        CIRCUIT_ADAPTIVE => "the same circuit with one synthetic unknown parameter in the e1 row",
        SCF_STRANGENESS_FREE => "canonical form with N = 0: z_b = -f_b, z_a by GPEBO",
        SCF_ZW => "canonical form with n_b = 3: z_a by GPEBO, (z_b1, z_b2) by the unknown-input observer",
        LTV_INVERTIBLE_A22 => "small LTV descriptor with invertible A22 and one unknown parameter",
        _ => "",
    }
}

fn unknown(name: &str) -> HarnessError {
    HarnessError::UnknownScenario {
        name: name.to_string(),
        known: SCENARIOS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Registered defaults of scenario `name`.
pub fn default_config(name: &str) -> Result<ScenarioConfig, HarnessError> {
    let cfg = match name {
        CIRCUIT_BOBTSOV => ScenarioConfig {
            lambda: vec![0.1, 0.2, 0.3],
            gamma: Gamma::Scalar(1e10),
            xi_a0: nominal_xi_a0().as_slice().to_vec(),
            lre_rows: LreRows::Auto,
            ..ScenarioConfig::base(name, ObserverPath::SemiExplicitGpebo)
        },
        CIRCUIT_ADAPTIVE => ScenarioConfig {
            lambda: vec![0.1, 0.2, 0.3, 0.4],
            gamma: Gamma::Scalar(1e14),
            xi_a0: nominal_xi_a0().as_slice().to_vec(),
            theta: vec![0.5],
            lre_rows: LreRows::Auto,
            ..ScenarioConfig::base(name, ObserverPath::SemiExplicitGpebo)
        },
        LTV_INVERTIBLE_A22 => ScenarioConfig {
            lambda: vec![0.5, 1.0, 1.5],
            gamma: Gamma::Scalar(1e6),
            xi_a0: vec![0.0, 0.0],
            theta: vec![0.8],
            ..ScenarioConfig::base(name, ObserverPath::SemiExplicitGpebo)
        },
        SCF_STRANGENESS_FREE => ScenarioConfig {
            t1: 20.0,
            lambda: vec![1.0, 2.0],
            gamma: Gamma::Scalar(1e3),
            xi_a0: vec![0.0, 0.0],
            ..ScenarioConfig::base(name, ObserverPath::CanonicalStrangenessFree)
        },
        SCF_ZW => ScenarioConfig {
            t1: 40.0,
            lambda: vec![1.0, 2.0],
            gamma: Gamma::Scalar(1e3),
            xi_a0: vec![0.0, 0.0],
            gain: GainChoice::Lti,
            ..ScenarioConfig::base(name, ObserverPath::CanonicalZw)
        },
        other => return Err(unknown(other)),
    };
    Ok(ScenarioConfig {
        estimator: ExtensionMode::FilterBank,
        ..cfg
    })
}

/// Plant and model of a scenario, with the true unknowns baked in.
#[derive(Clone)]
pub enum ScenarioSystem {
    Descriptor {
        sys: SemiExplicitDescriptor,
        plant: Arc<dyn PlantOracle>,
        x_a0: Vector,
        theta: Vector,
        /// Present for the circuit scenarios.
        circuit: Option<Circuit>,
    },
    Canonical {
        scf: StandardCanonicalForm,
        z_a0: Vector,
    },
}

impl std::fmt::Debug for ScenarioSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Descriptor { sys, .. } => f.debug_tuple("Descriptor").field(&sys.dims).finish(),
            Self::Canonical { scf, .. } => f.debug_tuple("Canonical").field(scf).finish(),
        }
    }
}

pub fn build_system(cfg: &ScenarioConfig) -> Result<ScenarioSystem, HarnessError> {
    let theta_of = |q: usize| -> Result<Vector, HarnessError> {
        if cfg.theta.len() != q {
            return Err(HarnessError::Config(format!(
                "scenario {} has {q} unknown parameters, theta has {}",
                cfg.scenario,
                cfg.theta.len()
            )));
        }
        Ok(Vector::from_vec(cfg.theta.clone()))
    };
    Ok(match cfg.scenario.as_str() {
        CIRCUIT_BOBTSOV | CIRCUIT_ADAPTIVE => {
            let circuit = if cfg.scenario == CIRCUIT_BOBTSOV {
                theta_of(0)?;
                Circuit::nominal()
            } else {
                adaptive_variant(theta_of(1)?[0])
            };
            let x_a0 = nominal_xa0();
            ScenarioSystem::Descriptor {
                sys: circuit.system(),
                plant: Arc::new(circuit.plant(&x_a0)),
                x_a0,
                theta: circuit.theta_vector(),
                circuit: Some(circuit),
            }
        }
        LTV_INVERTIBLE_A22 => {
            let sys = synthetic_ltv();
            let theta = theta_of(1)?;
            let x_a0 = Vector::from_vec(vec![1.0, -0.5]);
            ScenarioSystem::Descriptor {
                plant: Arc::new(InvertibleA22Plant {
                    sys: sys.clone(),
                    theta: theta.clone(),
                    x_a0: x_a0.clone(),
                }),
                sys,
                x_a0,
                theta,
                circuit: None,
            }
        }
        SCF_STRANGENESS_FREE => {
            theta_of(0)?;
            ScenarioSystem::Canonical {
                scf: scf_strangeness_free(),
                z_a0: Vector::from_vec(vec![0.5, -0.3]),
            }
        }
        SCF_ZW => {
            theta_of(0)?;
            ScenarioSystem::Canonical {
                scf: scf_zw(),
                z_a0: Vector::from_vec(vec![0.5, -0.3]),
            }
        }
        other => return Err(unknown(other)),
    })
}

/// Two differential states, one algebraic state with invertible
/// time-varying `A22`, one unknown parameter entering both blocks.
pub fn synthetic_ltv() -> SemiExplicitDescriptor {
    SemiExplicitDescriptor::builder(Dimensions {
        n_a: 2,
        n_b: 1,
        m: 1,
        r: 1,
        q: 1,
    })
    .a11(|t| Matrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.0 - 0.2 * t.sin(), -0.1]))
    .a12(|_| Matrix::from_row_slice(2, 1, &[0.5, -0.4]))
    .a21(|t| Matrix::from_row_slice(1, 2, &[1.0, 0.3 * t.cos()]))
    .a22(|t| Matrix::from_element(1, 1, -(2.0 + t.sin())))
    .b1(|_| Matrix::from_row_slice(2, 1, &[0.0, 1.0]))
    .b2(|_| Matrix::from_element(1, 1, 0.5))
    .f1(|t| Matrix::from_row_slice(2, 1, &[(2.0 * t).cos(), 0.0]))
    .f2(|_| Matrix::from_element(1, 1, 0.2))
    .ca(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
    .cb(|_| Matrix::from_element(1, 1, 0.7))
    .input(|t| Vector::from_element(1, t.sin()))
    .build()
    .expect("synthetic blocks have consistent shapes")
}

/// Skew-symmetric `Aa` with a time-varying rate: `Φa` stays orthogonal, so
/// `z_a` neither grows nor decays and the regressor stays excited.
fn rotating_aa(t: f64) -> Matrix {
    let w = 1.0 + 0.3 * t.sin();
    Matrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0])
}

fn v(x: &[f64]) -> Vector {
    Vector::from_vec(x.to_vec())
}

fn fb(t: f64) -> Vector {
    v(&[(0.7 * t).sin(), (1.3 * t).cos(), 0.4 * t.sin()])
}

pub fn scf_strangeness_free() -> StandardCanonicalForm {
    StandardCanonicalForm {
        n_a: 2,
        n_b: 3,
        r: 1,
        aa: mfn(rotating_aa),
        n: mfn(|_| Matrix::zeros(3, 3)),
        fa: vfn(|t| v(&[t.sin(), 0.5 * t.cos()])),
        fb: vfn(fb),
        ca: mfn(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.5])),
        cb: mfn(|_| Matrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5])),
        cb_dot: None,
        jet: None,
    }
}

/// `N21 = 2`, `N31 = N32 = 1`; row 0 sees only `z_a`, row 1 carries
/// `C_w = (1, 1)`. Then `a1 = 1/2`, the constant gain is `(1/2, 1/2)` and
/// `M_w = [[−1/2, 0], [−1/2, −1]]`.
pub fn scf_zw() -> StandardCanonicalForm {
    StandardCanonicalForm {
        n_a: 2,
        n_b: 3,
        r: 2,
        aa: mfn(rotating_aa),
        n: mfn(|_| Matrix::from_row_slice(3, 3, &[0., 0., 0., 2., 0., 0., 1., 1., 0.])),
        fa: vfn(|t| v(&[t.sin(), 0.5 * t.cos()])),
        fb: vfn(fb),
        ca: mfn(|_| Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0])),
        cb: mfn(|_| Matrix::from_row_slice(2, 3, &[0., 0., 0., 1., 1., 0.])),
        cb_dot: Some(mfn(|_| Matrix::zeros(2, 3))),
        jet: Some(ScfJet {
            n_dot: mfn(|_| Matrix::zeros(3, 3)),
            fb_dot: vfn(|t| v(&[0.7 * (0.7 * t).cos(), -1.3 * (1.3 * t).sin(), 0.4 * t.cos()])),
            fb_ddot: vfn(|t| v(&[-0.49 * (0.7 * t).sin(), -1.69 * (1.3 * t).cos(), -0.4 * t.sin()])),
        }),
    }
}
