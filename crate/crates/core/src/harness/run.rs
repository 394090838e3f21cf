//! Assumption audit, the composite fixed-step loop, and run metrics.

use std::cell::RefCell;

use serde::Serialize;

use super::config::{ObserverPath, ScenarioConfig};
use super::model::{guarded, CanonicalModel, DescriptorModel, Model, Record};
use super::scenarios::{build_system, ScenarioSystem};
use super::HarnessError;
use crate::benchmark::nominal_xb0;
use crate::canonical::{
    build_zw_system, check_exponential_stability, linear_fit_slope, lw_lti, select_output_row_za, select_output_row_zw,
    validate_scf, GainChoice, StabilityReport, ZaExtension, ZwObserver, DEFAULT_STABILITY_MARGIN,
};
use crate::descriptor::check_impulse_observability_grid;
use crate::estimation::{drem_mix, EstimatorState, ExcitationAccumulator, ExcitationReport, ExtensionFilters};
use crate::numerics::{grid_time, rank, rk4_step, step_count, Vector};

/// Cutoff above which `Φ` is flagged as numerically singular.
pub const PHI_CONDITION_LIMIT: f64 = 1e12;
/// Heuristic stability bound on `γ Δ² h` for an explicit update.
pub const STIFFNESS_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub pass: bool,
    /// A failing required check aborts the run.
    pub required: bool,
    pub detail: String,
}

impl AssumptionCheck {
    fn new(name: &str, pass: bool, required: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            required,
            detail,
        }
    }
}

/// Audit outcome plus what the run needs from it.
#[derive(Debug, Clone)]
pub struct Audit {
    pub checks: Vec<AssumptionCheck>,
    pub rows: Vec<usize>,
    pub zw: Option<(ZwObserver, StabilityReport)>,
}

impl Audit {
    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| c.required && !c.pass).collect()
    }
}

/// Evaluates every assumption the scenario relies on, without estimating.
pub fn audit(cfg: &ScenarioConfig, system: &ScenarioSystem) -> Result<Audit, HarnessError> {
    cfg.validate()?;
    let (t0, t1, h) = (cfg.t0, cfg.t1, cfg.h);
    let mut checks = Vec::new();
    let mut zw = None;
    let rows = match system {
        ScenarioSystem::Descriptor { sys, x_a0, circuit, .. } => {
            let rep = check_impulse_observability_grid(sys, t0, t1, h, cfg.rank_tol)?;
            checks.push(AssumptionCheck::new(
                "impulse-observability",
                rep.pass,
                true,
                format!(
                    "min eig of Ab'Ab on the grid = {:e}; first failure at {:?}; lti rank test {:?}",
                    rep.min_gram_eig, rep.first_failure, rep.lti_rank
                ),
            ));
            let c = sys.output_matrix(t0);
            let rk = rank(&c, 1e-10);
            checks.push(AssumptionCheck::new(
                "output-full-row-rank",
                rk == sys.dims.r,
                true,
                format!("rank C(t0) = {rk}, r = {}", sys.dims.r),
            ));
            if let Some(circuit) = circuit {
                let rep = circuit.consistency_check(x_a0, &nominal_xb0(), t0);
                checks.push(AssumptionCheck::new(
                    "initial-consistency",
                    rep.pass,
                    true,
                    format!(
                        "max algebraic-row residual = {:e}; i_v(t0) minus the value forced by e1 = -u: {}",
                        rep.max_abs, rep.hidden_i_v_residual
                    ),
                ));
            }
            if !rep.pass {
                return Ok(Audit {
                    checks,
                    rows: vec![],
                    zw,
                });
            }
            let rows = cfg.lre_rows.resolve(sys, t0, cfg.rank_tol)?;
            let k = sys.dims.n_b + sys.dims.r;
            if rows.is_empty() || rows.iter().any(|&i| i >= k) {
                return Err(HarnessError::Config(format!(
                    "regression rows {rows:?} out of range 0..{k}"
                )));
            }
            rows
        }
        ScenarioSystem::Canonical { scf, .. } => {
            let rep = validate_scf(scf, t0, t1, h, 1e-9)?;
            checks.push(AssumptionCheck::new(
                "lower-triangular-n",
                rep.strictly_lower,
                true,
                if rep.strictly_lower {
                    "N strictly lower triangular on the grid".into()
                } else {
                    format!("first violation {:?}", rep.first_violation)
                },
            ));
            match cfg.observer {
                ObserverPath::CanonicalStrangenessFree => {
                    checks.push(AssumptionCheck::new(
                        "strangeness-free",
                        rep.strangeness_free,
                        true,
                        "N identically zero on the grid".into(),
                    ));
                    (0..scf.r).collect()
                }
                ObserverPath::CanonicalZw => {
                    checks.push(AssumptionCheck::new(
                        "couplings-nonvanishing",
                        rep.couplings_nonvanishing == Some(true),
                        true,
                        format!("min |N21|, |N31|, |N32| = {:?}", rep.min_abs_coupling),
                    ));
                    let k = select_output_row_za(scf, t0, t1, h);
                    checks.push(AssumptionCheck::new("za-output-row", k.is_ok(), true, format!("{k:?}")));
                    let l = select_output_row_zw(scf, t0, t1, h);
                    checks.push(AssumptionCheck::new("zw-output-row", l.is_ok(), true, format!("{l:?}")));
                    if let (Ok(k), Ok(l), true) = (&k, &l, rep.couplings_nonvanishing == Some(true)) {
                        let sub = build_zw_system(scf, *l, t0, t1, h)?;
                        if cfg.gain == GainChoice::Lti {
                            let c0 = sub.at(t0);
                            // d1, d2 carry the forcing and may vary freely
                            let constant = (0..=step_count(t0, t1, h)?).step_by(100).all(|i| {
                                let c = sub.at(grid_time(t0, h, i));
                                (c.a1, c.cw, c.cw_dot) == (c0.a1, c0.cw, c0.cw_dot)
                            });
                            checks.push(AssumptionCheck::new(
                                "lti-coefficients",
                                constant,
                                true,
                                "a1 and C_w constant on the grid".into(),
                            ));
                            let sign = lw_lti(&c0);
                            checks.push(AssumptionCheck::new(
                                "lti-gain-sign",
                                sign.is_ok(),
                                true,
                                format!("a1 C_w1 / C_w2 = {}", c0.a1 * c0.cw[0] / c0.cw[1]),
                            ));
                            if sign.is_err() {
                                return Ok(Audit {
                                    checks,
                                    rows: vec![*k],
                                    zw,
                                });
                            }
                        }
                        let obs = ZwObserver::new(sub, cfg.gain, t0)?;
                        let stab = check_exponential_stability(
                            |t| obs.m_w(t),
                            t0,
                            t1.max(t0 + h),
                            h,
                            DEFAULT_STABILITY_MARGIN,
                        )?;
                        checks.push(AssumptionCheck::new(
                            "error-dynamics-stable",
                            stab.pass,
                            true,
                            format!("log-norm slope of the M_w transition matrix = {}", stab.slope),
                        ));
                        zw = Some((obs, stab));
                    }
                    k.map(|k| vec![k]).unwrap_or_default()
                }
                ObserverPath::SemiExplicitGpebo => {
                    return Err(HarnessError::Config(format!(
                        "scenario {} is in canonical form; observer path must be canonical",
                        cfg.scenario
                    )))
                }
            }
        }
    };
    if cfg.estimator == crate::estimation::ExtensionMode::FilterBank && rows.len() != 1 {
        return Err(HarnessError::Config(format!(
            "the filter-bank extension needs exactly one regression row, got {rows:?}"
        )));
    }
    Ok(Audit { checks, rows, zw })
}

/// Time-to-threshold for one error level; `None` means not reached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdTimes {
    pub epsilon: f64,
    /// First grid time with `|x̃_a| + |x̃_b| < ε`.
    pub state: Option<f64>,
    /// First grid time with `|η̃| < ε`.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalErrors {
    pub differential: f64,
    pub algebraic: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flags {
    pub phi_condition_max: f64,
    pub phi_ill_conditioned: bool,
    /// Largest `γ_i Δ² h` seen.
    pub stiffness_max: f64,
    pub stiff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZwMetrics {
    pub stability: StabilityReport,
    /// Least-squares slope of `ln |z̃_w|` once `ẑ_a` has converged.
    pub error_slope: Option<f64>,
    pub fit_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub observer: ObserverPath,
    pub t0: f64,
    pub t1: f64,
    pub h: f64,
    pub samples: usize,
    pub regression_rows: Vec<usize>,
    pub eta_true: Vec<f64>,
    pub eta_hat_final: Vec<f64>,
    pub final_error: Option<FinalErrors>,
    pub time_to_threshold: Vec<ThresholdTimes>,
    pub excitation: ExcitationReport,
    pub delta_min_abs: Option<f64>,
    pub delta_max_abs: Option<f64>,
    /// `max_t |Y − ψ η_true|` over the driving rows.
    pub lre_residual_max: Option<f64>,
    /// Same over every available regression row.
    pub all_rows_residual_max: Option<f64>,
    pub flags: Flags,
    pub assumptions: Vec<AssumptionCheck>,
    pub zw: Option<ZwMetrics>,
}

/// One CSV worth of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGroup {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub traces: Vec<TraceGroup>,
}

impl RunOutput {
    pub fn group(&self, name: &str) -> Option<&TraceGroup> {
        self.traces.iter().find(|g| g.name == name)
    }

    /// Column `col` of trace group `name`.
    pub fn column(&self, name: &str, col: &str) -> Option<Vec<f64>> {
        let g = self.group(name)?;
        let j = g.header.iter().position(|h| h == col)?;
        Some(g.rows.iter().map(|r| r[j]).collect())
    }
}

fn build_model(cfg: &ScenarioConfig, system: &ScenarioSystem, audit: &Audit) -> Result<Box<dyn Model>, HarnessError> {
    let xi_a0 = Vector::from_vec(cfg.xi_a0.clone());
    let n_a = match system {
        ScenarioSystem::Descriptor { sys, .. } => sys.dims.n_a,
        ScenarioSystem::Canonical { scf, .. } => scf.n_a,
    };
    if xi_a0.len() != n_a {
        return Err(HarnessError::Config(format!(
            "xi_a0 has {} entries, expected {n_a}",
            xi_a0.len()
        )));
    }
    Ok(match system {
        ScenarioSystem::Descriptor {
            sys,
            plant,
            x_a0,
            theta,
            ..
        } => {
            let p = sys.dims.q + n_a;
            let filters = ExtensionFilters::new(cfg.estimator, cfg.lambda.clone(), p)?;
            Box::new(DescriptorModel::new(
                sys.clone(),
                plant.clone(),
                xi_a0,
                filters,
                audit.rows.clone(),
                theta.clone(),
                x_a0.clone(),
                cfg.rank_tol,
            ))
        }
        ScenarioSystem::Canonical { scf, z_a0 } => {
            let filters = ExtensionFilters::new(cfg.estimator, cfg.lambda.clone(), n_a)?;
            let zw = audit.zw.as_ref().map(|(o, _)| o.clone());
            Box::new(CanonicalModel {
                scf: scf.clone(),
                z_a0: z_a0.clone(),
                ext0: ZaExtension::initial(xi_a0),
                filters,
                rows: audit.rows.clone(),
                r0: if zw.is_some() {
                    Vector::zeros(2)
                } else {
                    Vector::zeros(0)
                },
                zw,
            })
        }
    })
}

fn check_finite(t: f64, what: &str, v: &Vector) -> Result<(), HarnessError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HarnessError::Diverged {
            time: t,
            what: what.into(),
        })
    }
}

/// Runs a scenario end to end. Deterministic: the same configuration gives
/// bit-identical outputs.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, HarnessError> {
    let system = build_system(cfg)?;
    let audit = audit(cfg, &system)?;
    let failures = audit.failures();
    if !failures.is_empty() {
        let names: Vec<String> = failures.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        return Err(HarnessError::Assumption(names.join("; ")));
    }
    let model = build_model(cfg, &system, &audit)?;
    let p = model.filters().p();
    let gamma = cfg.gamma.expand(p)?;
    let eta0 = match &cfg.eta_hat0 {
        Some(v) if v.len() == p => Vector::from_vec(v.clone()),
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "eta_hat0 has {} entries, expected {p}",
                v.len()
            )))
        }
        None => Vector::zeros(p),
    };
    let mut est = EstimatorState::new(eta0, gamma)?;
    let eta_true = model.eta_true();

    let (diff_labels, alg_labels) = model.state_labels();
    let eta_labels: Vec<String> = (1..=p).map(|i| format!("eta_{i}")).collect();
    let mut states = TraceGroup {
        name: "states",
        header: std::iter::once("time".to_string())
            .chain(diff_labels.iter().cloned())
            .chain(alg_labels.iter().cloned())
            .chain(diff_labels.iter().map(|l| format!("{l}_hat")))
            .chain(alg_labels.iter().map(|l| format!("{l}_hat")))
            .collect(),
        rows: vec![],
    };
    let mut params = TraceGroup {
        name: "parameter_error",
        header: std::iter::once("time".to_string())
            .chain(eta_labels.iter().map(|l| format!("{l}_hat")))
            .chain(eta_labels.iter().map(|l| format!("{l}_err")))
            .collect(),
        rows: vec![],
    };
    let n_rows = audit.rows.len();
    let mut regressor = TraceGroup {
        name: "regressor",
        header: std::iter::once("time".to_string())
            .chain((0..n_rows).flat_map(|i| {
                (1..=p).map(move |j| {
                    if n_rows == 1 {
                        format!("psi_{j}")
                    } else {
                        format!("psi_{}_{j}", i + 1)
                    }
                })
            }))
            .collect(),
        rows: vec![],
    };
    let mut delta = TraceGroup {
        name: "delta",
        header: std::iter::once("time".to_string())
            .chain(std::iter::once("delta".to_string()))
            .chain((1..=p).map(|i| format!("mixed_{i}")))
            .collect(),
        rows: vec![],
    };
    let mut lmin = TraceGroup {
        name: "lambda_min",
        header: vec!["time".into(), "lambda_min".into()],
        rows: vec![],
    };

    let mut acc = ExcitationAccumulator::new(p, cfg.rho_threshold);
    let mut flags = Flags {
        phi_condition_max: 0.0,
        phi_ill_conditioned: false,
        stiffness_max: 0.0,
        stiff: false,
    };
    let mut thresholds: Vec<ThresholdTimes> = cfg
        .epsilons
        .iter()
        .map(|&e| ThresholdTimes {
            epsilon: e,
            state: None,
            eta: None,
        })
        .collect();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    let (mut res_max, mut all_res_max) = (0.0_f64, 0.0_f64);
    let mut last: Option<Record> = None;
    let mut zw_series: Vec<(f64, f64, f64)> = vec![];

    let empty = cfg.t1 == cfg.t0;
    let n = if empty { 0 } else { step_count(cfg.t0, cfg.t1, cfg.h)? };
    let h = cfg.h;
    let mut x = model.initial_state();
    let slot = RefCell::new(None);
    for k in 0..=n {
        if empty {
            break;
        }
        let t = grid_time(cfg.t0, h, k);
        let rec = model.record(t, &x, &est.eta_hat)?;
        check_finite(t, "observer state", &rec.est_diff)?;
        let d0 = drem_mix(&model.filters_at(&x));
        let lm = if k < n {
            acc.update(t, &rec.reg.psi, h)?
        } else {
            acc.finish(t)?
        };

        let eta_err = &est.eta_hat - &eta_true;
        let x_err = (&rec.est_diff - &rec.truth_diff).norm() + (&rec.est_alg - &rec.truth_alg).norm();
        for th in thresholds.iter_mut() {
            if th.state.is_none() && x_err < th.epsilon {
                th.state = Some(t);
            }
            if th.eta.is_none() && eta_err.norm() < th.epsilon {
                th.eta = Some(t);
            }
        }
        dmin = dmin.min(d0.delta.abs());
        dmax = dmax.max(d0.delta.abs());
        res_max = res_max.max(rec.lre_residual);
        all_res_max = all_res_max.max(rec.all_rows_residual);
        flags.phi_condition_max = flags.phi_condition_max.max(rec.phi_cond);
        if let Some(e) = rec.zw_error {
            zw_series.push((t, e, (&rec.est_diff - &rec.truth_diff).norm()));
        }

        let row = |head: f64, parts: &[&[f64]]| -> Vec<f64> {
            std::iter::once(head)
                .chain(parts.iter().flat_map(|s| s.iter().copied()))
                .collect()
        };
        states.rows.push(row(
            t,
            &[
                rec.truth_diff.as_slice(),
                rec.truth_alg.as_slice(),
                rec.est_diff.as_slice(),
                rec.est_alg.as_slice(),
            ],
        ));
        params.rows.push(row(t, &[est.eta_hat.as_slice(), eta_err.as_slice()]));
        let psi_rowmajor: Vec<f64> = rec.reg.psi.transpose().as_slice().to_vec();
        regressor.rows.push(row(t, &[&psi_rowmajor]));
        delta.rows.push(row(t, &[&[d0.delta], d0.mixed.as_slice()]));
        lmin.rows.push(vec![t, lm]);
        last = Some(rec);
        if k == n {
            break;
        }

        let x_new = rk4_step(
            &mut |s, y: &Vector| guarded(&slot, y.len(), || model.rhs(s, y, &est.eta_hat)),
            t,
            &x,
            h,
        );
        if let Some(e) = slot.borrow_mut().take() {
            return Err(e);
        }
        let t_next = grid_time(cfg.t0, h, k + 1);
        check_finite(t_next, "composite state", &x_new)?;
        let d1 = drem_mix(&model.filters_at(&x_new));
        flags.stiffness_max = flags.stiffness_max.max(est.stiffness(&d0, h));
        est.exponential_step(&d0, &d1, h);
        check_finite(t_next, "parameter estimate", &est.eta_hat)?;
        x = x_new;
    }
    flags.phi_ill_conditioned = flags.phi_condition_max > PHI_CONDITION_LIMIT;
    flags.stiff = flags.stiffness_max > STIFFNESS_LIMIT;

    let mut checks = audit.checks.clone();
    let excitation = acc.report()?;
    checks.push(AssumptionCheck::new(
        "interval-excitation",
        excitation.t_c.is_some(),
        false,
        format!(
            "lambda_min of the regressor Gram integral at t1 = {:e}, threshold {:e}",
            excitation.lambda_min_final, excitation.threshold
        ),
    ));

    let zw = audit.zw.as_ref().map(|(_, stab)| {
        let (slope, window) = zw_error_slope(&zw_series);
        ZwMetrics {
            stability: stab.clone(),
            error_slope: slope,
            fit_window: window,
        }
    });

    let final_error = last.as_ref().map(|rec| FinalErrors {
        differential: (&rec.est_diff - &rec.truth_diff).norm(),
        algebraic: (&rec.est_alg - &rec.truth_alg).norm(),
        eta: (&est.eta_hat - &eta_true).norm(),
    });
    let summary = RunSummary {
        scenario: cfg.scenario.clone(),
        observer: cfg.observer,
        t0: cfg.t0,
        t1: cfg.t1,
        h,
        samples: states.rows.len(),
        regression_rows: audit.rows.clone(),
        eta_true: eta_true.as_slice().to_vec(),
        eta_hat_final: est.eta_hat.as_slice().to_vec(),
        final_error,
        time_to_threshold: thresholds,
        excitation,
        delta_min_abs: last.as_ref().map(|_| dmin),
        delta_max_abs: last.as_ref().map(|_| dmax),
        lre_residual_max: last.as_ref().map(|_| res_max),
        all_rows_residual_max: last.as_ref().map(|_| all_res_max),
        flags,
        assumptions: checks,
        zw,
    };
    Ok(RunOutput {
        summary,
        traces: vec![states, params, regressor, delta, lmin],
    })
}

/// `ẑ_a` error below which `y_w` is treated as exact.
const ZA_CONVERGED: f64 = 1e-9;
/// `z̃_w` floor below which rounding dominates.
const ZW_FLOOR: f64 = 1e-10;

/// Slope of `ln |z̃_w|` over the samples after `ẑ_a` has converged and
/// before `z̃_w` reaches the rounding floor.
fn zw_error_slope(series: &[(f64, f64, f64)]) -> (Option<f64>, Option<[f64; 2]>) {
    let Some(start) = series.iter().position(|s| s.2 < ZA_CONVERGED) else {
        return (None, None);
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = series[start..]
        .iter()
        .take_while(|s| s.1 > ZW_FLOOR)
        .map(|s| (s.0, s.1.ln()))
        .unzip();
    if xs.len() < 10 {
        return (None, None);
    }
    (Some(linear_fit_slope(&xs, &ys)), Some([xs[0], xs[xs.len() - 1]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_skips_transient_and_rounding_floor() {
        // z_a converges at t = 1; z_w decays at rate 2 and hits the floor
        let series: Vec<(f64, f64, f64)> = (0..2000)
            .map(|k| {
                let t = k as f64 * 0.01;
                let za = if t < 1.0 { 1.0 } else { 0.0 };
                let zw = if t < 1.0 { 5.0 } else { (-2.0 * t).exp().max(1e-12) };
                (t, zw, za)
            })
            .collect();
        let (slope, window) = zw_error_slope(&series);
        assert!((slope.unwrap() + 2.0).abs() < 1e-9);
        let [a, b] = window.unwrap();
        assert!((a - 1.0).abs() < 1e-9 && b < 11.6);
    }

    #[test]
    fn slope_fit_needs_converged_za() {
        let series = vec![(0.0, 1.0, 1.0), (1.0, 0.5, 1.0)];
        assert_eq!(zw_error_slope(&series), (None, None));
    }
}
