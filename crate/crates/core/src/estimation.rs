//! Online estimation of `η` from `Y = ψ η`: regressor extension to a
//! square system, DREM mixing into scalar regressions `Δ η_i = 𝒴_i`, and a
//! component-wise gradient update. Also the interval-excitation monitor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpebo::RegressionSample;
use crate::numerics::{adjugate_and_det, min_eig_symmetric, Matrix, NumericsError, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("filter-bank extension needs a single output row, got {rows}")]
    FilterBankNeedsScalarOutput { rows: usize },
    #[error("filter-bank extension needs {expected} rates, got {got}")]
    RateCount { expected: usize, got: usize },
    #[error("filter rates must be positive and finite, got {0:?}")]
    NonPositiveRate(Vec<f64>),
    #[error("filter-bank rates must be pairwise distinct, got {0:?}")]
    RepeatedRate(Vec<f64>),
    #[error("regressor width {got} does not match parameter count {expected}")]
    RegressorWidth { expected: usize, got: usize },
    #[error("gradient gains must be positive, got {0:?}")]
    NonPositiveGain(Vec<f64>),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionMode {
    /// One first-order filter `λ_i/(s + λ_i)` per row of the extended
    /// regressor, all fed by the scalar regression.
    FilterBank,
    /// `Ψ̇f = −ℓ Ψf + ψᵀψ`, `Ẏf = −ℓ Yf + ψᵀY` with a single rate ℓ.
    Kreisselmeier,
}

impl std::str::FromStr for ExtensionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filter-bank" => Ok(Self::FilterBank),
            "kreisselmeier" => Ok(Self::Kreisselmeier),
            other => Err(format!("unknown estimator `{other}` (filter-bank | kreisselmeier)")),
        }
    }
}

/// Filtered, square regression `Ψf η ≈ Yf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionFilters {
    pub mode: ExtensionMode,
    pub lambda: Vec<f64>,
    pub psi_f: Matrix,
    pub y_f: Vector,
}

/// Time derivative of the filter states.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDerivative {
    pub psi_f: Matrix,
    pub y_f: Vector,
}

impl ExtensionFilters {
    /// Zero-initialized filters for `p` unknowns.
    pub fn new(mode: ExtensionMode, lambda: Vec<f64>, p: usize) -> Result<Self, EstimationError> {
        if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(EstimationError::NonPositiveRate(lambda));
        }
        if mode == ExtensionMode::FilterBank {
            if lambda.len() != p {
                return Err(EstimationError::RateCount {
                    expected: p,
                    got: lambda.len(),
                });
            }
            for i in 0..p {
                if lambda[i + 1..].contains(&lambda[i]) {
                    return Err(EstimationError::RepeatedRate(lambda));
                }
            }
        }
        Ok(Self {
            mode,
            lambda,
            psi_f: Matrix::zeros(p, p),
            y_f: Vector::zeros(p),
        })
    }

    pub fn p(&self) -> usize {
        self.y_f.len()
    }

    pub fn flat_len(p: usize) -> usize {
        p * p + p
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let p = self.p();
        out[..p * p].copy_from_slice(self.psi_f.as_slice());
        out[p * p..p * p + p].copy_from_slice(self.y_f.as_slice());
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let p = self.p();
        Self {
            mode: self.mode,
            lambda: self.lambda.clone(),
            psi_f: Matrix::from_column_slice(p, p, &flat[..p * p]),
            y_f: Vector::from_column_slice(&flat[p * p..p * p + p]),
        }
    }

    pub fn rhs(&self, sample: &RegressionSample) -> Result<FilterDerivative, EstimationError> {
        match self.mode {
            ExtensionMode::FilterBank => filterbank_rhs(self, sample),
            ExtensionMode::Kreisselmeier => kreisselmeier_rhs(self, sample),
        }
    }
}

impl FilterDerivative {
    pub fn write_flat(&self, out: &mut [f64]) {
        let p = self.y_f.len();
        out[..p * p].copy_from_slice(self.psi_f.as_slice());
        out[p * p..p * p + p].copy_from_slice(self.y_f.as_slice());
    }
}

fn check_width(f: &ExtensionFilters, sample: &RegressionSample) -> Result<(), EstimationError> {
    if sample.psi.ncols() != f.p() {
        return Err(EstimationError::RegressorWidth {
            expected: f.p(),
            got: sample.psi.ncols(),
        });
    }
    Ok(())
}

/// Row `i`: `Ψ̇f_i = −λ_i Ψf_i + λ_i ψ`, `Ẏf_i = −λ_i Yf_i + λ_i Y`.
pub fn filterbank_rhs(f: &ExtensionFilters, sample: &RegressionSample) -> Result<FilterDerivative, EstimationError> {
    if sample.psi.nrows() != 1 {
        return Err(EstimationError::FilterBankNeedsScalarOutput {
            rows: sample.psi.nrows(),
        });
    }
    check_width(f, sample)?;
    let p = f.p();
    let mut d_psi = Matrix::zeros(p, p);
    let mut d_y = Vector::zeros(p);
    for (i, &l) in f.lambda.iter().enumerate() {
        for j in 0..p {
            d_psi[(i, j)] = l * (sample.psi[(0, j)] - f.psi_f[(i, j)]);
        }
        d_y[i] = l * (sample.y[0] - f.y_f[i]);
    }
    Ok(FilterDerivative { psi_f: d_psi, y_f: d_y })
}

/// `Ψ̇f = −ℓ Ψf + ψᵀψ`, `Ẏf = −ℓ Yf + ψᵀY`, with `ℓ = λ[0]`.
pub fn kreisselmeier_rhs(f: &ExtensionFilters, sample: &RegressionSample) -> Result<FilterDerivative, EstimationError> {
    check_width(f, sample)?;
    let l = f.lambda[0];
    let psi_t = sample.psi.transpose();
    Ok(FilterDerivative {
        psi_f: &psi_t * &sample.psi - &f.psi_f * l,
        y_f: psi_t * &sample.y - &f.y_f * l,
    })
}

/// Mixed scalar regressions `Δ η_i = 𝒴_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DremSignals {
    pub delta: f64,
    pub mixed: Vector,
}

/// `Δ = det Ψf`, `𝒴 = adj(Ψf) Yf`.
pub fn drem_mix(f: &ExtensionFilters) -> DremSignals {
    let (adj, delta) = adjugate_and_det(&f.psi_f).expect("Ψf is square");
    DremSignals {
        delta,
        mixed: adj * &f.y_f,
    }
}

/// Parameter estimate and per-component gradient gains.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub eta_hat: Vector,
    pub gamma: Vec<f64>,
}

impl EstimatorState {
    pub fn new(eta_hat: Vector, gamma: Vec<f64>) -> Result<Self, EstimationError> {
        if gamma.len() != eta_hat.len() || gamma.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(EstimationError::NonPositiveGain(gamma));
        }
        Ok(Self { eta_hat, gamma })
    }

    /// Largest `γ_i Δ² h`, the stiffness of the gradient update at step `h`.
    pub fn stiffness(&self, d: &DremSignals, h: f64) -> f64 {
        self.gamma
            .iter()
            .fold(0.0, |acc: f64, g| acc.max(g * d.delta * d.delta * h))
    }

    /// Advances `η̂` over one step of length `h`, given the mixed signals at
    /// both ends of the step.
    ///
    /// Each component obeys the scalar linear ODE
    /// `η̂̇_i = −γ_i Δ² η̂_i + γ_i Δ 𝒴_i`. Its coefficients are averaged over
    /// the step by the trapezoid rule and the frozen-coefficient equation is
    /// solved exactly. This is unconditionally stable, so gains whose
    /// `γ Δ² h` exceeds the explicit RK4 bound do not blow up, and it keeps
    /// each `η̂_i` moving monotonically toward `𝒴_i / Δ`.
    pub fn exponential_step(&mut self, start: &DremSignals, end: &DremSignals, h: f64) {
        for i in 0..self.eta_hat.len() {
            let g = self.gamma[i];
            let a = 0.5 * g * (start.delta * start.delta + end.delta * end.delta);
            let b = 0.5 * g * (start.delta * start.mixed[i] + end.delta * end.mixed[i]);
            let x = self.eta_hat[i];
            self.eta_hat[i] = if a * h > 1e-12 {
                let target = b / a;
                target + (x - target) * (-a * h).exp()
            } else {
                // a h tiny: first-order expansion of the exact solution
                x + (b - a * x) * h
            };
        }
    }
}

/// `η̂̇_i = γ_i Δ (𝒴_i − Δ η̂_i)`.
pub fn gradient_rhs(st: &EstimatorState, d: &DremSignals) -> Vector {
    Vector::from_iterator(
        st.eta_hat.len(),
        st.eta_hat
            .iter()
            .zip(&st.gamma)
            .zip(d.mixed.iter())
            .map(|((eta, g), y)| g * d.delta * (y - d.delta * eta)),
    )
}

/// Running `S(t) = ∫ ψᵀψ ds` (left-endpoint rule on the integration grid)
/// together with its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationAccumulator {
    pub gram: Matrix,
    pub threshold: f64,
    pub excited_at: Option<f64>,
    pub lambda_min_trace: Vec<(f64, f64)>,
}

/// Interval-excitation verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationReport {
    /// First grid time where `λ_min(S) ≥ threshold`.
    pub t_c: Option<f64>,
    pub lambda_min_final: f64,
    pub threshold: f64,
}

pub const DEFAULT_RHO_THRESHOLD: f64 = 1e-6;

impl ExcitationAccumulator {
    pub fn new(p: usize, threshold: f64) -> Self {
        Self {
            gram: Matrix::zeros(p, p),
            threshold,
            excited_at: None,
            lambda_min_trace: Vec::new(),
        }
    }

    /// Records `λ_min` of the integral accumulated up to `t` (before adding
    /// the sample at `t`), then adds `ψᵀψ·h`.
    pub fn update(&mut self, t: f64, psi: &Matrix, h: f64) -> Result<f64, EstimationError> {
        let lmin = self.lambda_min()?;
        self.record(t, lmin);
        self.gram += psi.transpose() * psi * h;
        Ok(lmin)
    }

    /// Records the current `λ_min` at `t` without accumulating.
    pub fn finish(&mut self, t: f64) -> Result<f64, EstimationError> {
        let lmin = self.lambda_min()?;
        self.record(t, lmin);
        Ok(lmin)
    }

    fn record(&mut self, t: f64, lmin: f64) {
        if self.excited_at.is_none() && lmin >= self.threshold {
            self.excited_at = Some(t);
        }
        self.lambda_min_trace.push((t, lmin));
    }

    pub fn lambda_min(&self) -> Result<f64, EstimationError> {
        // symmetrize: the sum of rank-one terms drifts by rounding only
        let sym = (&self.gram + self.gram.transpose()) * 0.5;
        Ok(min_eig_symmetric(&sym)?)
    }

    pub fn report(&self) -> Result<ExcitationReport, EstimationError> {
        Ok(ExcitationReport {
            t_c: self.excited_at,
            lambda_min_final: self.lambda_min()?,
            threshold: self.threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate_fixed_step;
    use std::f64::consts::PI;

    fn sample(y: f64, psi: &[f64]) -> RegressionSample {
        RegressionSample {
            t: 0.0,
            y: Vector::from_element(1, y),
            psi: Matrix::from_row_slice(1, psi.len(), psi),
            q: 0,
        }
    }

    /// Integrates filters driven by a regression sample generator.
    fn run_filters(
        mut f: ExtensionFilters,
        gen: impl Fn(f64) -> RegressionSample,
        t1: f64,
        h: f64,
    ) -> Vec<(f64, ExtensionFilters)> {
        let p = f.p();
        let mut x0 = Vector::zeros(ExtensionFilters::flat_len(p));
        f.write_flat(x0.as_mut_slice());
        let proto = f.clone();
        let traj = integrate_fixed_step(
            |t, x| {
                let cur = proto.with_flat(x.as_slice());
                let d = cur.rhs(&gen(t)).unwrap();
                let mut out = Vector::zeros(x.len());
                d.write_flat(out.as_mut_slice());
                out
            },
            0.0,
            &x0,
            t1,
            h,
        )
        .unwrap();
        f = proto;
        traj.iter().map(|(t, x)| (t, f.with_flat(x.as_slice()))).collect()
    }

    #[test]
    fn constructor_validates_rates() {
        assert!(ExtensionFilters::new(ExtensionMode::FilterBank, vec![0.1, 0.2], 3).is_err());
        assert!(ExtensionFilters::new(ExtensionMode::FilterBank, vec![0.1, 0.1, 0.3], 3).is_err());
        assert!(ExtensionFilters::new(ExtensionMode::FilterBank, vec![0.1, -0.2, 0.3], 3).is_err());
        assert!(ExtensionFilters::new(ExtensionMode::Kreisselmeier, vec![1.0], 3).is_ok());
    }

    #[test]
    fn filter_bank_rejects_multi_row_regressor() {
        let f = ExtensionFilters::new(ExtensionMode::FilterBank, vec![1.0, 2.0], 2).unwrap();
        let s = RegressionSample {
            t: 0.0,
            y: Vector::zeros(2),
            psi: Matrix::zeros(2, 2),
            q: 0,
        };
        assert_eq!(
            filterbank_rhs(&f, &s).unwrap_err(),
            EstimationError::FilterBankNeedsScalarOutput { rows: 2 }
        );
    }

    #[test]
    fn filter_bank_has_unit_dc_gain() {
        let f = ExtensionFilters::new(ExtensionMode::FilterBank, vec![1.0, 2.0, 3.0], 3).unwrap();
        let out = run_filters(f, |_| sample(2.0, &[1.0, -1.0, 0.5]), 20.0, 1e-2);
        let last = &out.last().unwrap().1;
        for i in 0..3 {
            assert!((last.psi_f.row(i) - Matrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5])).amax() < 1e-8);
            assert!((last.y_f[i] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn filter_bank_decays_without_input() {
        let mut f = ExtensionFilters::new(ExtensionMode::FilterBank, vec![0.5, 1.0], 2).unwrap();
        f.psi_f = Matrix::from_element(2, 2, 1.0);
        let out = run_filters(f, |_| sample(0.0, &[0.0, 0.0]), 2.0, 1e-3);
        let last = &out.last().unwrap().1;
        assert!((last.psi_f[(0, 0)] - (-1.0f64).exp()).abs() < 1e-10);
        assert!((last.psi_f[(1, 1)] - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn filtered_identity_is_preserved() {
        let eta = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let gen = |t: f64| {
            let psi = [t.sin(), (0.5 * t).cos(), 1.0];
            let y = psi[0] * 1.0 - 2.0 * psi[1] + 0.5 * psi[2];
            sample(y, &psi)
        };
        for mode in [ExtensionMode::FilterBank, ExtensionMode::Kreisselmeier] {
            let f = ExtensionFilters::new(mode, vec![0.1, 0.2, 0.3], 3).unwrap();
            for (_, cur) in run_filters(f, gen, 10.0, 1e-3) {
                assert!((&cur.psi_f * &eta - &cur.y_f).amax() < 1e-6, "{mode:?}");
                if mode == ExtensionMode::Kreisselmeier {
                    assert!((&cur.psi_f - cur.psi_f.transpose()).amax() < 1e-14);
                    assert!(min_eig_symmetric(&cur.psi_f).unwrap() > -1e-12);
                }
            }
        }
    }

    #[test]
    fn kreisselmeier_decays_without_input() {
        let mut f = ExtensionFilters::new(ExtensionMode::Kreisselmeier, vec![2.0], 2).unwrap();
        f.psi_f = Matrix::identity(2, 2);
        f.y_f = Vector::from_vec(vec![1.0, 1.0]);
        let out = run_filters(f, |_| sample(0.0, &[0.0, 0.0]), 10.0, 1e-2);
        let last = &out.last().unwrap().1;
        assert!(last.psi_f.amax() < 1e-8 && last.y_f.amax() < 1e-8);
    }

    #[test]
    fn mixing_examples() {
        let mut f = ExtensionFilters::new(ExtensionMode::Kreisselmeier, vec![1.0], 2).unwrap();
        f.psi_f = Matrix::identity(2, 2);
        f.y_f = Vector::from_vec(vec![3.0, 4.0]);
        let d = drem_mix(&f);
        assert_eq!((d.delta, d.mixed.clone()), (1.0, f.y_f.clone()));

        f.psi_f = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0]));
        f.y_f = Vector::from_vec(vec![2.0, 6.0]); // Ψf (1, 2)
        let d = drem_mix(&f);
        assert_eq!(d.delta, 6.0);
        assert_eq!(d.mixed, Vector::from_vec(vec![6.0, 12.0]));

        f.psi_f = Matrix::from_element(2, 2, 1.0);
        let d = drem_mix(&f);
        assert_eq!(d.delta, 0.0);
        let st = EstimatorState::new(Vector::from_vec(vec![0.3, 0.4]), vec![10.0, 10.0]).unwrap();
        assert_eq!(gradient_rhs(&st, &d), Vector::zeros(2));
    }

    #[test]
    fn gradient_equilibrium_at_true_value() {
        let eta = Vector::from_vec(vec![1.5, -0.5]);
        let d = DremSignals {
            delta: 0.3,
            mixed: &eta * 0.3,
        };
        let st = EstimatorState::new(eta, vec![1e3, 1e3]).unwrap();
        assert!(gradient_rhs(&st, &d).amax() < 1e-12);
    }

    #[test]
    fn scalar_gradient_closed_form() {
        let d = DremSignals {
            delta: 1.0,
            mixed: Vector::zeros(1),
        };
        // RK4 on the derivative
        let traj = integrate_fixed_step(
            |_, x| {
                gradient_rhs(
                    &EstimatorState {
                        eta_hat: x.clone(),
                        gamma: vec![2.0],
                    },
                    &d,
                )
            },
            0.0,
            &Vector::from_element(1, 1.0),
            1.0,
            1e-3,
        )
        .unwrap();
        for (t, x) in traj.iter() {
            assert!((x[0] - (-2.0 * t).exp()).abs() < 1e-8);
        }
        // exponential update
        let mut st = EstimatorState::new(Vector::from_element(1, 1.0), vec![2.0]).unwrap();
        for k in 0..1000 {
            st.exponential_step(&d, &d, 1e-3);
            let t = (k + 1) as f64 * 1e-3;
            assert!((st.eta_hat[0] - (-2.0 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn exponential_step_is_stable_for_stiff_gains() {
        let d = DremSignals {
            delta: 1e-3,
            mixed: Vector::from_element(1, 2e-3),
        };
        let mut st = EstimatorState::new(Vector::zeros(1), vec![1e10]).unwrap();
        assert!(st.stiffness(&d, 1e-3) > 0.5);
        let mut last_err = f64::INFINITY;
        for _ in 0..100 {
            st.exponential_step(&d, &d, 1e-3);
            let err = (st.eta_hat[0] - 2.0).abs();
            assert!(err <= last_err);
            last_err = err;
        }
        assert!(last_err < 1e-12);
    }

    #[test]
    fn excitation_of_rotating_regressor() {
        let mut acc = ExcitationAccumulator::new(2, DEFAULT_RHO_THRESHOLD);
        let h = 1e-3;
        let n = (2.0 * PI / h).round() as usize;
        let h = 2.0 * PI / n as f64;
        for k in 0..n {
            let t = k as f64 * h;
            acc.update(t, &Matrix::from_row_slice(1, 2, &[t.cos(), t.sin()]), h)
                .unwrap();
        }
        let lmin = acc.finish(2.0 * PI).unwrap();
        assert!((lmin - PI).abs() < 1e-3);
        assert!(acc.report().unwrap().t_c.is_some());
    }

    #[test]
    fn zero_regressor_is_never_excited() {
        let mut acc = ExcitationAccumulator::new(3, DEFAULT_RHO_THRESHOLD);
        for k in 0..100 {
            acc.update(k as f64 * 0.1, &Matrix::zeros(1, 3), 0.1).unwrap();
        }
        let rep = acc.report().unwrap();
        assert_eq!(rep.t_c, None);
        assert_eq!(rep.lambda_min_final, 0.0);
    }
}
