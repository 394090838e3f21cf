//! Observers for systems given in standard canonical form
//!
//! ```text
//!   ż_a = Aa z_a + f_a
//!   N ż_b = z_b + f_b        (N strictly lower triangular)
//!     y = Ca z_a + Cb z_b
//! ```
//!
//! Three paths are provided. When `N ≡ 0` the algebraic part is
//! `z_b = −f_b`. The differential part `z_a` is observed by a GPEBO built on
//! an output row that does not see `z_b`. For `n_b = 3` the pair
//! `z_w = (z_b1, z_b2)` obeys a second-order system with the unknown input
//! `ζ = z_b3 / N32`, and is observed by an unknown-input observer whose gain
//! annihilates the `ζ` channel.
//!
//! Rows of `N ż_b = z_b + f_b` for `n_b = 3`:
//!
//! ```text
//!   0 = z_b1 + f_b1
//!   N21 ż_b1 = z_b2 + f_b2
//!   N31 ż_b1 + N32 ż_b2 = z_b3 + f_b3
//! ```
//!
//! so `ż_b1 = a1 z_b2 + d1` and `ż_b2 = a2 z_b2 + d2 + ζ` with
//! `a1 = 1/N21`, `d1 = f_b2/N21`, `a2 = −N31/(N21 N32)`,
//! `d2 = f_b3/N32 − (N31/N32)(f_b2/N21)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{MatrixFn, VectorFn};
use crate::gpebo::RegressionSample;
use crate::numerics::{
    grid_time, integrate_fixed_step, propagate_fundamental, step_count, Matrix, NumericsError, Trajectory, Vector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonicalError {
    #[error("N is not identically zero at t = {time}; the system is not strangeness-free")]
    NotStrangenessFree { time: f64 },
    #[error("no output row is free of z_b on the grid")]
    NoZaRow,
    #[error("no output row has C^b = (c1, c2, 0) with c1, c2 nonvanishing on the grid")]
    NoZwRow,
    #[error("the z_w observer supports n_b = 3 only, got n_b = {n_b}")]
    UnsupportedDimension { n_b: usize },
    #[error("N has a vanishing coupling coefficient {entry} at t = {time}")]
    VanishingCoupling { entry: &'static str, time: f64 },
    #[error("C_w has a vanishing component at t = {time}")]
    VanishingCw { time: f64 },
    #[error("LTI gain needs a1·C_w1/C_w2 > 0, got {value}")]
    SignCondition { value: f64 },
    #[error("the z_w observer needs the analytic derivative of Cb")]
    MissingCbDerivative,
    #[error("ground truth for z_b needs the derivatives of N and f_b")]
    MissingJet,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Derivatives used only by the ground-truth generator of `z_b`.
#[derive(Clone)]
pub struct ScfJet {
    pub n_dot: MatrixFn,
    pub fb_dot: VectorFn,
    pub fb_ddot: VectorFn,
}

#[derive(Clone)]
pub struct StandardCanonicalForm {
    pub n_a: usize,
    pub n_b: usize,
    pub r: usize,
    pub aa: MatrixFn,
    pub n: MatrixFn,
    pub fa: VectorFn,
    pub fb: VectorFn,
    pub ca: MatrixFn,
    pub cb: MatrixFn,
    /// Analytic `Ċb`, required by the `z_w` observer.
    pub cb_dot: Option<MatrixFn>,
    pub jet: Option<ScfJet>,
}

impl std::fmt::Debug for StandardCanonicalForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StandardCanonicalForm")
            .field("n_a", &self.n_a)
            .field("n_b", &self.n_b)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

/// Result of [`validate_scf`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScfReport {
    pub strictly_lower: bool,
    pub strangeness_free: bool,
    /// Whether `N21`, `N31`, `N32` stay away from zero; `None` unless `n_b = 3`.
    pub couplings_nonvanishing: Option<bool>,
    pub min_abs_coupling: Option<f64>,
    pub first_violation: Option<(f64, String)>,
}

fn grid(t0: f64, t1: f64, h: f64) -> Result<impl Iterator<Item = f64>, NumericsError> {
    let n = step_count(t0, t1, h)?;
    Ok((0..=n).map(move |k| grid_time(t0, h, k)))
}

/// Checks strict lower triangularity of `N` and, for `n_b = 3`, that the
/// couplings satisfy `|N21|, |N31|, |N32| ≥ tol` on the grid.
pub fn validate_scf(
    scf: &StandardCanonicalForm,
    t0: f64,
    t1: f64,
    h: f64,
    tol: f64,
) -> Result<ScfReport, CanonicalError> {
    let mut rep = ScfReport {
        strictly_lower: true,
        strangeness_free: true,
        couplings_nonvanishing: (scf.n_b == 3).then_some(true),
        min_abs_coupling: None,
        first_violation: None,
    };
    let flag = |rep: &mut ScfReport, t: f64, what: String| {
        if rep.first_violation.is_none() {
            rep.first_violation = Some((t, what));
        }
    };
    for t in grid(t0, t1, h)? {
        let n = (scf.n)(t);
        for i in 0..scf.n_b {
            for j in 0..scf.n_b {
                if n[(i, j)] != 0.0 {
                    rep.strangeness_free = false;
                    if j >= i {
                        rep.strictly_lower = false;
                        flag(
                            &mut rep,
                            t,
                            format!("N[{i}][{j}] = {} on or above the diagonal", n[(i, j)]),
                        );
                    }
                }
            }
        }
        if scf.n_b == 3 {
            for (name, (i, j)) in [("N21", (1, 0)), ("N31", (2, 0)), ("N32", (2, 1))] {
                let v = n[(i, j)].abs();
                rep.min_abs_coupling = Some(rep.min_abs_coupling.map_or(v, |m: f64| m.min(v)));
                if v < tol {
                    rep.couplings_nonvanishing = Some(false);
                    flag(&mut rep, t, format!("|{name}| = {v:e} below {tol:e}"));
                }
            }
        }
    }
    Ok(rep)
}

/// `z_b = −f_b`, valid when `N(t) = 0`.
pub fn strangeness_free_solve(scf: &StandardCanonicalForm, t: f64) -> Result<Vector, CanonicalError> {
    if (scf.n)(t).iter().any(|&v| v != 0.0) {
        return Err(CanonicalError::NotStrangenessFree { time: t });
    }
    Ok(-(scf.fb)(t))
}

const ZERO_TOL: f64 = 1e-12;

/// Zero-based index of the first output row whose `Cb` row vanishes on the
/// whole grid.
pub fn select_output_row_za(scf: &StandardCanonicalForm, t0: f64, t1: f64, h: f64) -> Result<usize, CanonicalError> {
    let times: Vec<f64> = grid(t0, t1, h)?.collect();
    (0..scf.r)
        .find(|&k| {
            times
                .iter()
                .all(|&t| (scf.cb)(t).row(k).iter().all(|v| v.abs() <= ZERO_TOL))
        })
        .ok_or(CanonicalError::NoZaRow)
}

/// GPEBO extension for `z_a`: `ξ̇a = Aa ξa + f_a`, `Φ̇a = Aa Φa`.
/// Along any trajectory `z_a = ξa − Φa θa` with `θa = ξa(t0) − z_a(t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZaExtension {
    pub xi_a: Vector,
    pub phi_a: Matrix,
}

impl ZaExtension {
    pub fn initial(xi_a0: Vector) -> Self {
        let n = xi_a0.len();
        Self {
            xi_a: xi_a0,
            phi_a: Matrix::identity(n, n),
        }
    }

    pub fn flat_len(n_a: usize) -> usize {
        n_a + n_a * n_a
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let n = self.xi_a.len();
        out[..n].copy_from_slice(self.xi_a.as_slice());
        out[n..n + n * n].copy_from_slice(self.phi_a.as_slice());
    }

    pub fn read_flat(flat: &[f64], n_a: usize) -> Self {
        Self {
            xi_a: Vector::from_column_slice(&flat[..n_a]),
            phi_a: Matrix::from_column_slice(n_a, n_a, &flat[n_a..n_a + n_a * n_a]),
        }
    }

    /// `ẑ_a = ξa − Φa θ̂a`.
    pub fn estimate(&self, theta_hat: &Vector) -> Vector {
        &self.xi_a - &self.phi_a * theta_hat
    }
}

pub fn za_extension_rhs(scf: &StandardCanonicalForm, t: f64, ext: &ZaExtension) -> ZaExtension {
    let aa = (scf.aa)(t);
    ZaExtension {
        xi_a: &aa * &ext.xi_a + (scf.fa)(t),
        phi_a: aa * &ext.phi_a,
    }
}

/// Regression `𝒴a = ψa θa` from the output rows `rows`, with
/// `𝒴a = y − Ca ξa − Cb z_b` and `ψa = −Ca Φa`. `z_b_known` is `−f_b` on
/// the strangeness-free path and `None` when the rows do not see `z_b`.
pub fn za_regression(
    scf: &StandardCanonicalForm,
    t: f64,
    ext: &ZaExtension,
    rows: &[usize],
    y: &Vector,
    z_b_known: Option<&Vector>,
) -> RegressionSample {
    let ca = (scf.ca)(t).select_rows(rows);
    let mut big_y = y.select_rows(rows) - &ca * &ext.xi_a;
    if let Some(zb) = z_b_known {
        big_y -= (scf.cb)(t).select_rows(rows) * zb;
    }
    RegressionSample {
        t,
        y: big_y,
        psi: -(ca * &ext.phi_a),
        q: 0,
    }
}

/// Second-order unknown-input subsystem `ż_w = A_w z_w + d_w + B_w ζ`,
/// `y_w = C_wᵀ z_w`, with `A_w = [[0, a1], [0, a2]]` and `B_w = (0, 1)`.
#[derive(Clone)]
pub struct ZwSubsystem {
    pub scf: StandardCanonicalForm,
    /// Zero-based output row carrying `z_w`.
    pub row: usize,
}

impl std::fmt::Debug for ZwSubsystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZwSubsystem")
            .field("row", &self.row)
            .finish_non_exhaustive()
    }
}

/// Pointwise values of the `z_w` subsystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZwCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub d1: f64,
    pub d2: f64,
    pub cw: [f64; 2],
    pub cw_dot: [f64; 2],
}

impl ZwCoefficients {
    pub fn a_w(&self) -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, self.a1, 0.0, self.a2])
    }

    pub fn d_w(&self) -> Vector {
        Vector::from_vec(vec![self.d1, self.d2])
    }

    pub fn cw(&self) -> Vector {
        Vector::from_vec(self.cw.to_vec())
    }

    pub fn cw_dot(&self) -> Vector {
        Vector::from_vec(self.cw_dot.to_vec())
    }
}

pub fn b_w() -> Vector {
    Vector::from_vec(vec![0.0, 1.0])
}

/// `ζ = z_b3 / N32`, the signal the observer never evaluates.
pub fn zeta(scf: &StandardCanonicalForm, t: f64, z_b: &Vector) -> f64 {
    z_b[2] / (scf.n)(t)[(2, 1)]
}

impl ZwSubsystem {
    pub fn at(&self, t: f64) -> ZwCoefficients {
        let n = (self.scf.n)(t);
        let fb = (self.scf.fb)(t);
        let (n21, n31, n32) = (n[(1, 0)], n[(2, 0)], n[(2, 1)]);
        let cb = (self.scf.cb)(t);
        let cb_dot = self.scf.cb_dot.as_ref().map_or(Matrix::zeros(self.scf.r, 3), |f| f(t));
        ZwCoefficients {
            a1: 1.0 / n21,
            a2: -n31 / (n21 * n32),
            d1: fb[1] / n21,
            d2: fb[2] / n32 - (n31 / n32) * (fb[1] / n21),
            cw: [cb[(self.row, 0)], cb[(self.row, 1)]],
            cw_dot: [cb_dot[(self.row, 0)], cb_dot[(self.row, 1)]],
        }
    }
}

/// Zero-based index of the first row with `C^b = (c1, c2, 0)`, `c1`, `c2`
/// bounded away from zero on the grid.
pub fn select_output_row_zw(scf: &StandardCanonicalForm, t0: f64, t1: f64, h: f64) -> Result<usize, CanonicalError> {
    if scf.n_b != 3 {
        return Err(CanonicalError::UnsupportedDimension { n_b: scf.n_b });
    }
    let times: Vec<f64> = grid(t0, t1, h)?.collect();
    (0..scf.r)
        .find(|&l| {
            times.iter().all(|&t| {
                let cb = (scf.cb)(t);
                cb[(l, 0)].abs() > ZERO_TOL && cb[(l, 1)].abs() > ZERO_TOL && cb[(l, 2)].abs() <= ZERO_TOL
            })
        })
        .ok_or(CanonicalError::NoZwRow)
}

/// Builds the `z_w` subsystem on output row `row` after checking the
/// couplings and `C_w` on the grid.
pub fn build_zw_system(
    scf: &StandardCanonicalForm,
    row: usize,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<ZwSubsystem, CanonicalError> {
    if scf.n_b != 3 {
        return Err(CanonicalError::UnsupportedDimension { n_b: scf.n_b });
    }
    if scf.cb_dot.is_none() {
        return Err(CanonicalError::MissingCbDerivative);
    }
    for t in grid(t0, t1, h)? {
        let n = (scf.n)(t);
        for (entry, (i, j)) in [("N21", (1, 0)), ("N31", (2, 0)), ("N32", (2, 1))] {
            if n[(i, j)].abs() <= ZERO_TOL {
                return Err(CanonicalError::VanishingCoupling { entry, time: t });
            }
        }
        let cb = (scf.cb)(t);
        if cb[(row, 0)].abs() <= ZERO_TOL || cb[(row, 1)].abs() <= ZERO_TOL {
            return Err(CanonicalError::VanishingCw { time: t });
        }
    }
    Ok(ZwSubsystem { scf: scf.clone(), row })
}

/// `y_w = y_ℓ − Ca_ℓ ẑ_a`, certainty-equivalent in `ẑ_a`.
pub fn extract_y_w(zw: &ZwSubsystem, t: f64, y: &Vector, z_a_hat: &Vector) -> f64 {
    y[zw.row] - ((zw.scf.ca)(t).row(zw.row) * z_a_hat)[0]
}

/// `G_w = (0, 1/C_w2)`.
pub fn g_w(c: &ZwCoefficients) -> Vector {
    Vector::from_vec(vec![0.0, 1.0 / c.cw[1]])
}

/// `Ġ_w = (0, −Ċ_w2/C_w2²)`.
pub fn g_w_dot(c: &ZwCoefficients) -> Vector {
    Vector::from_vec(vec![0.0, -c.cw_dot[1] / (c.cw[1] * c.cw[1])])
}

/// `M_w = (I − G_w C_wᵀ) A_w − L_w C_wᵀ − G_w Ċ_wᵀ`.
pub fn m_w(c: &ZwCoefficients, l: &Vector) -> Matrix {
    let g = g_w(c);
    let proj = Matrix::identity(2, 2) - &g * c.cw().transpose();
    proj * c.a_w() - l * c.cw().transpose() - g * c.cw_dot().transpose()
}

/// Entry-wise closed form of [`m_w`]:
///
/// ```text
///   M11 = −L1 c1                 M12 = a1 − L1 c2
///   M21 = −L2 c1 − ċ1/c2         M22 = −L2 c2 − (ċ2 + c1 a1)/c2
/// ```
///
/// `a2` drops out because `I − G_w C_wᵀ` annihilates the second row of `A_w`.
pub fn m_w_entries(c: &ZwCoefficients, l: &Vector) -> Matrix {
    let ([c1, c2], [c1d, c2d], a1) = (c.cw, c.cw_dot, c.a1);
    Matrix::from_row_slice(
        2,
        2,
        &[
            -l[0] * c1,
            a1 - l[0] * c2,
            -l[1] * c1 - c1d / c2,
            -l[1] * c2 - (c2d + c1 * a1) / c2,
        ],
    )
}

/// Gain that zeroes both off-diagonal entries of `M_w`:
/// `L_w = (a1/c2, −ċ1/(c1 c2))`.
pub fn lw_diagonalizing(c: &ZwCoefficients) -> Vector {
    let [c1, c2] = c.cw;
    Vector::from_vec(vec![c.a1 / c2, -c.cw_dot[0] / (c1 * c2)])
}

/// Constant gain `L_w = a1 c1 (c1/c2, 1)` for constant coefficients. With it
/// `tr M_w = −(a1 c1/c2)(c1² + c2² + 1)` and
/// `det M_w = a1² c1² (c1²/c2² + 1)`, so `M_w` is Hurwitz iff `a1 c1/c2 > 0`.
pub fn lw_lti(c: &ZwCoefficients) -> Result<Vector, CanonicalError> {
    let [c1, c2] = c.cw;
    let s = c.a1 * c1 / c2;
    if !(s > 0.0) {
        return Err(CanonicalError::SignCondition { value: s });
    }
    Ok(Vector::from_vec(vec![c.a1 * c1 * c1 / c2, c.a1 * c1]))
}

/// Gain law for the `z_w` observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GainChoice {
    /// Constant gain evaluated once at `t0`.
    #[default]
    Lti,
    /// Time-varying diagonalizing gain.
    Diagonalizing,
}

/// `z_w` observer: `ṙ = M r + (M G + L − Ġ) y_w + (I − G C_wᵀ) d_w`,
/// `ẑ_w = r + G y_w`. The gain is frozen for [`GainChoice::Lti`].
#[derive(Debug, Clone)]
pub struct ZwObserver {
    pub zw: ZwSubsystem,
    pub gain: GainChoice,
    pub lti_gain: Option<Vector>,
}

impl ZwObserver {
    pub fn new(zw: ZwSubsystem, gain: GainChoice, t0: f64) -> Result<Self, CanonicalError> {
        let lti_gain = match gain {
            GainChoice::Lti => Some(lw_lti(&zw.at(t0))?),
            GainChoice::Diagonalizing => None,
        };
        Ok(Self { zw, gain, lti_gain })
    }

    pub fn gain_at(&self, c: &ZwCoefficients) -> Vector {
        match &self.lti_gain {
            Some(l) => l.clone(),
            None => lw_diagonalizing(c),
        }
    }

    pub fn m_w(&self, t: f64) -> Matrix {
        let c = self.zw.at(t);
        m_w(&c, &self.gain_at(&c))
    }

    /// Returns `(ṙ, ẑ_w)`.
    pub fn rhs(&self, t: f64, r: &Vector, y_w: f64) -> (Vector, Vector) {
        let c = self.zw.at(t);
        let l = self.gain_at(&c);
        let g = g_w(&c);
        let m = m_w(&c, &l);
        let proj = Matrix::identity(2, 2) - &g * c.cw().transpose();
        let r_dot = &m * r + (&m * &g + &l - g_w_dot(&c)) * y_w + proj * c.d_w();
        (r_dot, r + g * y_w)
    }

    pub fn estimate(&self, t: f64, r: &Vector, y_w: f64) -> Vector {
        r + g_w(&self.zw.at(t)) * y_w
    }
}

/// Result of [`check_exponential_stability`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Least-squares slope of `ln ‖Φ_M(t)‖₂` over the final 80% of the window.
    pub slope: f64,
    pub margin: f64,
    pub pass: bool,
    /// `∫ M11`, `∫ M22` over the window when `M` is diagonal on the grid.
    pub diagonal_integrals: Option<[f64; 2]>,
}

pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-3;

/// Least-squares slope of `y` against `x`.
pub fn linear_fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Numerical surrogate for exponential stability of `φ̇ = M(t) φ`: fits a
/// line to `ln ‖Φ_M(t)‖₂` and passes iff the slope is at most `−margin`.
pub fn check_exponential_stability<F>(
    m: F,
    t0: f64,
    t1: f64,
    h: f64,
    margin: f64,
) -> Result<StabilityReport, CanonicalError>
where
    F: Fn(f64) -> Matrix,
{
    let traj = propagate_fundamental(&m, t0, t1, h)?;
    let start = traj.len() / 5;
    let (xs, ys): (Vec<f64>, Vec<f64>) = traj
        .iter()
        .skip(start)
        .map(|(t, phi)| (t, phi.clone().svd(false, false).singular_values[0].ln()))
        .unzip();
    let slope = linear_fit_slope(&xs, &ys);

    let mut diagonal = true;
    let mut integrals = [0.0; 2];
    for (k, &t) in traj.times.iter().enumerate() {
        let mk = m(t);
        if mk[(0, 1)] != 0.0 || mk[(1, 0)] != 0.0 {
            diagonal = false;
            break;
        }
        // trapezoid rule
        let w = if k == 0 || k + 1 == traj.len() { 0.5 * h } else { h };
        integrals[0] += w * mk[(0, 0)];
        integrals[1] += w * mk[(1, 1)];
    }
    Ok(StabilityReport {
        slope,
        margin,
        pass: slope <= -margin,
        diagonal_integrals: diagonal.then_some(integrals),
    })
}

/// One ground-truth sample of a canonical-form system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScfSample {
    pub z_a: Vector,
    pub z_b: Vector,
    pub y: Vector,
}

/// `z_b` from `f_b` and its derivatives for `n_b ≤ 3` (or `N ≡ 0`).
pub fn z_b_truth(scf: &StandardCanonicalForm, t: f64) -> Result<Vector, CanonicalError> {
    let fb = (scf.fb)(t);
    if (scf.n)(t).iter().all(|&v| v == 0.0) {
        return Ok(-fb);
    }
    if scf.n_b != 3 {
        return Err(CanonicalError::UnsupportedDimension { n_b: scf.n_b });
    }
    let jet = scf.jet.as_ref().ok_or(CanonicalError::MissingJet)?;
    let (n, nd) = ((scf.n)(t), (jet.n_dot)(t));
    let (fd, fdd) = ((jet.fb_dot)(t), (jet.fb_ddot)(t));
    let zb1 = -fb[0];
    let zb1_dot = -fd[0];
    let zb2 = n[(1, 0)] * zb1_dot - fb[1];
    let zb2_dot = nd[(1, 0)] * zb1_dot - n[(1, 0)] * fdd[0] - fd[1];
    let zb3 = n[(2, 0)] * zb1_dot + n[(2, 1)] * zb2_dot - fb[2];
    Ok(Vector::from_vec(vec![zb1, zb2, zb3]))
}

/// Plant-side right-hand side and sampling of a canonical-form system.
pub fn scf_sample(scf: &StandardCanonicalForm, t: f64, z_a: &Vector) -> Result<ScfSample, CanonicalError> {
    let z_b = z_b_truth(scf, t)?;
    let y = (scf.ca)(t) * z_a + (scf.cb)(t) * &z_b;
    Ok(ScfSample {
        z_a: z_a.clone(),
        z_b,
        y,
    })
}

pub fn scf_ground_truth(
    scf: &StandardCanonicalForm,
    z_a0: &Vector,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory<ScfSample>, CanonicalError> {
    let aa = scf.aa.clone();
    let fa = scf.fa.clone();
    let traj = integrate_fixed_step(|t, z| aa(t) * z + fa(t), t0, z_a0, t1, h)?;
    let states = traj
        .iter()
        .map(|(t, z)| scf_sample(scf, t, z))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory {
        times: traj.times,
        states,
        step: h,
    })
}

/// Convenience for closures: wraps a function into a shared callback.
pub fn mfn(f: impl Fn(f64) -> Matrix + Send + Sync + 'static) -> MatrixFn {
    Arc::new(f)
}

pub fn vfn(f: impl Fn(f64) -> Vector + Send + Sync + 'static) -> VectorFn {
    Arc::new(f)
}
