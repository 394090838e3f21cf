//! Dense linear-algebra kernels and the fixed-step RK4 integrator shared by
//! every observer in the crate.
//!
//! Everything here is a pure function of its arguments. Dimensions in this
//! crate stay small (at most ten or so), so all storage is dense
//! `nalgebra` heap matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default step of the fixed-step integrator, in seconds.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default floor on the smallest eigenvalue of `MᵀM` before a matrix is
/// treated as column-rank deficient.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("integration diverged at t = {time}: non-finite state")]
    Diverged { time: f64 },
    #[error("matrix is column-rank deficient: min eig of MᵀM = {min_eig:e} < tol = {tol:e}")]
    RankDeficient { min_eig: f64, tol: f64 },
    #[error("pseudoinverse needs rows >= cols, got {rows}x{cols}")]
    WideMatrix { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |M - Mᵀ| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid integration span: t0 = {t0}, t1 = {t1}, h = {h}")]
    InvalidSpan { t0: f64, t1: f64, h: f64 },
}

/// Uniformly sampled solution of an ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<f64>,
    pub states: Vec<T>,
    pub step: f64,
}

impl<T> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &T)> {
        self.times.last().copied().zip(self.states.last())
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.times.iter().copied().zip(self.states.iter())
    }
}

/// Number of RK4 steps that fit in `[t0, t1]`: the last grid point is the
/// largest `t0 + k h` not exceeding `t1` (up to a relative slack of 1e-9
/// steps, so that `t1 = 30, h = 1e-3` lands exactly on 30000 steps).
pub fn step_count(t0: f64, t1: f64, h: f64) -> Result<usize, NumericsError> {
    if !(h > 0.0) || !h.is_finite() || !t0.is_finite() || !t1.is_finite() || t1 < t0 {
        return Err(NumericsError::InvalidSpan { t0, t1, h });
    }
    Ok(((t1 - t0) / h + 1e-9).floor() as usize)
}

/// Grid time of step `k`. Computed by multiplication so that long runs do
/// not accumulate rounding in the clock.
#[inline]
pub fn grid_time(t0: f64, h: f64, k: usize) -> f64 {
    t0 + h * k as f64
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(rhs: &mut F, t: f64, x: &Vector, h: f64) -> Vector
where
    F: FnMut(f64, &Vector) -> Vector,
{
    let half = 0.5 * h;
    let k1 = rhs(t, x);
    let k2 = rhs(t + half, &(x + &k1 * half));
    let k3 = rhs(t + half, &(x + &k2 * half));
    let k4 = rhs(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Fixed-step RK4 solution of `ẋ = rhs(t, x)` on `[t0, t1]`, sampled at
/// `t0, t0 + h, …` up to the largest grid point not beyond `t1`.
pub fn integrate_fixed_step<F>(
    mut rhs: F,
    t0: f64,
    x0: &Vector,
    t1: f64,
    h: f64,
) -> Result<Trajectory<Vector>, NumericsError>
where
    F: FnMut(f64, &Vector) -> Vector,
{
    if t1 <= t0 {
        return Err(NumericsError::InvalidSpan { t0, t1, h });
    }
    let n = step_count(t0, t1, h)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::Diverged { time: t0 });
    }
    let mut x = x0.clone();
    times.push(t0);
    states.push(x.clone());
    for k in 0..n {
        let t = grid_time(t0, h, k);
        x = rk4_step(&mut rhs, t, &x, h);
        let t_next = grid_time(t0, h, k + 1);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::Diverged { time: t_next });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states, step: h })
}

/// Left inverse `(MᵀM)⁻¹Mᵀ` of a tall matrix with full column rank.
///
/// The normal-equation matrix is checked through its smallest eigenvalue;
/// anything below `tol` is reported as [`NumericsError::RankDeficient`].
pub fn pseudoinverse_full_column_rank(m: &Matrix, tol: f64) -> Result<Matrix, NumericsError> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(NumericsError::WideMatrix { rows, cols });
    }
    if cols == 0 {
        return Ok(Matrix::zeros(0, rows));
    }
    let gram = m.transpose() * m;
    let min_eig = min_eig_symmetric(&gram)?;
    if !(min_eig >= tol) {
        return Err(NumericsError::RankDeficient { min_eig, tol });
    }
    let chol = gram.cholesky().ok_or(NumericsError::RankDeficient { min_eig, tol })?;
    Ok(chol.solve(&m.transpose()))
}

/// Fundamental matrix of `ż = A(t) z` with `Φ(t0) = I`, sampled on the
/// RK4 grid.
pub fn propagate_fundamental<F>(a: F, t0: f64, t1: f64, h: f64) -> Result<Trajectory<Matrix>, NumericsError>
where
    F: Fn(f64) -> Matrix,
{
    let n = a(t0).nrows();
    let x0 = Vector::from_column_slice(Matrix::identity(n, n).as_slice());
    let traj = integrate_fixed_step(
        |t, x| {
            let phi = Matrix::from_column_slice(n, n, x.as_slice());
            let d = a(t) * phi;
            Vector::from_column_slice(d.as_slice())
        },
        t0,
        &x0,
        t1,
        h,
    )?;
    Ok(Trajectory {
        states: traj
            .states
            .iter()
            .map(|x| Matrix::from_column_slice(n, n, x.as_slice()))
            .collect(),
        times: traj.times,
        step: traj.step,
    })
}

/// Determinant by partially pivoted Gaussian elimination. Zero pivots give
/// an exact zero rather than a division.
pub fn determinant(m: &Matrix) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    match n {
        0 => return 1.0,
        1 => return m[(0, 0)],
        2 => return m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => {}
    }
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if a[(pivot, col)] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap_rows(pivot, col);
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for row in col + 1..n {
            let factor = a[(row, col)] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[(row, k)] -= factor * a[(col, k)];
                }
            }
        }
    }
    det
}

/// Adjugate and determinant by cofactor expansion. Defined for singular
/// matrices too, where `adj(M)·M = 0`.
pub fn adjugate_and_det(m: &Matrix) -> Result<(Matrix, f64), NumericsError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(NumericsError::NotSquare { rows, cols });
    }
    let p = rows;
    let det = determinant(m);
    if p == 1 {
        return Ok((Matrix::from_element(1, 1, 1.0), det));
    }
    let mut adj = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            // adj[j][i] = (-1)^{i+j} det(M without row i, column j)
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = sign * determinant(&minor);
        }
    }
    Ok((adj, det))
}

/// Smallest eigenvalue of a symmetric matrix. Inputs whose asymmetry
/// exceeds `1e-10·max(1, ‖M‖)` are rejected.
pub fn min_eig_symmetric(m: &Matrix) -> Result<f64, NumericsError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(NumericsError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Ok(f64::INFINITY);
    }
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > 1e-10 * m.norm().max(1.0) {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().min())
}

/// Numerical rank from singular values above `tol · σ_max`.
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}
