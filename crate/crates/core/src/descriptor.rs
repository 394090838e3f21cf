//! Semi-explicit linear time-varying descriptor systems
//!
//! ```text
//!   ẋ_a = A11 x_a + A12 x_b + B1 u + F1 θ
//!     0 = A21 x_a + A22 x_b + B2 u + F2 θ
//!     y = Ca x_a + Cb x_b
//! ```
//!
//! with `E = diag(I, 0)` implied by the partition. The algebraic state is
//! recovered from `x_a`, `u`, `θ` and `y` through the left inverse of the
//! stacked matrix `𝒜_b = [A22; Cb]`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{
    self, grid_time, min_eig_symmetric, pseudoinverse_full_column_rank, rank, step_count, Matrix, NumericsError,
    Trajectory, Vector,
};

/// Time-varying matrix callback. Must be pure: same `t`, same matrix.
pub type MatrixFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;
/// Time-varying vector callback.
pub type VectorFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

pub fn constant_matrix(m: Matrix) -> MatrixFn {
    Arc::new(move |_| m.clone())
}

pub fn constant_vector(v: Vector) -> VectorFn {
    Arc::new(move |_| v.clone())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("block {block} has shape {got:?}, expected {expected:?}")]
    Dimension {
        block: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("𝒜_b = [A22; Cb] loses column rank at t = {time}: {source}")]
    RankDeficient {
        time: f64,
        #[source]
        source: NumericsError,
    },
    #[error("A22 is singular at t = {time}")]
    SingularA22 { time: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Sizes of the partition: differential states, algebraic states, inputs,
/// outputs and unknown parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n_a: usize,
    pub n_b: usize,
    pub m: usize,
    pub r: usize,
    pub q: usize,
}

#[derive(Clone)]
pub struct SemiExplicitDescriptor {
    pub dims: Dimensions,
    pub a11: MatrixFn,
    pub a12: MatrixFn,
    pub a21: MatrixFn,
    pub a22: MatrixFn,
    pub b1: MatrixFn,
    pub b2: MatrixFn,
    pub f1: MatrixFn,
    pub f2: MatrixFn,
    pub ca: MatrixFn,
    pub cb: MatrixFn,
    pub u: VectorFn,
    /// All blocks and the input are constant; enables the LTI rank test.
    pub time_invariant: bool,
}

impl fmt::Debug for SemiExplicitDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemiExplicitDescriptor")
            .field("dims", &self.dims)
            .field("time_invariant", &self.time_invariant)
            .finish_non_exhaustive()
    }
}

/// Builder with every block defaulting to zero of the right shape.
pub struct DescriptorBuilder {
    sys: SemiExplicitDescriptor,
}

macro_rules! setter {
    ($name:ident) => {
        pub fn $name(mut self, f: impl Fn(f64) -> Matrix + Send + Sync + 'static) -> Self {
            self.sys.$name = Arc::new(f);
            self
        }
    };
}

impl DescriptorBuilder {
    setter!(a11);
    setter!(a12);
    setter!(a21);
    setter!(a22);
    setter!(b1);
    setter!(b2);
    setter!(f1);
    setter!(f2);
    setter!(ca);
    setter!(cb);

    pub fn input(mut self, u: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        self.sys.u = Arc::new(u);
        self
    }

    pub fn time_invariant(mut self, yes: bool) -> Self {
        self.sys.time_invariant = yes;
        self
    }

    /// Checks every block shape at `t = 0`.
    pub fn build(self) -> Result<SemiExplicitDescriptor, DescriptorError> {
        self.sys.check_shapes(0.0)?;
        Ok(self.sys)
    }
}

impl SemiExplicitDescriptor {
    pub fn builder(dims: Dimensions) -> DescriptorBuilder {
        let zero = |r: usize, c: usize| constant_matrix(Matrix::zeros(r, c));
        let Dimensions { n_a, n_b, m, r, q } = dims;
        DescriptorBuilder {
            sys: SemiExplicitDescriptor {
                dims,
                a11: zero(n_a, n_a),
                a12: zero(n_a, n_b),
                a21: zero(n_b, n_a),
                a22: zero(n_b, n_b),
                b1: zero(n_a, m),
                b2: zero(n_b, m),
                f1: zero(n_a, q),
                f2: zero(n_b, q),
                ca: zero(r, n_a),
                cb: zero(r, n_b),
                u: constant_vector(Vector::zeros(m)),
                time_invariant: false,
            },
        }
    }

    pub fn check_shapes(&self, t: f64) -> Result<(), DescriptorError> {
        let Dimensions { n_a, n_b, m, r, q } = self.dims;
        let checks: [(&'static str, &MatrixFn, (usize, usize)); 10] = [
            ("A11", &self.a11, (n_a, n_a)),
            ("A12", &self.a12, (n_a, n_b)),
            ("A21", &self.a21, (n_b, n_a)),
            ("A22", &self.a22, (n_b, n_b)),
            ("B1", &self.b1, (n_a, m)),
            ("B2", &self.b2, (n_b, m)),
            ("F1", &self.f1, (n_a, q)),
            ("F2", &self.f2, (n_b, q)),
            ("Ca", &self.ca, (r, n_a)),
            ("Cb", &self.cb, (r, n_b)),
        ];
        for (block, f, expected) in checks {
            let got = f(t).shape();
            if got != expected {
                return Err(DescriptorError::Dimension { block, expected, got });
            }
        }
        let u = (self.u)(t);
        if u.len() != m {
            return Err(DescriptorError::Dimension {
                block: "u",
                expected: (m, 1),
                got: (u.len(), 1),
            });
        }
        Ok(())
    }

    /// `𝒜_b(t) = [A22(t); Cb(t)]`, of size `(n_b + r) × n_b`.
    pub fn stack_ab(&self, t: f64) -> Matrix {
        vstack(&(self.a22)(t), &(self.cb)(t))
    }

    /// `[A21(t); Ca(t)]`, the coupling of `x_a` into the stacked algebraic
    /// rows.
    pub fn stack_coupling(&self, t: f64) -> Matrix {
        vstack(&(self.a21)(t), &(self.ca)(t))
    }

    /// `[B2(t); 0]`.
    pub fn stack_input(&self, t: f64) -> Matrix {
        vstack(&(self.b2)(t), &Matrix::zeros(self.dims.r, self.dims.m))
    }

    /// `[F2(t); 0]`.
    pub fn stack_param(&self, t: f64) -> Matrix {
        vstack(&(self.f2)(t), &Matrix::zeros(self.dims.r, self.dims.q))
    }

    /// `[0; y]` with a zero block of height `n_b`, matching the row layout
    /// of `𝒜_b`.
    pub fn stack_output(&self, y: &Vector) -> Vector {
        let mut v = Vector::zeros(self.dims.n_b + self.dims.r);
        v.rows_mut(self.dims.n_b, self.dims.r).copy_from(y);
        v
    }

    pub fn output_matrix(&self, t: f64) -> Matrix {
        hstack(&(self.ca)(t), &(self.cb)(t))
    }

    /// `𝒜_b†(t)`, failing with the offending time if `𝒜_b` loses rank.
    pub fn pinv_ab(&self, t: f64, tol: f64) -> Result<Matrix, DescriptorError> {
        pseudoinverse_full_column_rank(&self.stack_ab(t), tol)
            .map_err(|source| DescriptorError::RankDeficient { time: t, source })
    }

    pub fn output(&self, t: f64, x_a: &Vector, x_b: &Vector) -> Vector {
        (self.ca)(t) * x_a + (self.cb)(t) * x_b
    }

    /// Residual of the `n_b` algebraic rows `A21 x_a + A22 x_b + B2 u + F2 θ`.
    pub fn algebraic_residual(&self, t: f64, x_a: &Vector, x_b: &Vector, theta: &Vector) -> Vector {
        (self.a21)(t) * x_a + (self.a22)(t) * x_b + (self.b2)(t) * (self.u)(t) + (self.f2)(t) * theta
    }

    /// Right-hand side of the differential rows.
    pub fn differential_rhs(&self, t: f64, x_a: &Vector, x_b: &Vector, theta: &Vector) -> Vector {
        (self.a11)(t) * x_a + (self.a12)(t) * x_b + (self.b1)(t) * (self.u)(t) + (self.f1)(t) * theta
    }
}

pub(crate) fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub(crate) fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    debug_assert_eq!(left.nrows(), right.nrows());
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Outcome of the LTI impulse-observability rank identity
/// `rank [E A; 0 C; 0 E] = rank E + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiRankReport {
    pub stacked_rank: usize,
    pub required_rank: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseObservabilityReport {
    pub pass: bool,
    pub first_failure: Option<f64>,
    /// Smallest eigenvalue of `𝒜_bᵀ𝒜_b` seen on the grid.
    pub min_gram_eig: f64,
    pub lti_rank: Option<LtiRankReport>,
}

/// Checks that `𝒜_b(t)` keeps full column rank on every grid point of
/// `[t0, t1]`; for time-invariant systems also evaluates the block rank
/// identity on the full `(E, A, C)` triple.
pub fn check_impulse_observability_grid(
    sys: &SemiExplicitDescriptor,
    t0: f64,
    t1: f64,
    h: f64,
    tol: f64,
) -> Result<ImpulseObservabilityReport, DescriptorError> {
    let n = step_count(t0, t1, h)?;
    let mut first_failure = None;
    let mut min_gram_eig = f64::INFINITY;
    for k in 0..=n {
        let t = grid_time(t0, h, k);
        let ab = sys.stack_ab(t);
        let eig = min_eig_symmetric(&(ab.transpose() * &ab))?;
        min_gram_eig = min_gram_eig.min(eig);
        if !(eig >= tol) && first_failure.is_none() {
            first_failure = Some(t);
        }
    }
    let lti_rank = sys.time_invariant.then(|| lti_impulse_rank(sys, t0));
    Ok(ImpulseObservabilityReport {
        pass: first_failure.is_none(),
        first_failure,
        min_gram_eig,
        lti_rank,
    })
}

/// `[E A; 0 C; 0 E]` for the semi-explicit `E = diag(I, 0)` at time `t`.
pub fn impulse_rank_matrix(sys: &SemiExplicitDescriptor, t: f64) -> Matrix {
    let Dimensions { n_a, n_b, r, .. } = sys.dims;
    let n = n_a + n_b;
    let mut e = Matrix::zeros(n, n);
    e.view_mut((0, 0), (n_a, n_a)).fill_with_identity();
    let a = vstack(
        &hstack(&(sys.a11)(t), &(sys.a12)(t)),
        &hstack(&(sys.a21)(t), &(sys.a22)(t)),
    );
    let c = sys.output_matrix(t);
    let mut big = Matrix::zeros(2 * n + r, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&e);
    big.view_mut((0, n), (n, n)).copy_from(&a);
    big.view_mut((n, n), (r, n)).copy_from(&c);
    big.view_mut((n + r, n), (n, n)).copy_from(&e);
    big
}

fn lti_impulse_rank(sys: &SemiExplicitDescriptor, t: f64) -> LtiRankReport {
    let n = sys.dims.n_a + sys.dims.n_b;
    let stacked_rank = rank(&impulse_rank_matrix(sys, t), 1e-10);
    let required_rank = sys.dims.n_a + n;
    LtiRankReport {
        stacked_rank,
        required_rank,
        pass: stacked_rank == required_rank,
    }
}

/// Matrices of the explicit ODE obtained by eliminating `x_b`:
/// `ẋ_a = A0 x_a + B0 u + D0 θ + yInjection·y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrices {
    pub a0: Matrix,
    pub b0: Matrix,
    pub d0: Matrix,
    pub y_injection: Matrix,
}

/// Lazily evaluated reduction of a descriptor system to an ODE in `x_a`.
#[derive(Debug, Clone)]
pub struct ReducedOde {
    pub sys: SemiExplicitDescriptor,
    pub tol: f64,
}

pub fn reduce_to_ode(sys: &SemiExplicitDescriptor, tol: f64) -> ReducedOde {
    ReducedOde { sys: sys.clone(), tol }
}

impl ReducedOde {
    pub fn at(&self, t: f64) -> Result<ReducedMatrices, DescriptorError> {
        let sys = &self.sys;
        let pinv = sys.pinv_ab(t, self.tol)?;
        let a12_pinv = (sys.a12)(t) * pinv;
        let n_b = sys.dims.n_b;
        Ok(ReducedMatrices {
            a0: (sys.a11)(t) - &a12_pinv * sys.stack_coupling(t),
            b0: (sys.b1)(t) - &a12_pinv * sys.stack_input(t),
            d0: (sys.f1)(t) - &a12_pinv * sys.stack_param(t),
            y_injection: a12_pinv.columns(n_b, sys.dims.r).into_owned(),
        })
    }
}

/// Algebraic state recovered from `x_a`, `θ` and the measured output.
pub fn solve_xb(
    sys: &SemiExplicitDescriptor,
    t: f64,
    x_a: &Vector,
    theta: &Vector,
    y: &Vector,
    tol: f64,
) -> Result<Vector, DescriptorError> {
    let pinv = sys.pinv_ab(t, tol)?;
    let known = sys.stack_coupling(t) * x_a + sys.stack_input(t) * (sys.u)(t) + sys.stack_param(t) * theta;
    Ok(&pinv * (sys.stack_output(y) - known))
}

/// One sample of a simulated plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSample {
    pub x_a: Vector,
    pub x_b: Vector,
    pub u: Vector,
    pub y: Vector,
}

/// A simulated plant whose state is integrated alongside an observer. The
/// observer only ever sees `u` and `y` of the sample at the current stage
/// time.
pub trait PlantOracle: Send + Sync {
    fn state_dim(&self) -> usize;
    fn initial_state(&self) -> Vector;
    fn rhs(&self, t: f64, state: &Vector) -> Vector;
    fn sample(&self, t: f64, state: &Vector) -> PlantSample;
}

/// Plant oracle for descriptor systems with invertible `A22(t)`.
#[derive(Debug, Clone)]
pub struct InvertibleA22Plant {
    pub sys: SemiExplicitDescriptor,
    pub theta: Vector,
    pub x_a0: Vector,
}

impl PlantOracle for InvertibleA22Plant {
    fn state_dim(&self) -> usize {
        self.sys.dims.n_a
    }

    fn initial_state(&self) -> Vector {
        self.x_a0.clone()
    }

    fn rhs(&self, t: f64, x_a: &Vector) -> Vector {
        let x_b = algebraic_state_invertible_a22(&self.sys, t, x_a, &self.theta)
            .unwrap_or_else(|_| Vector::from_element(self.sys.dims.n_b, f64::NAN));
        self.sys.differential_rhs(t, x_a, &x_b, &self.theta)
    }

    fn sample(&self, t: f64, x_a: &Vector) -> PlantSample {
        let x_b = algebraic_state_invertible_a22(&self.sys, t, x_a, &self.theta)
            .unwrap_or_else(|_| Vector::from_element(self.sys.dims.n_b, f64::NAN));
        PlantSample {
            y: self.sys.output(t, x_a, &x_b),
            u: (self.sys.u)(t),
            x_a: x_a.clone(),
            x_b,
        }
    }
}

/// `x_b = −A22⁻¹(A21 x_a + B2 u + F2 θ)`.
pub fn algebraic_state_invertible_a22(
    sys: &SemiExplicitDescriptor,
    t: f64,
    x_a: &Vector,
    theta: &Vector,
) -> Result<Vector, DescriptorError> {
    let a22 = (sys.a22)(t);
    if numerics::determinant(&a22).abs() < 1e-12 {
        return Err(DescriptorError::SingularA22 { time: t });
    }
    let rhs = (sys.a21)(t) * x_a + (sys.b2)(t) * (sys.u)(t) + (sys.f2)(t) * theta;
    a22.lu().solve(&(-rhs)).ok_or(DescriptorError::SingularA22 { time: t })
}

/// Reference simulation for systems whose `A22(t)` is invertible: the
/// algebraic rows are eliminated exactly and `x_a` is integrated by RK4.
pub fn simulate_ground_truth_invertible_a22(
    sys: &SemiExplicitDescriptor,
    x_a0: &Vector,
    theta: &Vector,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory<PlantSample>, DescriptorError> {
    let n = step_count(t0, t1, h)?;
    for k in 0..=n {
        let t = grid_time(t0, h, k);
        if numerics::determinant(&(sys.a22)(t)).abs() < 1e-12 {
            return Err(DescriptorError::SingularA22 { time: t });
        }
    }
    let rhs = |t: f64, x_a: &Vector| -> Vector {
        let x_b = algebraic_state_invertible_a22(sys, t, x_a, theta).expect("checked on grid");
        sys.differential_rhs(t, x_a, &x_b, theta)
    };
    let traj = numerics::integrate_fixed_step(rhs, t0, x_a0, t1, h)?;
    let mut states = Vec::with_capacity(traj.len());
    for (t, x_a) in traj.iter() {
        let x_b = algebraic_state_invertible_a22(sys, t, x_a, theta)?;
        let y = sys.output(t, x_a, &x_b);
        states.push(PlantSample {
            x_a: x_a.clone(),
            x_b,
            u: (sys.u)(t),
            y,
        });
    }
    Ok(Trajectory {
        times: traj.times,
        states,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DEFAULT_RANK_TOL;

    fn dims(n_a: usize, n_b: usize, m: usize, r: usize, q: usize) -> Dimensions {
        Dimensions { n_a, n_b, m, r, q }
    }

    /// Two differential states, one algebraic state with invertible,
    /// time-varying A22, one parameter.
    pub(crate) fn small_ltv() -> SemiExplicitDescriptor {
        SemiExplicitDescriptor::builder(dims(2, 1, 1, 1, 1))
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
            .unwrap()
    }

    #[test]
    fn stack_ab_shape_and_layout() {
        let sys = SemiExplicitDescriptor::builder(dims(2, 2, 1, 1, 0))
            .a22(|_| Matrix::identity(2, 2))
            .build()
            .unwrap();
        let ab = sys.stack_ab(0.3);
        assert_eq!(ab.shape(), (3, 2));
        assert_eq!(ab.rows(0, 2), Matrix::identity(2, 2));
        assert_eq!(ab.row(2).amax(), 0.0);
    }

    #[test]
    fn builder_rejects_wrong_shape() {
        let err = SemiExplicitDescriptor::builder(dims(2, 1, 1, 1, 0))
            .a11(|_| Matrix::zeros(3, 3))
            .build()
            .unwrap_err();
        assert!(matches!(err, DescriptorError::Dimension { block: "A11", .. }));
    }

    #[test]
    fn zero_algebraic_blocks_fail_observability_at_start() {
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0)).build().unwrap();
        let rep = check_impulse_observability_grid(&sys, 0.5, 1.0, 0.1, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.first_failure, Some(0.5));
    }

    #[test]
    fn lti_rank_identity_by_brute_force() {
        // E = diag(1, 0), A = I, C = (1, 0)
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0))
            .a11(|_| Matrix::identity(1, 1))
            .a22(|_| Matrix::identity(1, 1))
            .ca(|_| Matrix::identity(1, 1))
            .time_invariant(true)
            .build()
            .unwrap();
        let big = impulse_rank_matrix(&sys, 0.0);
        let expected = Matrix::from_row_slice(
            5,
            4,
            &[
                1., 0., 1., 0., //
                0., 0., 0., 1., //
                0., 0., 1., 0., //
                0., 0., 1., 0., //
                0., 0., 0., 0.,
            ],
        );
        assert_eq!(big, expected);
        // rows 1, 2, 3 are independent, row 4 repeats row 3, row 5 is zero
        let rep = check_impulse_observability_grid(&sys, 0.0, 1.0, 0.5, DEFAULT_RANK_TOL).unwrap();
        assert!(rep.pass);
        let lti = rep.lti_rank.unwrap();
        assert_eq!((lti.stacked_rank, lti.required_rank), (3, 3));
        assert!(lti.pass);
    }

    #[test]
    fn lti_rank_identity_fails_without_algebraic_information() {
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0))
            .a11(|_| Matrix::identity(1, 1))
            .ca(|_| Matrix::identity(1, 1))
            .time_invariant(true)
            .build()
            .unwrap();
        let rep = check_impulse_observability_grid(&sys, 0.0, 1.0, 0.5, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.pass);
        assert!(!rep.lti_rank.unwrap().pass);
    }

    #[test]
    fn decoupled_reduction_is_identity_map() {
        let sys = SemiExplicitDescriptor::builder(dims(2, 1, 1, 1, 1))
            .a11(|t| Matrix::from_row_slice(2, 2, &[t, 1., 2., 3.]))
            .a22(|_| Matrix::identity(1, 1))
            .b1(|_| Matrix::from_row_slice(2, 1, &[1., 2.]))
            .f1(|_| Matrix::from_row_slice(2, 1, &[4., 5.]))
            .build()
            .unwrap();
        let red = reduce_to_ode(&sys, DEFAULT_RANK_TOL).at(0.7).unwrap();
        assert_eq!(red.a0, (sys.a11)(0.7));
        assert_eq!(red.b0, (sys.b1)(0.7));
        assert_eq!(red.d0, (sys.f1)(0.7));
        assert_eq!(red.y_injection, Matrix::zeros(2, 1));
    }

    #[test]
    fn no_parameters_gives_empty_d0() {
        let sys = SemiExplicitDescriptor::builder(dims(2, 1, 1, 1, 0))
            .a22(|_| Matrix::identity(1, 1))
            .build()
            .unwrap();
        let red = reduce_to_ode(&sys, DEFAULT_RANK_TOL).at(0.0).unwrap();
        assert_eq!(red.d0.shape(), (2, 0));
    }

    #[test]
    fn d0_columns_match_unit_parameter_directions() {
        let sys = small_ltv();
        let red = reduce_to_ode(&sys, DEFAULT_RANK_TOL).at(1.3).unwrap();
        let pinv = sys.pinv_ab(1.3, DEFAULT_RANK_TOL).unwrap();
        let e = Vector::from_element(1, 1.0);
        let col = (sys.f1)(1.3) * &e - (sys.a12)(1.3) * &pinv * (sys.stack_param(1.3) * &e);
        assert_eq!(red.d0.column(0).into_owned(), col);
    }

    #[test]
    fn reduction_reports_rank_loss_time() {
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0))
            .a22(|t| Matrix::from_element(1, 1, t - 1.0))
            .build()
            .unwrap();
        let err = reduce_to_ode(&sys, DEFAULT_RANK_TOL).at(1.0).unwrap_err();
        assert!(matches!(err, DescriptorError::RankDeficient { time, .. } if time == 1.0));
    }

    #[test]
    fn solve_xb_with_zero_inputs_is_zero() {
        let sys = small_ltv();
        let xb = solve_xb(
            &sys,
            0.0,
            &Vector::zeros(2),
            &Vector::zeros(1),
            &Vector::zeros(1),
            DEFAULT_RANK_TOL,
        );
        // u(0) = sin 0 = 0
        assert!(xb.unwrap().amax() < 1e-15);
    }

    #[test]
    fn solve_xb_ignores_output_when_cb_is_zero() {
        let base = small_ltv();
        let sys = SemiExplicitDescriptor {
            cb: constant_matrix(Matrix::zeros(1, 1)),
            ..base
        };
        let t = 0.9;
        let x_a = Vector::from_vec(vec![0.4, -1.1]);
        let theta = Vector::from_element(1, 0.8);
        let direct = algebraic_state_invertible_a22(&sys, t, &x_a, &theta).unwrap();
        for y in [-3.0, 0.0, 5.0] {
            let xb = solve_xb(&sys, t, &x_a, &theta, &Vector::from_element(1, y), DEFAULT_RANK_TOL).unwrap();
            assert!((xb - &direct).amax() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_satisfies_algebraic_rows_and_solve_xb() {
        let sys = small_ltv();
        let theta = Vector::from_element(1, 0.6);
        let traj =
            simulate_ground_truth_invertible_a22(&sys, &Vector::from_vec(vec![1.0, -0.5]), &theta, 0.0, 5.0, 1e-3)
                .unwrap();
        for (t, s) in traj.iter() {
            assert!(sys.algebraic_residual(t, &s.x_a, &s.x_b, &theta).amax() < 1e-8);
            assert_eq!(s.y, sys.output(t, &s.x_a, &s.x_b));
            let xb = solve_xb(&sys, t, &s.x_a, &theta, &s.y, DEFAULT_RANK_TOL).unwrap();
            assert!((xb - &s.x_b).amax() < 1e-6);
        }
    }

    #[test]
    fn decoupled_ground_truth() {
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0))
            .a11(|_| Matrix::from_element(1, 1, -1.0))
            .a22(|_| Matrix::from_element(1, 1, 2.0))
            .b2(|_| Matrix::from_element(1, 1, 1.0))
            .input(|t| Vector::from_element(1, t.cos()))
            .build()
            .unwrap();
        let traj = simulate_ground_truth_invertible_a22(
            &sys,
            &Vector::from_element(1, 1.0),
            &Vector::zeros(0),
            0.0,
            1.0,
            1e-3,
        )
        .unwrap();
        for (t, s) in traj.iter() {
            assert!((s.x_a[0] - (-t).exp()).abs() < 1e-10);
            assert!((s.x_b[0] + 0.5 * t.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_a22_rejected() {
        let sys = SemiExplicitDescriptor::builder(dims(1, 1, 1, 1, 0)).build().unwrap();
        let err = simulate_ground_truth_invertible_a22(&sys, &Vector::zeros(1), &Vector::zeros(0), 0.0, 1.0, 0.1)
            .unwrap_err();
        assert_eq!(err, DescriptorError::SingularA22 { time: 0.0 });
    }
}
