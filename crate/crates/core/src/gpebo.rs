//! Generalized parameter estimation-based observer for semi-explicit
//! descriptor systems.
//!
//! The observer runs a dynamic extension `(ξa, ξb, Φ)` driven by `u` and
//! `y`. Along any plant trajectory the error `e = ξa + ξb θ − x_a` obeys
//! `ė = A0 e`, hence `x_a = ξa + ξb θ − Φ e0`, and the output turns into a
//! linear regression `Y = ψ η` in the constant unknown `η = (θ, e0)`.
//!
//! Two regression builders are provided:
//!
//! * [`regression_sample`] uses the output rows only,
//!   `Y = y − Ca ξa − Cb 𝒜_b†[0; y] + Cb 𝒜_b†[A21; Ca] ξa + Cb 𝒜_b†[B2; 0] u`.
//! * [`consistency_regression`] uses every row of the solvability condition
//!   `(I − 𝒜_b 𝒜_b†) w = 0` of the stacked algebraic system
//!   `𝒜_b x_b = w`. Its last `r` rows are exactly the output-row
//!   regression. The remaining rows matter whenever `A22` has zero rows:
//!   the constraints they carry are dropped by `𝒜_b†` and the output rows
//!   can then be identically zero (the time-varying circuit benchmark is
//!   such a case).

use serde::{Deserialize, Serialize};

use crate::descriptor::{solve_xb, DescriptorError, ReducedOde, SemiExplicitDescriptor};
use crate::numerics::{Matrix, Vector};

/// Observer-side state of the dynamic extension.
#[derive(Debug, Clone, PartialEq)]
pub struct GpeboExtension {
    pub xi_a: Vector,
    /// `n_a × q`; empty when the system has no unknown parameters.
    pub xi_b: Matrix,
    pub phi: Matrix,
}

impl GpeboExtension {
    /// `ξa(t0) = xi_a0`, `ξb(t0) = 0`, `Φ(t0) = I`.
    pub fn initial(xi_a0: Vector, q: usize) -> Self {
        let n_a = xi_a0.len();
        Self {
            xi_a: xi_a0,
            xi_b: Matrix::zeros(n_a, q),
            phi: Matrix::identity(n_a, n_a),
        }
    }

    pub fn zeros(n_a: usize, q: usize) -> Self {
        Self {
            xi_a: Vector::zeros(n_a),
            xi_b: Matrix::zeros(n_a, q),
            phi: Matrix::zeros(n_a, n_a),
        }
    }

    pub fn flat_len(n_a: usize, q: usize) -> usize {
        n_a + n_a * q + n_a * n_a
    }

    pub fn n_a(&self) -> usize {
        self.xi_a.len()
    }

    pub fn q(&self) -> usize {
        self.xi_b.ncols()
    }

    /// Column-major packing `[ξa, vec(ξb), vec(Φ)]`.
    pub fn write_flat(&self, out: &mut [f64]) {
        let n_a = self.n_a();
        let nb = n_a * self.q();
        out[..n_a].copy_from_slice(self.xi_a.as_slice());
        out[n_a..n_a + nb].copy_from_slice(self.xi_b.as_slice());
        out[n_a + nb..n_a + nb + n_a * n_a].copy_from_slice(self.phi.as_slice());
    }

    pub fn read_flat(flat: &[f64], n_a: usize, q: usize) -> Self {
        let nb = n_a * q;
        Self {
            xi_a: Vector::from_column_slice(&flat[..n_a]),
            xi_b: Matrix::from_column_slice(n_a, q, &flat[n_a..n_a + nb]),
            phi: Matrix::from_column_slice(n_a, n_a, &flat[n_a + nb..n_a + nb + n_a * n_a]),
        }
    }
}

/// Time derivative of the dynamic extension:
/// `ξ̇a = A0 ξa + B0 u + A12 𝒜_b†[0; y]`, `ξ̇b = A0 ξb + D0`, `Φ̇ = A0 Φ`.
pub fn extension_rhs(
    red: &ReducedOde,
    t: f64,
    ext: &GpeboExtension,
    y: &Vector,
) -> Result<GpeboExtension, DescriptorError> {
    let m = red.at(t)?;
    let u = (red.sys.u)(t);
    Ok(GpeboExtension {
        xi_a: &m.a0 * &ext.xi_a + &m.b0 * u + &m.y_injection * y,
        xi_b: &m.a0 * &ext.xi_b + &m.d0,
        phi: &m.a0 * &ext.phi,
    })
}

/// One measurable sample of the regression `Y = ψ η`, `η = (θ, e0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub t: f64,
    pub y: Vector,
    /// `[ψ1 ψ2]`, `ψ1` of width `q`, `ψ2` of width `n_a`.
    pub psi: Matrix,
    pub q: usize,
}

impl RegressionSample {
    pub fn psi1(&self) -> Matrix {
        self.psi.columns(0, self.q).into_owned()
    }

    pub fn psi2(&self) -> Matrix {
        self.psi.columns(self.q, self.psi.ncols() - self.q).into_owned()
    }

    pub fn residual(&self, eta: &Vector) -> Vector {
        &self.y - &self.psi * eta
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            t: self.t,
            y: self.y.select_rows(rows),
            psi: self.psi.select_rows(rows),
            q: self.q,
        }
    }
}

/// Output-row regression. Terms are assembled one by one from their
/// closed forms rather than through the projector, so this doubles as an
/// independent check of [`consistency_regression`].
pub fn regression_sample(
    sys: &SemiExplicitDescriptor,
    t: f64,
    ext: &GpeboExtension,
    y: &Vector,
    tol: f64,
) -> Result<RegressionSample, DescriptorError> {
    let pinv = sys.pinv_ab(t, tol)?;
    let cb_pinv = (sys.cb)(t) * &pinv;
    let ca = (sys.ca)(t);
    let cb_pinv_g = &cb_pinv * sys.stack_coupling(t);
    let u = (sys.u)(t);

    let big_y = y - &ca * &ext.xi_a - &cb_pinv * sys.stack_output(y)
        + &cb_pinv_g * &ext.xi_a
        + &cb_pinv * sys.stack_input(t) * u;
    let psi1 = (&ca - &cb_pinv_g) * &ext.xi_b - &cb_pinv * sys.stack_param(t);
    let psi2 = (&cb_pinv_g - &ca) * &ext.phi;
    Ok(RegressionSample {
        t,
        y: big_y,
        psi: crate::descriptor::hstack(&psi1, &psi2),
        q: sys.dims.q,
    })
}

/// Regression from the full solvability condition of `𝒜_b x_b = w`, with
/// `w = [−A21 x_a − B2 u − F2 θ; y − Ca x_a]`. Returns `n_b + r` rows; the
/// projector `I − 𝒜_b 𝒜_b†` has rank `r`, so at most `r` of them are
/// independent.
pub fn consistency_regression(
    sys: &SemiExplicitDescriptor,
    t: f64,
    ext: &GpeboExtension,
    y: &Vector,
    tol: f64,
) -> Result<RegressionSample, DescriptorError> {
    let proj = consistency_projector(sys, t, tol)?;
    let g = sys.stack_coupling(t);
    let known = sys.stack_output(y) - sys.stack_input(t) * (sys.u)(t);
    let big_y = &proj * (known - &g * &ext.xi_a);
    let psi1 = &proj * (&g * &ext.xi_b + sys.stack_param(t));
    let psi2 = -(&proj * &g * &ext.phi);
    Ok(RegressionSample {
        t,
        y: big_y,
        psi: crate::descriptor::hstack(&psi1, &psi2),
        q: sys.dims.q,
    })
}

/// `I − 𝒜_b 𝒜_b†`, the orthogonal projector onto the left null space of
/// `𝒜_b`.
pub fn consistency_projector(sys: &SemiExplicitDescriptor, t: f64, tol: f64) -> Result<Matrix, DescriptorError> {
    let ab = sys.stack_ab(t);
    let pinv = sys.pinv_ab(t, tol)?;
    let k = ab.nrows();
    Ok(Matrix::identity(k, k) - ab * pinv)
}

/// Which rows of the consistency condition feed the estimator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LreRows {
    /// The `r` output rows (the last `r` rows of the consistency condition).
    #[default]
    Output,
    /// The `r` rows with the largest projector diagonal at the initial
    /// time, picked greedily.
    Auto,
    /// Explicit row indices into the `n_b + r` consistency rows.
    Indices(Vec<usize>),
}

impl LreRows {
    /// Resolves to concrete row indices for `sys` at time `t`.
    pub fn resolve(&self, sys: &SemiExplicitDescriptor, t: f64, tol: f64) -> Result<Vec<usize>, DescriptorError> {
        let (n_b, r) = (sys.dims.n_b, sys.dims.r);
        Ok(match self {
            LreRows::Output => (n_b..n_b + r).collect(),
            LreRows::Indices(ix) => ix.clone(),
            LreRows::Auto => {
                let proj = consistency_projector(sys, t, tol)?;
                let mut order: Vec<usize> = (0..n_b + r).collect();
                // stable sort: ties keep the lower index
                order.sort_by(|&i, &j| proj[(j, j)].total_cmp(&proj[(i, i)]));
                let mut picked: Vec<usize> = order.into_iter().take(r).collect();
                picked.sort_unstable();
                picked
            }
        })
    }
}

/// Regressor of the parameter-free case: `ψ0 = −(Ca − Cb 𝒜_b†[A21; Ca]) Φ`.
pub fn reduced_regressor(
    sys: &SemiExplicitDescriptor,
    t: f64,
    phi: &Matrix,
    tol: f64,
) -> Result<Matrix, DescriptorError> {
    let pinv = sys.pinv_ab(t, tol)?;
    let ca = (sys.ca)(t);
    let cb_pinv_g = (sys.cb)(t) * pinv * sys.stack_coupling(t);
    Ok(-((ca - cb_pinv_g) * phi))
}

/// Certainty-equivalent state estimate from `η̂ = (θ̂, ê0)`:
/// `x̂_a = ξa + ξb θ̂ − Φ ê0`, and `x̂_b` from the algebraic rows.
pub fn reconstruct_state(
    sys: &SemiExplicitDescriptor,
    t: f64,
    ext: &GpeboExtension,
    eta_hat: &Vector,
    y: &Vector,
    tol: f64,
) -> Result<(Vector, Vector), DescriptorError> {
    let q = sys.dims.q;
    let theta_hat = eta_hat.rows(0, q).into_owned();
    let e0_hat = eta_hat.rows(q, eta_hat.len() - q).into_owned();
    let x_a = &ext.xi_a + &ext.xi_b * &theta_hat - &ext.phi * e0_hat;
    let x_b = solve_xb(sys, t, &x_a, &theta_hat, y, tol)?;
    Ok((x_a, x_b))
}

/// `η = (θ, e0)` with `e0 = ξa(t0) + ξb(t0) θ − x_a(t0)`.
pub fn true_eta(ext0: &GpeboExtension, x_a0: &Vector, theta: &Vector) -> Vector {
    let e0 = &ext0.xi_a + &ext0.xi_b * theta - x_a0;
    let mut eta = Vector::zeros(theta.len() + e0.len());
    eta.rows_mut(0, theta.len()).copy_from(theta);
    eta.rows_mut(theta.len(), e0.len()).copy_from(&e0);
    eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{reduce_to_ode, simulate_ground_truth_invertible_a22, Dimensions};
    use crate::numerics::{integrate_fixed_step, DEFAULT_RANK_TOL};

    fn small_ltv(q: usize) -> SemiExplicitDescriptor {
        let b = SemiExplicitDescriptor::builder(Dimensions {
            n_a: 2,
            n_b: 1,
            m: 1,
            r: 1,
            q,
        })
        .a11(|t| Matrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.0 - 0.2 * t.sin(), -0.1]))
        .a12(|_| Matrix::from_row_slice(2, 1, &[0.5, -0.4]))
        .a21(|t| Matrix::from_row_slice(1, 2, &[1.0, 0.3 * t.cos()]))
        .a22(|t| Matrix::from_element(1, 1, -(2.0 + t.sin())))
        .b1(|_| Matrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .b2(|_| Matrix::from_element(1, 1, 0.5))
        .ca(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
        .cb(|_| Matrix::from_element(1, 1, 0.7))
        .input(|t| Vector::from_element(1, t.sin()));
        if q == 1 {
            b.f1(|t| Matrix::from_row_slice(2, 1, &[(2.0 * t).cos(), 0.0]))
                .f2(|_| Matrix::from_element(1, 1, 0.2))
                .build()
                .unwrap()
        } else {
            b.build().unwrap()
        }
    }

    /// Runs the plant oracle and the extension side by side and returns the
    /// extension trajectory together with the plant samples.
    fn run_extension(
        sys: &SemiExplicitDescriptor,
        theta: &Vector,
        x_a0: &Vector,
        xi_a0: &Vector,
        t1: f64,
        h: f64,
    ) -> (Vec<f64>, Vec<GpeboExtension>, Vec<crate::descriptor::PlantSample>) {
        let (n_a, q) = (sys.dims.n_a, sys.dims.q);
        let red = reduce_to_ode(sys, DEFAULT_RANK_TOL);
        let ext_len = GpeboExtension::flat_len(n_a, q);
        let mut x0 = Vector::zeros(n_a + ext_len);
        x0.rows_mut(0, n_a).copy_from(x_a0);
        GpeboExtension::initial(xi_a0.clone(), q).write_flat(&mut x0.as_mut_slice()[n_a..]);
        let rhs = |t: f64, x: &Vector| {
            let x_a = x.rows(0, n_a).into_owned();
            let x_b = crate::descriptor::algebraic_state_invertible_a22(sys, t, &x_a, theta).unwrap();
            let y = sys.output(t, &x_a, &x_b);
            let ext = GpeboExtension::read_flat(&x.as_slice()[n_a..], n_a, q);
            let d = extension_rhs(&red, t, &ext, &y).unwrap();
            let mut out = Vector::zeros(x.len());
            out.rows_mut(0, n_a)
                .copy_from(&sys.differential_rhs(t, &x_a, &x_b, theta));
            d.write_flat(&mut out.as_mut_slice()[n_a..]);
            out
        };
        let traj = integrate_fixed_step(rhs, 0.0, &x0, t1, h).unwrap();
        let plant = simulate_ground_truth_invertible_a22(sys, x_a0, theta, 0.0, t1, h).unwrap();
        let exts = traj
            .states
            .iter()
            .map(|x| GpeboExtension::read_flat(&x.as_slice()[n_a..], n_a, q))
            .collect();
        (traj.times, exts, plant.states)
    }

    #[test]
    fn flat_round_trip() {
        let ext = GpeboExtension {
            xi_a: Vector::from_vec(vec![1., 2.]),
            xi_b: Matrix::from_row_slice(2, 1, &[3., 4.]),
            phi: Matrix::from_row_slice(2, 2, &[5., 6., 7., 8.]),
        };
        let mut buf = vec![0.0; GpeboExtension::flat_len(2, 1)];
        ext.write_flat(&mut buf);
        assert_eq!(GpeboExtension::read_flat(&buf, 2, 1), ext);
    }

    #[test]
    fn zero_dynamics_give_zero_derivative() {
        let sys = SemiExplicitDescriptor::builder(Dimensions {
            n_a: 2,
            n_b: 1,
            m: 1,
            r: 1,
            q: 1,
        })
        .a22(|_| Matrix::identity(1, 1))
        .build()
        .unwrap();
        let red = reduce_to_ode(&sys, DEFAULT_RANK_TOL);
        let ext = GpeboExtension::initial(Vector::from_vec(vec![1.0, -2.0]), 1);
        let d = extension_rhs(&red, 0.3, &ext, &Vector::from_element(1, 4.0)).unwrap();
        assert_eq!(d, GpeboExtension::zeros(2, 1));
    }

    #[test]
    fn output_rows_collapse_without_cb() {
        let sys = SemiExplicitDescriptor::builder(Dimensions {
            n_a: 2,
            n_b: 1,
            m: 1,
            r: 1,
            q: 0,
        })
        .a22(|_| Matrix::identity(1, 1))
        .ca(|_| Matrix::from_row_slice(1, 2, &[2.0, -1.0]))
        .build()
        .unwrap();
        let ext = GpeboExtension::initial(Vector::from_vec(vec![0.5, 1.5]), 0);
        let y = Vector::from_element(1, 3.0);
        let s = regression_sample(&sys, 0.0, &ext, &y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.y[0], 3.0 - (2.0 * 0.5 - 1.5));
        assert_eq!(s.psi2(), -(sys.ca)(0.0));
        assert_eq!(s.psi1().ncols(), 0);
    }

    #[test]
    fn error_signal_obeys_homogeneous_dynamics() {
        let sys = small_ltv(1);
        let theta = Vector::from_element(1, 0.7);
        let h = 1e-3;
        let (times, exts, plant) = run_extension(
            &sys,
            &theta,
            &Vector::from_vec(vec![1.0, -0.5]),
            &Vector::from_vec(vec![0.2, 0.4]),
            3.0,
            h,
        );
        let red = reduce_to_ode(&sys, DEFAULT_RANK_TOL);
        let e: Vec<Vector> = exts
            .iter()
            .zip(&plant)
            .map(|(x, p)| &x.xi_a + &x.xi_b * &theta - &p.x_a)
            .collect();
        for k in 1..times.len() - 1 {
            let fd = (&e[k + 1] - &e[k - 1]) / (2.0 * h);
            let model = red.at(times[k]).unwrap().a0 * &e[k];
            assert!((fd - model).amax() < 1e-5, "k = {k}");
            // e(t) = Φ(t) e(0)
            assert!((&exts[k].phi * &e[0] - &e[k]).amax() < 1e-6);
        }
    }

    #[test]
    fn regression_identity_holds_along_trajectory() {
        let sys = small_ltv(1);
        let theta = Vector::from_element(1, 0.7);
        let x_a0 = Vector::from_vec(vec![1.0, -0.5]);
        let xi_a0 = Vector::from_vec(vec![0.2, 0.4]);
        let (times, exts, plant) = run_extension(&sys, &theta, &x_a0, &xi_a0, 5.0, 1e-3);
        let eta = true_eta(&GpeboExtension::initial(xi_a0, 1), &x_a0, &theta);
        for ((t, ext), p) in times.iter().zip(&exts).zip(&plant) {
            let out = regression_sample(&sys, *t, ext, &p.y, DEFAULT_RANK_TOL).unwrap();
            assert!(out.residual(&eta).amax() < 1e-6);
            let full = consistency_regression(&sys, *t, ext, &p.y, DEFAULT_RANK_TOL).unwrap();
            assert!(full.residual(&eta).amax() < 1e-6);
            // last r rows of the consistency rows are the output rows
            let tail = full.select_rows(&[1]);
            assert!((tail.y - &out.y).amax() < 1e-12);
            assert!((tail.psi - &out.psi).amax() < 1e-12);

            let (xa_hat, xb_hat) = reconstruct_state(&sys, *t, ext, &eta, &p.y, DEFAULT_RANK_TOL).unwrap();
            assert!((xa_hat - &p.x_a).amax() < 1e-5);
            assert!((xb_hat - &p.x_b).amax() < 1e-5);
        }
    }

    #[test]
    fn parameter_free_regressor_matches_reduced_one() {
        let sys = small_ltv(0);
        let x_a0 = Vector::from_vec(vec![1.0, -0.5]);
        let xi_a0 = Vector::zeros(2);
        let (times, exts, plant) = run_extension(&sys, &Vector::zeros(0), &x_a0, &xi_a0, 2.0, 1e-2);
        for ((t, ext), p) in times.iter().zip(&exts).zip(&plant) {
            let s = regression_sample(&sys, *t, ext, &p.y, DEFAULT_RANK_TOL).unwrap();
            let psi0 = reduced_regressor(&sys, *t, &ext.phi, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(s.psi.ncols(), 2);
            assert!((s.psi - psi0).amax() < 1e-14);
        }
    }

    #[test]
    fn reconstruction_is_linear_in_initial_error() {
        let sys = small_ltv(0);
        let ext = GpeboExtension {
            xi_a: Vector::from_vec(vec![0.3, -0.2]),
            xi_b: Matrix::zeros(2, 0),
            phi: Matrix::from_row_slice(2, 2, &[1.2, 0.1, -0.3, 0.8]),
        };
        let y = Vector::from_element(1, 0.4);
        let base = Vector::from_vec(vec![0.5, 0.5]);
        let delta = Vector::from_vec(vec![0.01, -0.02]);
        let (xa0, _) = reconstruct_state(&sys, 1.0, &ext, &base, &y, DEFAULT_RANK_TOL).unwrap();
        let (xa1, _) = reconstruct_state(&sys, 1.0, &ext, &(&base + &delta), &y, DEFAULT_RANK_TOL).unwrap();
        assert!((xa1 - xa0 + &ext.phi * &delta).amax() < 1e-15);

        let plain = GpeboExtension {
            phi: Matrix::identity(2, 2),
            ..ext.clone()
        };
        let (xa, _) = reconstruct_state(&sys, 1.0, &plain, &Vector::zeros(2), &y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(xa, plain.xi_a);
    }

    #[test]
    fn auto_rows_pick_largest_projector_diagonal() {
        // zero third row of A22: the constraint lives in row 2, not the output row
        let sys = SemiExplicitDescriptor::builder(Dimensions {
            n_a: 3,
            n_b: 3,
            m: 1,
            r: 1,
            q: 0,
        })
        .a22(|_| Matrix::from_diagonal(&Vector::from_vec(vec![-4.0, -2.0, 0.0])))
        .cb(|_| Matrix::from_row_slice(1, 3, &[0., 0., 1.]))
        .build()
        .unwrap();
        assert_eq!(LreRows::Output.resolve(&sys, 0.0, DEFAULT_RANK_TOL).unwrap(), vec![3]);
        assert_eq!(LreRows::Auto.resolve(&sys, 0.0, DEFAULT_RANK_TOL).unwrap(), vec![2]);
    }
}
