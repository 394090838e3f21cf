//! Composite models integrated by the run loop. Each packs plant, observer
//! extension and regressor-extension filters into one flat RK4 state. The
//! parameter estimate is held outside that state and frozen over a step.

use std::cell::RefCell;

use super::HarnessError;
use crate::canonical::{
    extract_y_w, scf_sample, strangeness_free_solve, za_extension_rhs, za_regression, StandardCanonicalForm,
    ZaExtension, ZwObserver,
};
use crate::descriptor::{reduce_to_ode, PlantOracle, ReducedOde, SemiExplicitDescriptor};
use crate::estimation::ExtensionFilters;
use crate::gpebo::{
    consistency_regression, extension_rhs, reconstruct_state, regression_sample, true_eta, GpeboExtension,
    RegressionSample,
};
use crate::numerics::{condition_number, Vector};

/// Everything the run loop records at one grid time.
#[derive(Debug, Clone)]
pub struct Record {
    /// Regression rows that drive the estimator.
    pub reg: RegressionSample,
    /// `max |Y − ψ η_true|` over the driving rows.
    pub lre_residual: f64,
    /// Same over every available regression row.
    pub all_rows_residual: f64,
    pub truth_diff: Vector,
    pub truth_alg: Vector,
    pub est_diff: Vector,
    pub est_alg: Vector,
    pub phi_cond: f64,
    /// `ẑ_w` error, for the z_w path.
    pub zw_error: Option<f64>,
}

pub trait Model {
    fn state_len(&self) -> usize;
    fn initial_state(&self) -> Vector;
    fn filters(&self) -> &ExtensionFilters;
    fn filters_offset(&self) -> usize;
    fn eta_true(&self) -> Vector;
    fn rhs(&self, t: f64, x: &Vector, eta_hat: &Vector) -> Result<Vector, HarnessError>;
    fn record(&self, t: f64, x: &Vector, eta_hat: &Vector) -> Result<Record, HarnessError>;
    /// Column labels of the differential and algebraic state blocks.
    fn state_labels(&self) -> (Vec<String>, Vec<String>);

    fn filters_at(&self, x: &Vector) -> ExtensionFilters {
        let off = self.filters_offset();
        let len = ExtensionFilters::flat_len(self.filters().p());
        self.filters().with_flat(&x.as_slice()[off..off + len])
    }
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Runs `f` inside an RK4 stage; the first error is parked in `slot`.
pub fn guarded<F>(slot: &RefCell<Option<HarnessError>>, n: usize, f: F) -> Vector
where
    F: FnOnce() -> Result<Vector, HarnessError>,
{
    match f() {
        Ok(v) => v,
        Err(e) => {
            slot.borrow_mut().get_or_insert(e);
            Vector::from_element(n, f64::NAN)
        }
    }
}

/// Semi-explicit descriptor plant observed by the GPEBO of the reduced ODE.
pub struct DescriptorModel {
    pub sys: SemiExplicitDescriptor,
    pub red: ReducedOde,
    pub plant: std::sync::Arc<dyn PlantOracle>,
    pub ext0: GpeboExtension,
    pub filters: ExtensionFilters,
    pub rows: Vec<usize>,
    /// The driving rows are exactly the output rows.
    pub output_rows: bool,
    pub theta: Vector,
    pub x_a0: Vector,
    pub tol: f64,
}

impl DescriptorModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: SemiExplicitDescriptor,
        plant: std::sync::Arc<dyn PlantOracle>,
        xi_a0: Vector,
        filters: ExtensionFilters,
        rows: Vec<usize>,
        theta: Vector,
        x_a0: Vector,
        tol: f64,
    ) -> Self {
        let (n_b, r) = (sys.dims.n_b, sys.dims.r);
        let output_rows = rows == (n_b..n_b + r).collect::<Vec<_>>();
        Self {
            red: reduce_to_ode(&sys, tol),
            ext0: GpeboExtension::initial(xi_a0, sys.dims.q),
            sys,
            plant,
            filters,
            rows,
            output_rows,
            theta,
            x_a0,
            tol,
        }
    }

    fn split(&self, x: &Vector) -> (Vector, GpeboExtension) {
        let np = self.plant.state_dim();
        let s = x.as_slice();
        (
            Vector::from_column_slice(&s[..np]),
            GpeboExtension::read_flat(&s[np..], self.sys.dims.n_a, self.sys.dims.q),
        )
    }

    fn regression(&self, t: f64, ext: &GpeboExtension, y: &Vector) -> Result<RegressionSample, HarnessError> {
        Ok(if self.output_rows {
            regression_sample(&self.sys, t, ext, y, self.tol)?
        } else {
            consistency_regression(&self.sys, t, ext, y, self.tol)?.select_rows(&self.rows)
        })
    }
}

impl Model for DescriptorModel {
    fn state_len(&self) -> usize {
        self.plant.state_dim()
            + GpeboExtension::flat_len(self.sys.dims.n_a, self.sys.dims.q)
            + ExtensionFilters::flat_len(self.filters.p())
    }

    fn initial_state(&self) -> Vector {
        let mut x = Vector::zeros(self.state_len());
        let np = self.plant.state_dim();
        x.rows_mut(0, np).copy_from(&self.plant.initial_state());
        self.ext0.write_flat(&mut x.as_mut_slice()[np..]);
        let off = self.filters_offset();
        self.filters.write_flat(&mut x.as_mut_slice()[off..]);
        x
    }

    fn filters(&self) -> &ExtensionFilters {
        &self.filters
    }

    fn filters_offset(&self) -> usize {
        self.plant.state_dim() + GpeboExtension::flat_len(self.sys.dims.n_a, self.sys.dims.q)
    }

    fn eta_true(&self) -> Vector {
        true_eta(&self.ext0, &self.x_a0, &self.theta)
    }

    fn rhs(&self, t: f64, x: &Vector, _eta_hat: &Vector) -> Result<Vector, HarnessError> {
        let (ps, ext) = self.split(x);
        let sample = self.plant.sample(t, &ps);
        let mut out = Vector::zeros(x.len());
        let np = self.plant.state_dim();
        out.rows_mut(0, np).copy_from(&self.plant.rhs(t, &ps));
        extension_rhs(&self.red, t, &ext, &sample.y)?.write_flat(&mut out.as_mut_slice()[np..]);
        let reg = self.regression(t, &ext, &sample.y)?;
        let off = self.filters_offset();
        self.filters_at(x).rhs(&reg)?.write_flat(&mut out.as_mut_slice()[off..]);
        Ok(out)
    }

    fn record(&self, t: f64, x: &Vector, eta_hat: &Vector) -> Result<Record, HarnessError> {
        let (ps, ext) = self.split(x);
        let sample = self.plant.sample(t, &ps);
        let eta = self.eta_true();
        let reg = self.regression(t, &ext, &sample.y)?;
        let all = consistency_regression(&self.sys, t, &ext, &sample.y, self.tol)?;
        let (xa_hat, xb_hat) = reconstruct_state(&self.sys, t, &ext, eta_hat, &sample.y, self.tol)?;
        Ok(Record {
            lre_residual: reg.residual(&eta).amax(),
            all_rows_residual: all.residual(&eta).amax(),
            reg,
            truth_diff: sample.x_a,
            truth_alg: sample.x_b,
            est_diff: xa_hat,
            est_alg: xb_hat,
            phi_cond: condition_number(&ext.phi),
            zw_error: None,
        })
    }

    fn state_labels(&self) -> (Vec<String>, Vec<String>) {
        (labels("x_a", self.sys.dims.n_a), labels("x_b", self.sys.dims.n_b))
    }
}

/// Canonical-form plant: GPEBO for `z_a`, and either `z_b = −f_b` or the
/// unknown-input observer for `(z_b1, z_b2)`.
pub struct CanonicalModel {
    pub scf: StandardCanonicalForm,
    pub z_a0: Vector,
    pub ext0: ZaExtension,
    pub filters: ExtensionFilters,
    pub rows: Vec<usize>,
    pub zw: Option<ZwObserver>,
    pub r0: Vector,
}

impl CanonicalModel {
    fn n_a(&self) -> usize {
        self.scf.n_a
    }

    fn split(&self, x: &Vector) -> (Vector, ZaExtension, Vector) {
        let n = self.n_a();
        let s = x.as_slice();
        let off = self.filters_offset() + ExtensionFilters::flat_len(self.filters.p());
        (
            Vector::from_column_slice(&s[..n]),
            ZaExtension::read_flat(&s[n..], n),
            Vector::from_column_slice(&s[off..]),
        )
    }

    fn regression(&self, t: f64, ext: &ZaExtension, y: &Vector) -> Result<RegressionSample, HarnessError> {
        let zb = match self.zw {
            None => Some(strangeness_free_solve(&self.scf, t)?),
            Some(_) => None,
        };
        Ok(za_regression(&self.scf, t, ext, &self.rows, y, zb.as_ref()))
    }
}

impl Model for CanonicalModel {
    fn state_len(&self) -> usize {
        self.filters_offset() + ExtensionFilters::flat_len(self.filters.p()) + self.r0.len()
    }

    fn initial_state(&self) -> Vector {
        let n = self.n_a();
        let mut x = Vector::zeros(self.state_len());
        x.rows_mut(0, n).copy_from(&self.z_a0);
        self.ext0.write_flat(&mut x.as_mut_slice()[n..]);
        let off = self.filters_offset();
        self.filters.write_flat(&mut x.as_mut_slice()[off..]);
        let roff = off + ExtensionFilters::flat_len(self.filters.p());
        x.rows_mut(roff, self.r0.len()).copy_from(&self.r0);
        x
    }

    fn filters(&self) -> &ExtensionFilters {
        &self.filters
    }

    fn filters_offset(&self) -> usize {
        self.n_a() + ZaExtension::flat_len(self.n_a())
    }

    fn eta_true(&self) -> Vector {
        &self.ext0.xi_a - &self.z_a0
    }

    fn rhs(&self, t: f64, x: &Vector, eta_hat: &Vector) -> Result<Vector, HarnessError> {
        let n = self.n_a();
        let (z_a, ext, r) = self.split(x);
        let y = scf_sample(&self.scf, t, &z_a)?.y;
        let mut out = Vector::zeros(x.len());
        out.rows_mut(0, n)
            .copy_from(&((self.scf.aa)(t) * &z_a + (self.scf.fa)(t)));
        za_extension_rhs(&self.scf, t, &ext).write_flat(&mut out.as_mut_slice()[n..]);
        let off = self.filters_offset();
        let reg = self.regression(t, &ext, &y)?;
        self.filters_at(x).rhs(&reg)?.write_flat(&mut out.as_mut_slice()[off..]);
        if let Some(obs) = &self.zw {
            let y_w = extract_y_w(&obs.zw, t, &y, &ext.estimate(eta_hat));
            let (r_dot, _) = obs.rhs(t, &r, y_w);
            let roff = off + ExtensionFilters::flat_len(self.filters.p());
            out.rows_mut(roff, 2).copy_from(&r_dot);
        }
        Ok(out)
    }

    fn record(&self, t: f64, x: &Vector, eta_hat: &Vector) -> Result<Record, HarnessError> {
        let (z_a, ext, r) = self.split(x);
        let smp = scf_sample(&self.scf, t, &z_a)?;
        let reg = self.regression(t, &ext, &smp.y)?;
        let eta = self.eta_true();
        let za_hat = ext.estimate(eta_hat);
        let (truth_alg, est_alg, zw_error) = match &self.zw {
            None => (smp.z_b.clone(), strangeness_free_solve(&self.scf, t)?, None),
            Some(obs) => {
                let y_w = extract_y_w(&obs.zw, t, &smp.y, &za_hat);
                let zw_hat = obs.estimate(t, &r, y_w);
                let truth = smp.z_b.rows(0, 2).into_owned();
                let err = (&zw_hat - &truth).norm();
                (truth, zw_hat, Some(err))
            }
        };
        let res = reg.residual(&eta).amax();
        Ok(Record {
            lre_residual: res,
            all_rows_residual: res,
            reg,
            truth_diff: smp.z_a,
            truth_alg,
            est_diff: za_hat,
            est_alg,
            phi_cond: condition_number(&ext.phi_a),
            zw_error,
        })
    }

    fn state_labels(&self) -> (Vec<String>, Vec<String>) {
        let alg = if self.zw.is_some() { 2 } else { self.scf.n_b };
        (labels("z_a", self.n_a()), labels("z_b", alg))
    }
}
