//! Drift fields and their growth constants.
//!
//! A [`VectorField`] is a bounded drift f(x, t) with continuous first
//! derivatives in x. The growth machinery turns its divergence into the
//! two quantities every estimate in this crate is phrased in terms of:
//!
//! - `delta(t) = ½ sup_x |div f(x, t)|`, approximated by a max over a
//!   probe grid (exact whenever an analytic divergence is attached), and
//! - `c_f(s, t) = exp ∫_s^t delta(r) dr`, evaluated by composite Simpson.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type FieldFn<F> = dyn Fn(&[F], F, &mut [F]) + Send + Sync;
type JacobianFn<F> = dyn Fn(&[F], F, &mut [F]) + Send + Sync;
type DivergenceFn<F> = dyn Fn(&[F], F) -> F + Send + Sync;

/// A drift field f(x, t) on R^n, immutable after construction.
#[derive(Clone)]
pub struct VectorField<F: Scalar> {
    dim: usize,
    label: String,
    f: Arc<FieldFn<F>>,
    jacobian: Option<Arc<JacobianFn<F>>>,
    divergence: Option<Arc<DivergenceFn<F>>>,
    sup_norm: F,
    autonomous: bool,
}

impl<F: Scalar> VectorField<F> {
    /// A field given only by its evaluator. `sup_norm` is the declared
    /// bound on |f|; it is taken on trust and sanity-checked on probes.
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        sup_norm: F,
        f: impl Fn(&[F], F, &mut [F]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            f: Arc::new(f),
            jacobian: None,
            divergence: None,
            sup_norm,
            autonomous: false,
        }
    }

    /// Attach an analytic Jacobian df/dx, written row-major into an n*n slice.
    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[F], F, &mut [F]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Attach an analytic divergence.
    pub fn with_divergence(mut self, div: impl Fn(&[F], F) -> F + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    /// Declare the field autonomous (f(x, t) independent of t); lets the
    /// PDE engine cache per-step operators.
    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sup_norm(&self) -> F {
        self.sup_norm
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Evaluate f(x, t) into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[F], t: F, out: &mut [F]) {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(x, t, out);
    }

    pub fn eval(&self, x: &[F], t: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        self.eval_into(x, t, &mut out);
        out
    }

    /// Jacobian df/dx at (x, t), row-major; analytic when attached,
    /// otherwise central finite differences.
    pub fn jacobian_into(&self, x: &[F], t: F, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.dim * self.dim);
        if let Some(jac) = &self.jacobian {
            jac(x, t, out);
            return;
        }
        let h = F::lit(1e-6).max(F::epsilon().sqrt());
        let mut xp = x.to_vec();
        let mut fp = vec![F::zero(); self.dim];
        let mut fm = vec![F::zero(); self.dim];
        for j in 0..self.dim {
            let step = h * (F::one() + x[j].abs());
            xp[j] = x[j] + step;
            self.eval_into(&xp, t, &mut fp);
            xp[j] = x[j] - step;
            self.eval_into(&xp, t, &mut fm);
            xp[j] = x[j];
            let two = F::lit(2.0);
            for i in 0..self.dim {
                out[i * self.dim + j] = (fp[i] - fm[i]) / (two * step);
            }
        }
    }

    /// div f(x, t): analytic divergence, analytic Jacobian trace, or
    /// finite-difference Jacobian trace, in that order of preference.
    pub fn divergence(&self, x: &[F], t: F) -> F {
        if let Some(div) = &self.divergence {
            return div(x, t);
        }
        let mut jac = vec![F::zero(); self.dim * self.dim];
        self.jacobian_into(x, t, &mut jac);
        let mut tr = F::zero();
        for i in 0..self.dim {
            tr += jac[i * self.dim + i];
        }
        tr
    }

    /// Check that the finite-difference divergence agrees with the analytic
    /// Jacobian trace on the given probes (relative 1e-6).
    pub fn validate_divergence(&self, probes: &[Vec<F>], t: F) -> Result<()> {
        let Some(jac) = &self.jacobian else {
            return Ok(());
        };
        let fd_field = Self {
            jacobian: None,
            divergence: None,
            ..self.clone()
        };
        let mut mat = vec![F::zero(); self.dim * self.dim];
        for x in probes {
            jac(x, t, &mut mat);
            let mut tr = F::zero();
            for i in 0..self.dim {
                tr += mat[i * self.dim + i];
            }
            let fd = fd_field.divergence(x, t);
            let scale = F::one().max(tr.abs());
            if (fd - tr).abs() > F::lit(1e-6) * scale {
                return Err(Error::Configuration(format!(
                    "field '{}': finite-difference divergence {fd} disagrees with Jacobian trace {tr}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> std::fmt::Debug for VectorField<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("sup_norm", &self.sup_norm)
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

/// delta(t) = ½ max over probes of |div f(x, t)|.
///
/// The probe grid must cover the closed domain; callers usually obtain it
/// from [`crate::domain::Domain::probe_points`].
pub fn divergence_bound<F: Scalar>(field: &VectorField<F>, t: F, probes: &[Vec<F>]) -> Result<F> {
    if probes.is_empty() {
        return Err(Error::Configuration(
            "divergence bound needs a non-empty probe grid".into(),
        ));
    }
    let mut sup = F::zero();
    for x in probes {
        sup = sup.max(field.divergence(x, t).abs());
    }
    Ok(sup * F::lit(0.5))
}

/// c_f(s, t) = exp ∫_s^t delta(r) dr by composite Simpson with `panels`
/// panels (panels is rounded up to even).
pub fn growth_constant<F: Scalar>(
    field: &VectorField<F>,
    s: F,
    t: F,
    probes: &[Vec<F>],
    panels: usize,
) -> Result<F> {
    if s > t {
        return Err(Error::Parameter(format!(
            "growth constant needs s <= t, got s = {s}, t = {t}"
        )));
    }
    if s == t {
        return Ok(F::one());
    }
    let n = panels.max(2) + panels % 2;
    let h = (t - s) / F::from_usize(n).unwrap();
    let delta = |r: F| divergence_bound(field, r, probes);
    let mut acc = delta(s)? + delta(t)?;
    let four = F::lit(4.0);
    let two = F::lit(2.0);
    for k in 1..n {
        let w = if k % 2 == 1 { four } else { two };
        acc += w * delta(s + h * F::from_usize(k).unwrap())?;
    }
    Ok((acc * h / F::lit(3.0)).exp())
}

/// Default number of Simpson panels for time quadrature of delta.
pub const DEFAULT_QUADRATURE_PANELS: usize = 256;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;

    fn probes_1d() -> Vec<Vec<f64>> {
        Domain::interval(-1.0, 1.0).probe_points(64)
    }

    #[test]
    fn cos_field_has_zero_divergence_bound() {
        let f = VectorField::new(1, "cos-t", 1.0, |_x, t: f64, out| out[0] = t.cos())
            .with_jacobian(|_x, _t, j| j[0] = 0.0)
            .with_divergence(|_x, _t| 0.0);
        let probes = probes_1d();
        for &t in &[0.0, 0.7, std::f64::consts::PI] {
            assert_eq!(divergence_bound(&f, t, &probes).unwrap(), 0.0);
        }
        // delta == 0 makes every growth constant exactly one.
        assert_eq!(growth_constant(&f, 0.0, 2.0, &probes, 64).unwrap(), 1.0);
    }

    #[test]
    fn linear_decay_divergence_bound_is_half() {
        let f = VectorField::new(1, "linear-decay", 1.0, |x: &[f64], _t, out| out[0] = -x[0])
            .with_jacobian(|_x, _t, j| j[0] = -1.0)
            .with_divergence(|_x, _t| -1.0);
        let probes = probes_1d();
        assert_eq!(divergence_bound(&f, 0.3, &probes).unwrap(), 0.5);
        // closed form: c_f(0, 2) = e^{(2-0)/2} = e
        let c = growth_constant(&f, 0.0, 2.0, &probes, 128).unwrap();
        assert!((c - std::f64::consts::E).abs() < 1e-10, "c = {c}");
        assert_eq!(growth_constant(&f, 0.0, 0.0, &probes, 128).unwrap(), 1.0);
    }

    #[test]
    fn rotation_is_divergence_free() {
        let f = VectorField::new(2, "rotation", 1.5, |x: &[f64], _t, out| {
            out[0] = -x[1];
            out[1] = x[0];
        })
        .with_jacobian(|_x, _t, j| {
            j[0] = 0.0;
            j[1] = -1.0;
            j[2] = 1.0;
            j[3] = 0.0;
        });
        let probes = Domain::ball(&[0.0, 0.0], 1.0).probe_points(16);
        let d = divergence_bound(&f, 0.0, &probes).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn growth_constant_rejects_reversed_interval() {
        let f = VectorField::new(1, "c", 1.0, |_x, _t, out: &mut [f64]| out[0] = 1.0);
        assert!(growth_constant(&f, 1.0, 0.0, &probes_1d(), 8).is_err());
    }

    #[test]
    fn finite_difference_divergence_matches_trace() {
        let f = VectorField::new(2, "shear", 3.0, |x: &[f64], _t, out| {
            out[0] = x[0] * x[1];
            out[1] = -0.5 * x[1] * x[1];
        })
        .with_jacobian(|x, _t, j| {
            j[0] = x[1];
            j[1] = x[0];
            j[2] = 0.0;
            j[3] = -x[1];
        });
        let probes = Domain::ball(&[0.0, 0.0], 1.0).probe_points(9);
        f.validate_divergence(&probes, 0.4).unwrap();
    }
}
