//! Bounded domains with C¹ boundaries given by implicit functions.
//!
//! A [`Domain`] is D = {g < 0} for a C¹ function g with non-vanishing
//! gradient near {g = 0}. The built-in library (interval, ball, ellipse,
//! superellipse) covers every scenario shipped with the crate; sharp boxes
//! are deliberately absent because their corners are not C¹.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Scalar;

type ImplicitFn<F> = dyn Fn(&[F]) -> F + Send + Sync;
type GradientFn<F> = dyn Fn(&[F], &mut [F]) + Send + Sync;

/// Bounded open domain D = {g < 0} with boundary {g = 0}.
#[derive(Clone)]
pub struct Domain<F: Scalar> {
    dim: usize,
    label: String,
    g: Arc<ImplicitFn<F>>,
    grad: Arc<GradientFn<F>>,
    lo: Vec<F>,
    hi: Vec<F>,
}

impl<F: Scalar> Domain<F> {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        lo: Vec<F>,
        hi: Vec<F>,
        g: impl Fn(&[F]) -> F + Send + Sync + 'static,
        grad: impl Fn(&[F], &mut [F]) + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(lo.len(), dim);
        assert_eq!(hi.len(), dim);
        Self {
            dim,
            label: label.into(),
            g: Arc::new(g),
            grad: Arc::new(grad),
            lo,
            hi,
        }
    }

    /// Open interval (a, b) via g(x) = (x - c)² - r², smooth everywhere.
    pub fn interval(a: f64, b: f64) -> Self {
        assert!(a < b, "interval needs a < b");
        let c = F::lit(0.5 * (a + b));
        let r = F::lit(0.5 * (b - a));
        Self::new(
            1,
            format!("interval({a},{b})"),
            vec![F::lit(a)],
            vec![F::lit(b)],
            move |x: &[F]| (x[0] - c) * (x[0] - c) - r * r,
            move |x: &[F], out: &mut [F]| out[0] = F::lit(2.0) * (x[0] - c),
        )
    }

    /// Open n-ball via g(x) = |x - c|² - r².
    pub fn ball(center: &[f64], radius: f64) -> Self {
        assert!(radius > 0.0);
        let n = center.len();
        let c: Vec<F> = center.iter().map(|&v| F::lit(v)).collect();
        let r2 = F::lit(radius * radius);
        let lo: Vec<F> = center.iter().map(|&v| F::lit(v - radius)).collect();
        let hi: Vec<F> = center.iter().map(|&v| F::lit(v + radius)).collect();
        let c2 = c.clone();
        Self::new(
            n,
            format!("ball(r={radius})"),
            lo,
            hi,
            move |x: &[F]| {
                let mut s = F::zero();
                for i in 0..x.len() {
                    let d = x[i] - c[i];
                    s += d * d;
                }
                s - r2
            },
            move |x: &[F], out: &mut [F]| {
                for i in 0..x.len() {
                    out[i] = F::lit(2.0) * (x[i] - c2[i]);
                }
            },
        )
    }

    /// Axis-aligned ellipse/ellipsoid: g(x) = sum ((x_i - c_i)/a_i)² - 1.
    pub fn ellipse(center: &[f64], semi_axes: &[f64]) -> Self {
        Self::superellipse(center, semi_axes, 2)
    }

    /// Superellipse with even power p: g(x) = sum ((x_i - c_i)/a_i)^p - 1.
    /// p >= 4 gives a smoothed rectangle that is still C¹.
    pub fn superellipse(center: &[f64], semi_axes: &[f64], power: u32) -> Self {
        assert_eq!(center.len(), semi_axes.len());
        assert!(power >= 2 && power % 2 == 0, "superellipse power must be even");
        let n = center.len();
        let c: Vec<F> = center.iter().map(|&v| F::lit(v)).collect();
        let a: Vec<F> = semi_axes.iter().map(|&v| F::lit(v)).collect();
        let lo: Vec<F> = center
            .iter()
            .zip(semi_axes)
            .map(|(&v, &s)| F::lit(v - s))
            .collect();
        let hi: Vec<F> = center
            .iter()
            .zip(semi_axes)
            .map(|(&v, &s)| F::lit(v + s))
            .collect();
        let label = if power == 2 {
            format!("ellipse(n={n})")
        } else {
            format!("superellipse(n={n},p={power})")
        };
        let (c2, a2) = (c.clone(), a.clone());
        let p = power as i32;
        Self::new(
            n,
            label,
            lo,
            hi,
            move |x: &[F]| {
                let mut s = F::zero();
                for i in 0..x.len() {
                    s += ((x[i] - c[i]) / a[i]).powi(p);
                }
                s - F::one()
            },
            move |x: &[F], out: &mut [F]| {
                for i in 0..x.len() {
                    let u = (x[i] - c2[i]) / a2[i];
                    out[i] = F::from_i32(p).unwrap() * u.powi(p - 1) / a2[i];
                }
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Bounding box (lo, hi) with D strictly inside.
    pub fn bounding_box(&self) -> (&[F], &[F]) {
        (&self.lo, &self.hi)
    }

    #[inline]
    pub fn implicit(&self, x: &[F]) -> F {
        (self.g)(x)
    }

    #[inline]
    pub fn gradient_into(&self, x: &[F], out: &mut [F]) {
        (self.grad)(x, out)
    }

    pub fn gradient(&self, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        self.gradient_into(x, &mut out);
        out
    }

    /// x in the open set D.
    #[inline]
    pub fn contains(&self, x: &[F]) -> bool {
        self.implicit(x) < F::zero()
    }

    /// x in the closed set, up to the boundary tolerance.
    #[inline]
    pub fn contains_closed(&self, x: &[F], boundary_tol: F) -> bool {
        self.implicit(x) <= boundary_tol
    }

    /// Uniform probe points over the bounding box whose centers lie in a
    /// slightly inflated copy of the closed domain, `per_axis` per axis.
    pub fn probe_points(&self, per_axis: usize) -> Vec<Vec<F>> {
        let mut pts = Vec::new();
        let n = per_axis.max(2);
        let idxs = vec![0usize; self.dim];
        let mut idxs = idxs;
        // Inflate by one grid cell so boundary-adjacent structure is seen.
        let margins: Vec<F> = (0..self.dim)
            .map(|d| (self.hi[d] - self.lo[d]) / F::from_usize(n).unwrap())
            .collect();
        loop {
            let x: Vec<F> = (0..self.dim)
                .map(|d| {
                    let frac =
                        F::from_usize(idxs[d]).unwrap() / F::from_usize(n - 1).unwrap();
                    self.lo[d] + (self.hi[d] - self.lo[d]) * frac
                })
                .collect();
            let mut shell = F::zero();
            let mut grad = vec![F::zero(); self.dim];
            self.gradient_into(&x, &mut grad);
            for d in 0..self.dim {
                shell += grad[d].abs() * margins[d];
            }
            if self.implicit(&x) <= shell {
                pts.push(x);
            }
            let mut d = 0;
            loop {
                idxs[d] += 1;
                if idxs[d] < n {
                    break;
                }
                idxs[d] = 0;
                d += 1;
                if d == self.dim {
                    return pts;
                }
            }
        }
    }

    /// Verify the C¹ boundary condition: grad g does not vanish on the
    /// probe points inside the tube |g| < tol.
    pub fn validate_boundary(&self, per_axis: usize, tol: F) -> Result<()> {
        let mut grad = vec![F::zero(); self.dim];
        for x in self.probe_points(per_axis) {
            if self.implicit(&x).abs() < tol {
                self.gradient_into(&x, &mut grad);
                let norm = grad.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
                if norm < F::lit(1e-10) {
                    return Err(Error::Geometry(format!(
                        "domain '{}': grad g vanishes near the boundary at {x:?}",
                        self.label
                    )));
                }
            }
        }
        Ok(())
    }
}

impl<F: Scalar> std::fmt::Debug for Domain<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Domain")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

/// |< grad g / |grad g|, f(x, t) >| at a boundary point x.
///
/// Zero means the drift is tangent to the boundary there — the degenerate
/// crossings on which open and closed exit times may disagree. The score is
/// invariant under rescaling g by any positive constant.
pub fn tangency_score<F: Scalar>(
    domain: &Domain<F>,
    field: &VectorField<F>,
    x: &[F],
    t: F,
    boundary_tol: F,
) -> Result<F> {
    let g = domain.implicit(x);
    if g.abs() > boundary_tol {
        return Err(Error::Parameter(format!(
            "tangency score queried away from the boundary: g = {g}"
        )));
    }
    let mut grad = vec![F::zero(); domain.dim()];
    domain.gradient_into(x, &mut grad);
    let norm = grad.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
    if norm < F::lit(1e-10) {
        return Err(Error::Geometry(format!(
            "boundary is not C1 at {x:?}: grad g ~ 0"
        )));
    }
    let f = field.eval(x, t);
    let mut dot = F::zero();
    for d in 0..domain.dim() {
        dot += grad[d] / norm * f[d];
    }
    Ok(dot.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn interval_membership_and_box() {
        let d: Domain<f64> = Domain::interval(-1.0, 1.0);
        assert!(d.contains(&[0.0]));
        assert!(!d.contains(&[1.0]));
        assert!(d.contains_closed(&[1.0], 1e-12));
        let (lo, hi) = d.bounding_box();
        assert_eq!((lo[0], hi[0]), (-1.0, 1.0));
        d.validate_boundary(64, 1e-2).unwrap();
    }

    #[test]
    fn tangency_at_grazing_point_of_cos_flow() {
        // f = cos t on (-1, 1): at x = 1, t = pi/2 the drift vanishes, so the
        // crossing is tangential.
        let dom: Domain<f64> = Domain::interval(-1.0, 1.0);
        let f = VectorField::new(1, "cos-t", 1.0, |_x, t: f64, out| out[0] = t.cos());
        let s = tangency_score(&dom, &f, &[1.0], FRAC_PI_2, 1e-9).unwrap();
        assert!(s < 1e-12, "score = {s}");
    }

    #[test]
    fn tangency_transversal_is_unit_for_unit_drift() {
        let dom: Domain<f64> = Domain::interval(-1.0, 1.0);
        let f = VectorField::new(1, "one", 1.0, |_x, _t, out: &mut [f64]| out[0] = 1.0);
        let s = tangency_score(&dom, &f, &[1.0], 0.3, 1e-9).unwrap();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tangency_horizontal_field_at_disk_pole() {
        let dom: Domain<f64> = Domain::ball(&[0.0, 0.0], 1.0);
        let f = VectorField::new(2, "unit-x", 1.0, |_x, _t, out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = 0.0;
        });
        let s = tangency_score(&dom, &f, &[0.0, 1.0], 0.0, 1e-9).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn tangency_scale_invariant_in_g() {
        // Same geometry, g multiplied by 250: score must not move.
        let base: Domain<f64> = Domain::interval(-1.0, 1.0);
        let scaled = Domain::new(
            1,
            "scaled",
            vec![-1.0],
            vec![1.0],
            |x: &[f64]| 250.0 * (x[0] * x[0] - 1.0),
            |x: &[f64], out: &mut [f64]| out[0] = 500.0 * x[0],
        );
        let f = VectorField::new(1, "f", 1.0, |_x, t: f64, out| out[0] = 0.3 + t.sin());
        let a = tangency_score(&base, &f, &[1.0], 0.7, 1e-9).unwrap();
        let b = tangency_score(&scaled, &f, &[1.0], 0.7, 1e-9).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tangency_rejects_interior_point() {
        let dom: Domain<f64> = Domain::interval(-1.0, 1.0);
        let f = VectorField::new(1, "f", 1.0, |_x, _t, out: &mut [f64]| out[0] = 1.0);
        assert!(tangency_score(&dom, &f, &[0.2], 0.0, 1e-9).is_err());
    }

    #[test]
    fn degenerate_gradient_is_a_geometry_error() {
        // g with a critical point sitting exactly on {g = 0}.
        let dom = Domain::new(
            1,
            "degenerate",
            vec![-1.0],
            vec![1.0],
            |x: &[f64]| x[0] * x[0],
            |x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0],
        );
        let f = VectorField::new(1, "f", 1.0, |_x, _t, out: &mut [f64]| out[0] = 1.0);
        assert!(matches!(
            tangency_score(&dom, &f, &[0.0], 0.0, 1e-9),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn probe_points_cover_closed_ball() {
        let dom: Domain<f64> = Domain::ball(&[0.0, 0.0], 1.0);
        let pts = dom.probe_points(16);
        assert!(!pts.is_empty());
        // Every probe is at most one cell outside the closed set.
        for p in &pts {
            assert!(dom.implicit(p) <= 0.6);
        }
        // And the probes do reach near the boundary.
        assert!(pts.iter().any(|p| dom.implicit(p).abs() < 0.2));
    }
}
