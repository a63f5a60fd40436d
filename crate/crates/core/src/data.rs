//! Scalar data attached to a scenario: terminal data, running cost, and
//! initial densities.
//!
//! Data may be an evaluator (x, t) -> R or a stack of grid functions, one
//! per time sample. Values on null sets are irrelevant to every check in
//! this crate (all comparisons happen in the grid-L₂ metric), so
//! discontinuous evaluators such as indicators are fine.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::scalar::Scalar;

/// What role a piece of scalar data plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataRole {
    /// Terminal data evaluated at the horizon.
    Terminal,
    /// Running cost integrated along trajectories.
    Running,
    /// Initial density of the random start.
    InitialDensity,
}

type EvalFn<F> = dyn Fn(&[F], F) -> F + Send + Sync;

/// Values on a space grid for each time sample.
#[derive(Clone)]
pub struct GridStack<F: Scalar> {
    pub times: Vec<F>,
    pub frames: Vec<GridFunction<F>>,
}

impl<F: Scalar> GridStack<F> {
    pub fn new(times: Vec<F>, frames: Vec<GridFunction<F>>) -> Result<Self> {
        if times.len() != frames.len() || times.is_empty() {
            return Err(Error::Data(
                "grid stack needs matching, non-empty times and frames".into(),
            ));
        }
        for w in frames.windows(2) {
            if w[0].spec() != w[1].spec() {
                return Err(Error::GridMismatch(
                    "grid stack frames on different grids".into(),
                ));
            }
        }
        Ok(Self { times, frames })
    }

    /// Nearest-time frame, then containing cell.
    fn eval(&self, x: &[F], t: F) -> Result<F> {
        let mut best = 0;
        let mut dist = (self.times[0] - t).abs();
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                best = i;
                dist = d;
            }
        }
        let frame = &self.frames[best];
        match frame.spec().locate(x) {
            Some(lin) => Ok(frame.values()[lin]),
            None => Err(Error::Data(format!(
                "grid stack cannot evaluate at {:?} (outside grid)",
                x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
            ))),
        }
    }
}

enum Source<F: Scalar> {
    Evaluator(Arc<EvalFn<F>>),
    Stack(GridStack<F>),
}

impl<F: Scalar> Clone for Source<F> {
    fn clone(&self) -> Self {
        match self {
            Source::Evaluator(f) => Source::Evaluator(f.clone()),
            Source::Stack(s) => Source::Stack(s.clone()),
        }
    }
}

/// Scalar data: terminal ζ, running φ, or density ρ.
#[derive(Clone)]
pub struct ScalarData<F: Scalar> {
    role: DataRole,
    label: String,
    source: Source<F>,
}

impl<F: Scalar> ScalarData<F> {
    pub fn from_fn(
        role: DataRole,
        label: impl Into<String>,
        f: impl Fn(&[F], F) -> F + Send + Sync + 'static,
    ) -> Self {
        Self {
            role,
            label: label.into(),
            source: Source::Evaluator(Arc::new(f)),
        }
    }

    pub fn constant(role: DataRole, c: F) -> Self {
        Self::from_fn(role, format!("const({c})"), move |_x, _t| c)
    }

    pub fn zero(role: DataRole) -> Self {
        Self::constant(role, F::zero())
    }

    pub fn one(role: DataRole) -> Self {
        Self::constant(role, F::one())
    }

    /// Indicator of an axis-aligned open box.
    pub fn indicator_box(role: DataRole, lo: Vec<F>, hi: Vec<F>) -> Self {
        Self::from_fn(role, "indicator", move |x, _t| {
            for d in 0..x.len() {
                if x[d] <= lo[d] || x[d] >= hi[d] {
                    return F::zero();
                }
            }
            F::one()
        })
    }

    /// Uniform probability density on an axis-aligned box.
    pub fn uniform_density(lo: Vec<F>, hi: Vec<F>) -> Self {
        let vol = lo
            .iter()
            .zip(&hi)
            .fold(F::one(), |a, (&l, &h)| a * (h - l));
        let (l2, h2) = (lo.clone(), hi.clone());
        Self::from_fn(DataRole::InitialDensity, "uniform", move |x, _t| {
            for d in 0..x.len() {
                if x[d] < l2[d] || x[d] > h2[d] {
                    return F::zero();
                }
            }
            F::one() / vol
        })
    }

    /// Smooth compactly supported bump c·(1 - |x-c|²/r²)² on a ball,
    /// normalized to unit mass in 1D (left unnormalized elsewhere).
    pub fn smooth_bump(role: DataRole, center: Vec<F>, radius: F) -> Self {
        // In 1D, ∫ (1-u²)² du over (-1,1) = 16/15, so mass = 16r/15 · amp.
        let amp = if center.len() == 1 {
            F::lit(15.0 / 16.0) / radius
        } else {
            F::one()
        };
        Self::from_fn(role, "bump", move |x, _t| {
            let mut q = F::zero();
            for d in 0..x.len() {
                let u = (x[d] - center[d]) / radius;
                q += u * u;
            }
            if q >= F::one() {
                F::zero()
            } else {
                let w = F::one() - q;
                amp * w * w
            }
        })
    }

    pub fn from_grid_stack(role: DataRole, label: impl Into<String>, stack: GridStack<F>) -> Self {
        Self {
            role,
            label: label.into(),
            source: Source::Stack(stack),
        }
    }

    pub fn role(&self) -> DataRole {
        self.role
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluate at (x, t).
    pub fn eval(&self, x: &[F], t: F) -> Result<F> {
        match &self.source {
            Source::Evaluator(f) => {
                let v = f(x, t);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Data(format!(
                        "data '{}' not evaluable at the queried point",
                        self.label
                    )))
                }
            }
            Source::Stack(s) => s.eval(x, t),
        }
    }

    /// Densities must be nonnegative; checked on the given probes.
    pub fn validate_density(&self, probes: &[Vec<F>], t: F) -> Result<()> {
        if self.role != DataRole::InitialDensity {
            return Ok(());
        }
        for x in probes {
            if self.eval(x, t)? < F::zero() {
                return Err(Error::Data(format!(
                    "density '{}' is negative at {:?}",
                    self.label,
                    x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> std::fmt::Debug for ScalarData<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarData")
            .field("role", &self.role)
            .field("label", &self.label)
            .finish()
    }
}

/// How to draw initial states distributed according to a density.
///
/// Scenario densities are simple enough to ship with an explicit sampling
/// recipe, which keeps the Monte-Carlo engine free of generic rejection
/// bounds it cannot know.
#[derive(Clone, Debug)]
pub enum DensitySampler<F: Scalar> {
    /// Uniform over an axis-aligned box.
    UniformBox { lo: Vec<F>, hi: Vec<F> },
    /// Rejection from the box with a known bound on density · box volume.
    Rejection {
        lo: Vec<F>,
        hi: Vec<F>,
        bound: F,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::grid::{domain_mask, GridSpec};

    #[test]
    fn uniform_density_integrates_to_one() {
        let rho: ScalarData<f64> = ScalarData::uniform_density(vec![-1.0], vec![0.0]);
        assert_eq!(rho.eval(&[-0.5], 0.0).unwrap(), 1.0);
        assert_eq!(rho.eval(&[0.5], 0.0).unwrap(), 0.0);
        let dom = Domain::interval(-1.0, 1.0);
        let spec = GridSpec::from_domain(&dom, 512);
        let mask = domain_mask(&spec, &dom);
        let g = GridFunction::sample(spec, mask, |x| rho.eval(x, 0.0).unwrap());
        assert!((g.mass() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn bump_is_nonnegative_and_compact() {
        let rho: ScalarData<f64> =
            ScalarData::smooth_bump(DataRole::InitialDensity, vec![0.0], 0.5);
        let probes: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 * 0.1]).collect();
        rho.validate_density(&probes, 0.0).unwrap();
        assert_eq!(rho.eval(&[0.6], 0.0).unwrap(), 0.0);
        assert!(rho.eval(&[0.0], 0.0).unwrap() > 0.0);
        // Unit mass in 1D.
        let dom = Domain::interval(-1.0, 1.0);
        let spec = GridSpec::from_domain(&dom, 1024);
        let mask = domain_mask(&spec, &dom);
        let g = GridFunction::sample(spec, mask, |x| rho.eval(x, 0.0).unwrap());
        assert!((g.mass() - 1.0).abs() < 1e-3, "mass = {}", g.mass());
    }

    #[test]
    fn grid_stack_nearest_time_lookup() {
        let dom: Domain<f64> = Domain::interval(-1.0, 1.0);
        let spec = GridSpec::from_domain(&dom, 16);
        let mask = domain_mask(&spec, &dom);
        let f0 = GridFunction::sample(spec.clone(), mask.clone(), |_| 1.0);
        let f1 = GridFunction::sample(spec.clone(), mask.clone(), |_| 2.0);
        let stack = GridStack::new(vec![0.0, 1.0], vec![f0, f1]).unwrap();
        let data = ScalarData::from_grid_stack(DataRole::Running, "stack", stack);
        assert_eq!(data.eval(&[0.1], 0.2).unwrap(), 1.0);
        assert_eq!(data.eval(&[0.1], 0.9).unwrap(), 2.0);
        assert!(data.eval(&[5.0], 0.0).is_err());
    }

    #[test]
    fn negative_density_is_rejected() {
        let rho: ScalarData<f64> =
            ScalarData::from_fn(DataRole::InitialDensity, "bad", |x, _| x[0]);
        let probes = vec![vec![-0.5f64], vec![0.5]];
        assert!(rho.validate_density(&probes, 0.0).is_err());
    }
}
