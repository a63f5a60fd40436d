//! Built-in scenarios and plain-data scenario specs.
//!
//! A scenario bundles a drift field, a domain, a horizon, and default data
//! (terminal, running, initial density) plus the sampling recipe for the
//! density. The library names are stable CLI-facing identifiers.

use crate::data::{DataRole, DensitySampler, ScalarData};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Scalar;

/// How a functional target behaves for convergence purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetClass {
    /// Discontinuous target: assert a refinement order instead of a
    /// pointwise-tight distance.
    Indicator,
    /// Smooth (at worst kinked) target: assert a relative distance.
    Smooth,
}

/// A named experiment setup.
#[derive(Clone, Debug)]
pub struct Scenario<F: Scalar> {
    pub name: String,
    pub field: VectorField<F>,
    pub domain: Domain<F>,
    pub horizon: F,
    pub terminal: ScalarData<F>,
    pub running: ScalarData<F>,
    pub density: ScalarData<F>,
    pub sampler: DensitySampler<F>,
    pub terminal_class: TargetClass,
    pub running_class: TargetClass,
}

/// Names of the built-in scenarios.
pub const LIBRARY: [&str; 5] = [
    "paper-cos",
    "const-drift",
    "linear-decay",
    "disk-rotation",
    "disk-constant",
];

/// Look up a built-in scenario by name.
pub fn by_name<F: Scalar>(name: &str) -> Result<Scenario<F>> {
    match name {
        "paper-cos" => Ok(paper_cos()),
        "const-drift" => Ok(const_drift()),
        "linear-decay" => Ok(linear_decay()),
        "disk-rotation" => Ok(disk_rotation()),
        "disk-constant" => Ok(disk_constant()),
        other => Err(Error::Configuration(format!(
            "unknown scenario '{other}'; built-ins: {}",
            LIBRARY.join(", ")
        ))),
    }
}

/// f = cos t on (-1, 1): the flow x + sin t - sin s grazes both endpoints,
/// making the exit time jump from pi/2 at x = 0 to ~3 pi/2 just left of it.
pub fn paper_cos<F: Scalar>() -> Scenario<F> {
    let field = VectorField::new(1, "cos-t", F::one(), |_x, t: F, out| out[0] = t.cos())
        .with_jacobian(|_x, _t, j| j[0] = F::zero())
        .with_divergence(|_x, _t| F::zero());
    Scenario {
        name: "paper-cos".into(),
        field,
        domain: Domain::interval(-1.0, 1.0),
        horizon: F::lit(2.0) * F::PI(),
        terminal: ScalarData::one(DataRole::Terminal),
        running: ScalarData::one(DataRole::Running),
        density: ScalarData::uniform_density(vec![-F::one()], vec![F::zero()]),
        sampler: DensitySampler::UniformBox {
            lo: vec![-F::one()],
            hi: vec![F::zero()],
        },
        terminal_class: TargetClass::Indicator,
        running_class: TargetClass::Indicator,
    }
}

/// f == 1 on (-1, 1): pure translation with closed forms for everything.
pub fn const_drift<F: Scalar>() -> Scenario<F> {
    let field = VectorField::new(1, "one", F::one(), |_x, _t, out| out[0] = F::one())
        .with_jacobian(|_x, _t, j| j[0] = F::zero())
        .with_divergence(|_x, _t| F::zero())
        .autonomous();
    Scenario {
        name: "const-drift".into(),
        field,
        domain: Domain::interval(-1.0, 1.0),
        horizon: F::one(),
        terminal: ScalarData::one(DataRole::Terminal),
        running: ScalarData::one(DataRole::Running),
        density: ScalarData::uniform_density(vec![-F::one()], vec![F::one()]),
        sampler: DensitySampler::UniformBox {
            lo: vec![-F::one()],
            hi: vec![F::one()],
        },
        terminal_class: TargetClass::Indicator,
        running_class: TargetClass::Smooth,
    }
}

/// f = -x on (-1, 1) with a smooth compactly supported density: no path
/// ever exits, and the forward density grows exactly like e^{t/2} in L2,
/// saturating the growth bound.
pub fn linear_decay<F: Scalar>() -> Scenario<F> {
    let field = VectorField::new(1, "linear-decay", F::one(), |x: &[F], _t, out| {
        out[0] = -x[0]
    })
    .with_jacobian(|_x, _t, j| j[0] = -F::one())
    .with_divergence(|_x, _t| -F::one())
    .autonomous();
    let radius = F::lit(0.5);
    let bump_peak = F::lit(15.0 / 16.0) / radius;
    Scenario {
        name: "linear-decay".into(),
        field,
        domain: Domain::interval(-1.0, 1.0),
        horizon: F::one(),
        terminal: ScalarData::one(DataRole::Terminal),
        running: ScalarData::one(DataRole::Running),
        density: ScalarData::smooth_bump(DataRole::InitialDensity, vec![F::zero()], radius),
        sampler: DensitySampler::Rejection {
            lo: vec![-radius],
            hi: vec![radius],
            bound: bump_peak,
        },
        terminal_class: TargetClass::Smooth,
        running_class: TargetClass::Smooth,
    }
}

/// Solid rotation on the unit disk: invariant circles, no exits at all.
pub fn disk_rotation<F: Scalar>() -> Scenario<F> {
    let field = VectorField::new(2, "rotation", F::lit(1.5), |x: &[F], _t, out| {
        out[0] = -x[1];
        out[1] = x[0];
    })
    .with_jacobian(|_x, _t, j| {
        j[0] = F::zero();
        j[1] = -F::one();
        j[2] = F::one();
        j[3] = F::zero();
    })
    .with_divergence(|_x, _t| F::zero())
    .autonomous();
    let inv_pi = F::one() / F::PI();
    Scenario {
        name: "disk-rotation".into(),
        field,
        domain: Domain::ball(&[0.0, 0.0], 1.0),
        horizon: F::lit(2.0) * F::PI(),
        terminal: ScalarData::one(DataRole::Terminal),
        running: ScalarData::one(DataRole::Running),
        density: ScalarData::from_fn(DataRole::InitialDensity, "uniform-disk", move |x, _t| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < F::one() {
                inv_pi
            } else {
                F::zero()
            }
        }),
        sampler: DensitySampler::Rejection {
            lo: vec![-F::one(), -F::one()],
            hi: vec![F::one(), F::one()],
            bound: inv_pi,
        },
        terminal_class: TargetClass::Smooth,
        running_class: TargetClass::Smooth,
    }
}

/// Horizontal unit drift across the unit disk: every start exits through
/// the right half-circle; the drift is tangent only at the poles.
pub fn disk_constant<F: Scalar>() -> Scenario<F> {
    let field = VectorField::new(2, "unit-x", F::one(), |_x, _t, out| {
        out[0] = F::one();
        out[1] = F::zero();
    })
    .with_jacobian(|_x, _t, j| {
        for v in j.iter_mut() {
            *v = F::zero();
        }
    })
    .with_divergence(|_x, _t| F::zero())
    .autonomous();
    let inv_pi = F::one() / F::PI();
    Scenario {
        name: "disk-constant".into(),
        field,
        domain: Domain::ball(&[0.0, 0.0], 1.0),
        horizon: F::lit(3.0),
        terminal: ScalarData::one(DataRole::Terminal),
        running: ScalarData::one(DataRole::Running),
        density: ScalarData::from_fn(DataRole::InitialDensity, "uniform-disk", move |x, _t| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < F::one() {
                inv_pi
            } else {
                F::zero()
            }
        }),
        sampler: DensitySampler::Rejection {
            lo: vec![-F::one(), -F::one()],
            hi: vec![F::one(), F::one()],
            bound: inv_pi,
        },
        terminal_class: TargetClass::Indicator,
        running_class: TargetClass::Smooth,
    }
}

// ---------------------------------------------------------------------
// Plain-data scenario specs (config files build these).
// ---------------------------------------------------------------------

/// Field described by data only.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    /// Constant vector.
    Constant(Vec<f64>),
    /// f(x, t) = cos t in 1D.
    CosTime,
    /// Linear field f = A x, row-major square matrix.
    Linear(Vec<f64>),
    /// Planar rotation (-x2, x1).
    Rotation,
}

/// Domain described by data only.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Ellipse { center: Vec<f64>, semi_axes: Vec<f64> },
    Superellipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        power: u32,
    },
}

/// Scalar data described by data only.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Zero,
    One,
    Constant(f64),
    IndicatorBox { lo: Vec<f64>, hi: Vec<f64> },
    UniformDensity { lo: Vec<f64>, hi: Vec<f64> },
    Bump { center: Vec<f64>, radius: f64 },
}

/// Inline scenario definition, as read from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub field: FieldSpec,
    pub domain: DomainSpec,
    pub horizon: f64,
    pub terminal: DataSpec,
    pub running: DataSpec,
    pub density: DataSpec,
}

fn build_field<F: Scalar>(spec: &FieldSpec) -> Result<VectorField<F>> {
    Ok(match spec {
        FieldSpec::Constant(v) => {
            let vals: Vec<F> = v.iter().map(|&c| F::lit(c)).collect();
            let bound = F::lit(v.iter().fold(0.0, |a, &c| a + c * c).sqrt());
            let n = vals.len();
            VectorField::new(n, "constant", bound, move |_x, _t, out| {
                out.copy_from_slice(&vals);
            })
            .with_jacobian(move |_x, _t, j| {
                for e in j.iter_mut() {
                    *e = F::zero();
                }
            })
            .with_divergence(|_x, _t| F::zero())
            .autonomous()
        }
        FieldSpec::CosTime => {
            VectorField::new(1, "cos-t", F::one(), |_x, t: F, out| out[0] = t.cos())
                .with_jacobian(|_x, _t, j| j[0] = F::zero())
                .with_divergence(|_x, _t| F::zero())
        }
        FieldSpec::Linear(mat) => {
            let n2 = mat.len();
            let n = (n2 as f64).sqrt().round() as usize;
            if n * n != n2 {
                return Err(Error::Configuration(
                    "linear field matrix must be square".into(),
                ));
            }
            let a: Vec<F> = mat.iter().map(|&c| F::lit(c)).collect();
            let a2 = a.clone();
            let tr: F = (0..n).map(|i| a[i * n + i]).sum();
            let bound = F::lit(10.0) * F::lit(mat.iter().fold(0.0, |m, &c| m.max(c.abs())));
            VectorField::new(n, "linear", bound, move |x: &[F], _t, out| {
                for i in 0..n {
                    let mut acc = F::zero();
                    for j in 0..n {
                        acc += a[i * n + j] * x[j];
                    }
                    out[i] = acc;
                }
            })
            .with_jacobian(move |_x, _t, j| j.copy_from_slice(&a2))
            .with_divergence(move |_x, _t| tr)
            .autonomous()
        }
        FieldSpec::Rotation => {
            VectorField::new(2, "rotation", F::lit(1.5), |x: &[F], _t, out| {
                out[0] = -x[1];
                out[1] = x[0];
            })
            .with_jacobian(|_x, _t, j| {
                j[0] = F::zero();
                j[1] = -F::one();
                j[2] = F::one();
                j[3] = F::zero();
            })
            .with_divergence(|_x, _t| F::zero())
            .autonomous()
        }
    })
}

fn build_domain<F: Scalar>(spec: &DomainSpec) -> Result<Domain<F>> {
    Ok(match spec {
        DomainSpec::Interval { a, b } => {
            if a >= b {
                return Err(Error::Configuration(format!(
                    "interval needs a < b, got [{a}, {b}]"
                )));
            }
            Domain::interval(*a, *b)
        }
        DomainSpec::Ball { center, radius } => {
            if *radius <= 0.0 {
                return Err(Error::Configuration("ball radius must be positive".into()));
            }
            Domain::ball(center, *radius)
        }
        DomainSpec::Ellipse { center, semi_axes } => Domain::ellipse(center, semi_axes),
        DomainSpec::Superellipse {
            center,
            semi_axes,
            power,
        } => {
            if *power < 4 || power % 2 != 0 {
                return Err(Error::Configuration(
                    "superellipse power must be even and >= 4".into(),
                ));
            }
            Domain::superellipse(center, semi_axes, *power)
        }
    })
}

fn build_data<F: Scalar>(spec: &DataSpec, role: DataRole) -> ScalarData<F> {
    match spec {
        DataSpec::Zero => ScalarData::zero(role),
        DataSpec::One => ScalarData::one(role),
        DataSpec::Constant(c) => ScalarData::constant(role, F::lit(*c)),
        DataSpec::IndicatorBox { lo, hi } => ScalarData::indicator_box(
            role,
            lo.iter().map(|&v| F::lit(v)).collect(),
            hi.iter().map(|&v| F::lit(v)).collect(),
        ),
        DataSpec::UniformDensity { lo, hi } => ScalarData::uniform_density(
            lo.iter().map(|&v| F::lit(v)).collect(),
            hi.iter().map(|&v| F::lit(v)).collect(),
        ),
        DataSpec::Bump { center, radius } => ScalarData::smooth_bump(
            role,
            center.iter().map(|&v| F::lit(v)).collect(),
            F::lit(*radius),
        ),
    }
}

fn sampler_for<F: Scalar>(spec: &DataSpec, dim: usize) -> Result<DensitySampler<F>> {
    match spec {
        DataSpec::UniformDensity { lo, hi } => Ok(DensitySampler::UniformBox {
            lo: lo.iter().map(|&v| F::lit(v)).collect(),
            hi: hi.iter().map(|&v| F::lit(v)).collect(),
        }),
        DataSpec::Bump { center, radius } => {
            let peak = if dim == 1 { 15.0 / (16.0 * radius) } else { 1.0 };
            Ok(DensitySampler::Rejection {
                lo: center.iter().map(|&c| F::lit(c - radius)).collect(),
                hi: center.iter().map(|&c| F::lit(c + radius)).collect(),
                bound: F::lit(peak),
            })
        }
        other => Err(Error::Configuration(format!(
            "density spec {other:?} has no sampling recipe; use a uniform box or a bump"
        ))),
    }
}

/// Build a runnable scenario from a plain-data spec.
pub fn build_scenario<F: Scalar>(spec: &ScenarioSpec) -> Result<Scenario<F>> {
    if spec.horizon <= 0.0 {
        return Err(Error::Configuration("horizon must be positive".into()));
    }
    let field = build_field(&spec.field)?;
    let domain = build_domain(&spec.domain)?;
    if field.dim() != domain.dim() {
        return Err(Error::Configuration(format!(
            "field dimension {} does not match domain dimension {}",
            field.dim(),
            domain.dim()
        )));
    }
    let sampler = sampler_for(&spec.density, field.dim())?;
    let density = build_data(&spec.density, DataRole::InitialDensity);
    density.validate_density(&domain.probe_points(16), F::zero())?;
    field.validate_divergence(&domain.probe_points(8), F::zero())?;
    domain.validate_boundary(32, F::lit(1e-3))?;
    let terminal_class = match spec.terminal {
        DataSpec::Zero | DataSpec::Constant(_) | DataSpec::One => TargetClass::Indicator,
        _ => TargetClass::Indicator,
    };
    Ok(Scenario {
        name: spec.name.clone(),
        field,
        domain,
        horizon: F::lit(spec.horizon),
        terminal: build_data(&spec.terminal, DataRole::Terminal),
        running: build_data(&spec.running, DataRole::Running),
        density,
        sampler,
        terminal_class,
        running_class: TargetClass::Indicator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_names_resolve() {
        for name in LIBRARY {
            let s: Scenario<f64> = by_name(name).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.field.dim(), s.domain.dim());
            s.field
                .validate_divergence(&s.domain.probe_points(8), 0.0)
                .unwrap();
            s.density
                .validate_density(&s.domain.probe_points(8), 0.0)
                .unwrap();
        }
        assert!(by_name::<f64>("no-such").is_err());
    }

    #[test]
    fn inline_spec_builds_and_validates() {
        let spec = ScenarioSpec {
            name: "inline".into(),
            field: FieldSpec::Constant(vec![1.0]),
            domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
            horizon: 1.0,
            terminal: DataSpec::One,
            running: DataSpec::One,
            density: DataSpec::UniformDensity {
                lo: vec![-1.0],
                hi: vec![0.0],
            },
        };
        let s: Scenario<f64> = build_scenario(&spec).unwrap();
        assert_eq!(s.field.eval(&[0.0], 0.0), vec![1.0]);
    }

    #[test]
    fn inline_spec_rejects_dimension_mismatch() {
        let spec = ScenarioSpec {
            name: "bad".into(),
            field: FieldSpec::Rotation,
            domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
            horizon: 1.0,
            terminal: DataSpec::One,
            running: DataSpec::One,
            density: DataSpec::UniformDensity {
                lo: vec![-1.0],
                hi: vec![0.0],
            },
        };
        assert!(build_scenario::<f64>(&spec).is_err());
    }

    #[test]
    fn linear_field_spec_matches_matrix() {
        let s: VectorField<f64> =
            build_field(&FieldSpec::Linear(vec![0.0, -1.0, 1.0, 0.0])).unwrap();
        assert_eq!(s.eval(&[0.3, 0.4], 0.0), vec![-0.4, 0.3]);
        assert_eq!(s.divergence(&[0.3, 0.4], 0.0), 0.0);
    }
}
