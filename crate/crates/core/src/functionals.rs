//! The exit-time functionals along characteristics.
//!
//! For the flow y(t) started at (x, s) with open-exit moment tau_open and
//! tau = min(T, tau_open):
//!
//! - terminal:  U(x, s) = zeta(y(T)) · Ind{tau_open > T}
//! - integral:  V(x, s) = ∫_s^tau  phi(y(t), t) dt
//!
//! The path quadrature for V is 3-point Gauss–Legendre per accepted
//! integrator step, with the final step split exactly at tau so the
//! quadrature error stays below the exit-detection error.

use rayon::prelude::*;

use crate::data::ScalarData;
use crate::domain::Domain;
use crate::error::Result;
use crate::exit::{exit_times, ExitConfig};
use crate::field::VectorField;
use crate::flow::{integrate_flow, FlowConfig, Trajectory};
use crate::grid::{GridFunction, GridSpec, Mask};
use crate::scalar::Scalar;

/// Solver knobs shared by the pointwise functionals and the grid sweep.
#[derive(Clone, Debug)]
pub struct FunctionalConfig<F: Scalar> {
    pub flow: FlowConfig<F>,
    pub exit: ExitConfig<F>,
}

impl<F: Scalar> Default for FunctionalConfig<F> {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            exit: ExitConfig::default(),
        }
    }
}

impl<F: Scalar> FunctionalConfig<F> {
    pub fn with_tol(tol: F) -> Self {
        Self {
            flow: FlowConfig::with_tol(tol),
            ..Self::default()
        }
    }
}

/// U(x, s): terminal data on survival.
pub fn terminal_functional<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    zeta: &ScalarData<F>,
    x: &[F],
    s: F,
    horizon: F,
    cfg: &FunctionalConfig<F>,
) -> Result<F> {
    let traj = integrate_flow(field, x, s, horizon, &cfg.flow)?;
    let rec = exit_times(&traj, domain, field, &cfg.exit)?;
    let survived = match rec.tau_open {
        None => true,
        Some(t) => t > horizon,
    };
    if !survived {
        return Ok(F::zero());
    }
    zeta.eval(traj.end_state(), horizon)
}

/// V(x, s): running cost up to tau = min(T, tau_open).
pub fn integral_functional<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    phi: &ScalarData<F>,
    x: &[F],
    s: F,
    horizon: F,
    cfg: &FunctionalConfig<F>,
) -> Result<F> {
    let traj = integrate_flow(field, x, s, horizon, &cfg.flow)?;
    let rec = exit_times(&traj, domain, field, &cfg.exit)?;
    path_quadrature(&traj, phi, s, rec.tau)
}

// Gauss–Legendre 3-point nodes and weights on [-1, 1].
const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5. / 9., 8. / 9., 5. / 9.];

/// ∫_a^b phi(y(t), t) dt on the dense trajectory.
fn path_quadrature<F: Scalar>(
    traj: &Trajectory<F>,
    phi: &ScalarData<F>,
    a: F,
    b: F,
) -> Result<F> {
    if b <= a {
        return Ok(F::zero());
    }
    let mut buf = vec![F::zero(); traj.dim()];
    let mut total = F::zero();
    let nodes = traj.nodes();
    let half = F::lit(0.5);
    for w in nodes.windows(2) {
        let lo = w[0].max(a);
        let hi = w[1].min(b);
        if hi <= lo {
            continue;
        }
        let mid = (lo + hi) * half;
        let rad = (hi - lo) * half;
        let mut acc = F::zero();
        for q in 0..3 {
            let t = mid + rad * F::lit(GL3_NODES[q]);
            traj.eval_into(t, &mut buf);
            acc += F::lit(GL3_WEIGHTS[q]) * phi.eval(&buf, t)?;
        }
        total += acc * rad;
    }
    Ok(total)
}

/// Which functional a grid sweep evaluates.
#[derive(Clone, Copy, Debug)]
pub enum FunctionalKind {
    Terminal,
    Integral,
}

/// Evaluate U(., s) or V(., s) at every masked cell center.
///
/// Cells are independent, so the sweep runs in parallel; per-cell values do
/// not depend on scheduling, which keeps the result bit-identical to a
/// sequential evaluation.
pub fn functional_grid<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    data: &ScalarData<F>,
    kind: FunctionalKind,
    s: F,
    horizon: F,
    spec: &GridSpec<F>,
    mask: &Mask,
    cfg: &FunctionalConfig<F>,
) -> Result<GridFunction<F>> {
    let values: Result<Vec<F>> = (0..spec.len())
        .into_par_iter()
        .map(|lin| {
            if !mask[lin] {
                return Ok(F::zero());
            }
            let x = spec.center_of_linear(lin);
            match kind {
                FunctionalKind::Terminal => {
                    terminal_functional(field, domain, data, &x, s, horizon, cfg)
                }
                FunctionalKind::Integral => {
                    integral_functional(field, domain, data, &x, s, horizon, cfg)
                }
            }
        })
        .collect();
    Ok(GridFunction::from_values(spec.clone(), mask.clone(), values?))
}

/// Transport a density along the flow with the Liouville Jacobian factor:
/// the characteristics route to the killed forward density.
///
/// For each cell center x the characteristic through (x, t) is traced back
/// to time s; if the whole forward path stayed inside D, the cell gets
/// rho(y(s)) · exp(-∫_s^t div f(y(r), r) dr), otherwise zero.
#[allow(clippy::too_many_arguments)]
pub fn pushforward_grid<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    rho: &ScalarData<F>,
    s: F,
    t: F,
    spec: &GridSpec<F>,
    mask: &Mask,
    cfg: &FunctionalConfig<F>,
) -> Result<GridFunction<F>> {
    if t < s {
        return Err(crate::error::Error::Parameter(format!(
            "pushforward needs s <= t, got s = {s}, t = {t}"
        )));
    }
    let span = t - s;
    // w(sigma) = y(t - sigma) solves dw/dsigma = -f(w, t - sigma).
    let shared = field.clone();
    let reversed = VectorField::new(
        field.dim(),
        "time-reversed",
        field.sup_norm(),
        move |x, sigma: F, out: &mut [F]| {
            shared.eval_into(x, t - sigma, out);
            for v in out.iter_mut() {
                *v = -*v;
            }
        },
    );
    let div_field = field.clone();
    let values: Result<Vec<F>> = (0..spec.len())
        .into_par_iter()
        .map(|lin| {
            if !mask[lin] {
                return Ok(F::zero());
            }
            let x = spec.center_of_linear(lin);
            let traj = integrate_flow(&reversed, &x, F::zero(), span, &cfg.flow)?;
            let rec = exit_times(&traj, domain, &reversed, &cfg.exit)?;
            if rec.tau_open.is_some() {
                return Ok(F::zero());
            }
            // ∫_0^span div f(w(sigma), t - sigma) dsigma by per-step GL3.
            let mut buf = vec![F::zero(); traj.dim()];
            let mut div_int = F::zero();
            let half = F::lit(0.5);
            let nodes = traj.nodes();
            for w in nodes.windows(2) {
                let mid = (w[0] + w[1]) * half;
                let rad = (w[1] - w[0]) * half;
                let mut acc = F::zero();
                for q in 0..3 {
                    let sigma = mid + rad * F::lit(GL3_NODES[q]);
                    traj.eval_into(sigma, &mut buf);
                    acc += F::lit(GL3_WEIGHTS[q]) * div_field.divergence(&buf, t - sigma);
                }
                div_int += acc * rad;
            }
            let start = rho.eval(traj.end_state(), s)?;
            Ok(start * (-div_int).exp())
        })
        .collect();
    Ok(GridFunction::from_values(spec.clone(), mask.clone(), values?))
}
