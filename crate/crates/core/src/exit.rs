//! First-exit detection on dense trajectories.
//!
//! Two exit moments are tracked for each path: the first exit from the open
//! set D = {g < 0} and the first exit from its closure. They agree for
//! transversal crossings and differ exactly on grazing contacts, where the
//! path touches the boundary without escaping.
//!
//! Convention (documented, not paper-mandated): a grazing local maximum of
//! g counts as an open-set exit when the refined extremum satisfies
//! g >= -tol_g. The strict rule "g >= 0" would make the touch-and-return
//! trajectories depend on the sign of integrator noise; the band rule moves
//! the decision edge by at most tol_g, which is a null perturbation of the
//! starts affected.

use crate::domain::{tangency_score, Domain};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::flow::{integrate_flow, FlowConfig, Trajectory};
use crate::scalar::Scalar;

/// Tolerances for exit detection.
#[derive(Clone, Debug)]
pub struct ExitConfig<F: Scalar> {
    /// Bisection resolution in time.
    pub time_tol: F,
    /// Boundary band: |g| below this is "on the boundary". Must dominate
    /// the integrator's dense-output error (about 30x its tolerance),
    /// otherwise grazing contacts are decided by integrator noise.
    pub boundary_tol: F,
    /// Sub-samples of g per accepted integrator step.
    pub samples_per_step: usize,
}

impl<F: Scalar> Default for ExitConfig<F> {
    fn default() -> Self {
        Self {
            time_tol: F::lit(1e-9),
            boundary_tol: F::lit(1e-7),
            samples_per_step: 8,
        }
    }
}

/// How a trajectory left the domain, if it did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// No exit within the horizon.
    None,
    /// Open and closed exits coincide.
    Transversal,
    /// The path left the open set but not (yet) the closed one.
    OpenOnly,
}

/// Exit data for one trajectory.
#[derive(Clone, Debug)]
pub struct ExitRecord<F: Scalar> {
    /// First exit from the open set D; `None` is the +infinity sentinel.
    pub tau_open: Option<F>,
    /// First exit from the closed set; `None` is the +infinity sentinel.
    pub tau_closed: Option<F>,
    /// min(horizon, tau_open).
    pub tau: F,
    /// State at the open exit.
    pub exit_point: Option<Vec<F>>,
    /// Tangency score at the open exit.
    pub tangency: Option<F>,
    pub kind: ExitKind,
}

#[derive(Clone, Copy, Debug)]
enum Event<F> {
    /// Sign change of g bracketed at this time.
    Crossing(F),
    /// Local max of g inside the boundary band at this time.
    Grazing(F),
}

impl<F: Scalar> Event<F> {
    fn time(&self) -> F {
        match *self {
            Event::Crossing(t) | Event::Grazing(t) => t,
        }
    }
}

fn g_of<F: Scalar>(traj: &Trajectory<F>, domain: &Domain<F>, t: F, buf: &mut Vec<F>) -> F {
    traj.eval_into(t, buf);
    domain.implicit(buf)
}

/// Bisect for the zero of g on [a, b] with g(a) < 0 <= g(b).
fn bisect_zero<F: Scalar>(
    traj: &Trajectory<F>,
    domain: &Domain<F>,
    mut a: F,
    mut b: F,
    time_tol: F,
    buf: &mut Vec<F>,
) -> F {
    for _ in 0..200 {
        if b - a <= time_tol {
            break;
        }
        let mid = (a + b) * F::lit(0.5);
        if g_of(traj, domain, mid, buf) < F::zero() {
            a = mid;
        } else {
            b = mid;
        }
    }
    b
}

/// Golden-section search for the maximum of g on [a, b].
fn refine_max<F: Scalar>(
    traj: &Trajectory<F>,
    domain: &Domain<F>,
    mut a: F,
    mut b: F,
    time_tol: F,
    buf: &mut Vec<F>,
) -> (F, F) {
    let inv_phi = F::lit(0.618_033_988_749_894_8);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let mut gc = g_of(traj, domain, c, buf);
    let mut gd = g_of(traj, domain, d, buf);
    for _ in 0..200 {
        if b - a <= time_tol {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - (b - a) * inv_phi;
            gc = g_of(traj, domain, c, buf);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + (b - a) * inv_phi;
            gd = g_of(traj, domain, d, buf);
        }
    }
    let t = (a + b) * F::lit(0.5);
    (t, g_of(traj, domain, t, buf))
}

/// Locate the open- and closed-set exit moments on a dense trajectory.
pub fn exit_times<F: Scalar>(
    traj: &Trajectory<F>,
    domain: &Domain<F>,
    field: &VectorField<F>,
    cfg: &ExitConfig<F>,
) -> Result<ExitRecord<F>> {
    let horizon = traj.end_time();
    let tol_g = cfg.boundary_tol;
    let mut buf = vec![F::zero(); traj.dim()];

    // Start not in the open set: immediate open exit.
    let g_start = domain.implicit(traj.start_state());
    if g_start >= F::zero() {
        let tau_closed = if g_start > tol_g {
            Some(traj.start_time())
        } else {
            first_escape(traj, domain, traj.start_time(), cfg, &mut buf)
        };
        return finish_record(
            traj,
            domain,
            field,
            cfg,
            Some(traj.start_time()),
            tau_closed,
        );
    }

    // Sample g along the trajectory.
    let nodes = traj.nodes();
    let m = cfg.samples_per_step.max(1);
    let mut ts: Vec<F> = Vec::with_capacity(nodes.len() * m);
    for w in nodes.windows(2) {
        for j in 0..m {
            ts.push(w[0] + (w[1] - w[0]) * F::from_usize(j).unwrap() / F::from_usize(m).unwrap());
        }
    }
    ts.push(horizon);
    let gs: Vec<F> = ts.iter().map(|&t| g_of(traj, domain, t, &mut buf)).collect();

    // Collect crossing and grazing events.
    let mut events: Vec<Event<F>> = Vec::new();
    for j in 1..ts.len() {
        if gs[j - 1] < F::zero() && gs[j] >= F::zero() {
            let t = bisect_zero(traj, domain, ts[j - 1], ts[j], cfg.time_tol, &mut buf);
            events.push(Event::Crossing(t));
        }
        if j + 1 < ts.len() && gs[j] > gs[j - 1] && gs[j] > gs[j + 1] && gs[j] < tol_g {
            let (t_ext, g_ext) = refine_max(
                traj,
                domain,
                ts[j - 1],
                ts[j + 1],
                cfg.time_tol * F::lit(0.1),
                &mut buf,
            );
            if g_ext > tol_g {
                // Short escape excursion the samples missed.
                if gs[j - 1] < F::zero() {
                    let t =
                        bisect_zero(traj, domain, ts[j - 1], t_ext, cfg.time_tol, &mut buf);
                    events.push(Event::Crossing(t));
                }
            } else if g_ext >= -tol_g && gs[j - 1] < F::zero() {
                events.push(Event::Grazing(t_ext));
            }
        }
    }
    events.sort_by(|a, b| a.time().partial_cmp(&b.time()).unwrap());

    let tau_open = events.first().map(|e| e.time());
    let tau_closed = match tau_open {
        None => None,
        Some(t0) => first_escape(traj, domain, t0 - cfg.time_tol, cfg, &mut buf),
    };
    finish_record(traj, domain, field, cfg, tau_open, tau_closed)
}

/// First moment after `from` at which g exceeds +tol_g, reported as the
/// preceding zero crossing.
fn first_escape<F: Scalar>(
    traj: &Trajectory<F>,
    domain: &Domain<F>,
    from: F,
    cfg: &ExitConfig<F>,
    buf: &mut Vec<F>,
) -> Option<F> {
    let tol_g = cfg.boundary_tol;
    let nodes = traj.nodes();
    let m = cfg.samples_per_step.max(1);
    let mut prev_t = from.max(traj.start_time());
    let mut prev_g = g_of(traj, domain, prev_t, buf);
    let mut samples: Vec<F> = Vec::new();
    for w in nodes.windows(2) {
        for j in 0..=m {
            let t = w[0] + (w[1] - w[0]) * F::from_usize(j).unwrap() / F::from_usize(m).unwrap();
            if t > prev_t {
                samples.push(t);
            }
        }
    }
    for t in samples {
        let g = g_of(traj, domain, t, buf);
        if g > tol_g {
            // Walk back to the last sign change below zero and bisect it.
            if prev_g < F::zero() {
                return Some(bisect_zero(traj, domain, prev_t, t, cfg.time_tol, buf));
            }
            // Already nonnegative at prev_t (e.g. the crossing itself):
            // report that moment.
            return Some(prev_t.max(traj.start_time()));
        }
        if g < F::zero() {
            prev_t = t;
            prev_g = g;
        }
    }
    None
}

fn finish_record<F: Scalar>(
    traj: &Trajectory<F>,
    domain: &Domain<F>,
    field: &VectorField<F>,
    cfg: &ExitConfig<F>,
    tau_open: Option<F>,
    tau_closed: Option<F>,
) -> Result<ExitRecord<F>> {
    let horizon = traj.end_time();
    let tau = match tau_open {
        Some(t) => t.min(horizon),
        None => horizon,
    };
    let (exit_point, tangency, kind) = match tau_open {
        None => (None, None, ExitKind::None),
        Some(t) => {
            let y = traj.eval(t);
            let g_here = domain.implicit(&y).abs();
            let score = tangency_score(
                domain,
                field,
                &y,
                t,
                g_here.max(cfg.boundary_tol) * F::lit(4.0),
            )?;
            let kind = match tau_closed {
                Some(tc) if (tc - t).abs() <= cfg.time_tol * F::lit(16.0) => {
                    ExitKind::Transversal
                }
                _ => ExitKind::OpenOnly,
            };
            (Some(y), Some(score), kind)
        }
    };
    // Ordering invariant: s <= tau_open <= tau_closed.
    if let (Some(to), Some(tc)) = (tau_open, tau_closed) {
        if tc + cfg.time_tol < to {
            return Err(Error::Integration(format!(
                "exit ordering violated: tau_open = {to}, tau_closed = {tc}"
            )));
        }
    }
    Ok(ExitRecord {
        tau_open,
        tau_closed,
        tau,
        exit_point,
        tangency,
        kind,
    })
}

/// Open-set exit times for a sequence of starts approaching the boundary.
///
/// Every start must lie in the closed domain.
pub fn left_limit_exit<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    starts: &[Vec<F>],
    s: F,
    horizon: F,
    flow_cfg: &FlowConfig<F>,
    exit_cfg: &ExitConfig<F>,
) -> Result<Vec<Option<F>>> {
    let mut out = Vec::with_capacity(starts.len());
    for x in starts {
        if domain.implicit(x) > exit_cfg.boundary_tol {
            return Err(Error::Parameter(format!(
                "start {:?} lies outside the closed domain",
                x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
            )));
        }
        let traj = integrate_flow(field, x, s, horizon, flow_cfg)?;
        let rec = exit_times(&traj, domain, field, exit_cfg)?;
        out.push(rec.tau_open);
    }
    Ok(out)
}
