//! Explicit Runge–Kutta 5(4) integration of the drift ODE with dense output.
//!
//! The integrator is the Dormand–Prince 5(4) pair with the standard
//! fourth-order continuous extension, which is what the exit detector
//! bisects on. Trajectories are immutable once built.

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Scalar;

/// Integrator controls.
#[derive(Clone, Debug)]
pub struct FlowConfig<F: Scalar> {
    pub rel_tol: F,
    pub abs_tol: F,
    pub max_steps: usize,
}

impl<F: Scalar> Default for FlowConfig<F> {
    fn default() -> Self {
        Self {
            rel_tol: F::lit(1e-9),
            abs_tol: F::lit(1e-9),
            max_steps: 1_000_000,
        }
    }
}

impl<F: Scalar> FlowConfig<F> {
    pub fn with_tol(tol: F) -> Self {
        Self {
            rel_tol: tol,
            abs_tol: tol,
            ..Self::default()
        }
    }
}

/// One accepted step with its dense-output coefficients.
#[derive(Clone, Debug)]
struct DenseStep<F: Scalar> {
    t0: F,
    h: F,
    rcont: [Vec<F>; 5],
}

impl<F: Scalar> DenseStep<F> {
    fn eval_into(&self, t: F, out: &mut [F]) {
        let theta = ((t - self.t0) / self.h).max(F::zero()).min(F::one());
        let omt = F::one() - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] =
                r1[i] + theta * (r2[i] + omt * (r3[i] + theta * (r4[i] + omt * r5[i])));
        }
    }
}

/// A solution path y(t) on [s, horizon] with continuous evaluation.
#[derive(Clone, Debug)]
pub struct Trajectory<F: Scalar> {
    dim: usize,
    start_state: Vec<F>,
    start_time: F,
    end_time: F,
    end_state: Vec<F>,
    steps: Vec<DenseStep<F>>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start_time(&self) -> F {
        self.start_time
    }

    pub fn end_time(&self) -> F {
        self.end_time
    }

    pub fn start_state(&self) -> &[F] {
        &self.start_state
    }

    pub fn end_state(&self) -> &[F] {
        &self.end_state
    }

    /// Accepted step boundaries s = t_0 < t_1 < ... = horizon.
    pub fn nodes(&self) -> Vec<F> {
        let mut ts: Vec<F> = self.steps.iter().map(|s| s.t0).collect();
        ts.push(self.end_time);
        ts
    }

    /// Dense evaluation; clamps t into [start, end].
    pub fn eval_into(&self, t: F, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.dim);
        if t <= self.start_time {
            out.copy_from_slice(&self.start_state);
            return;
        }
        if t >= self.end_time {
            out.copy_from_slice(&self.end_state);
            return;
        }
        // Binary search for the step containing t.
        let mut lo = 0usize;
        let mut hi = self.steps.len();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.steps[mid].t0 <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.steps[lo].eval_into(t, out);
    }

    pub fn eval(&self, t: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1. / 5., 0., 0., 0., 0., 0.],
    [3. / 40., 9. / 40., 0., 0., 0., 0.],
    [44. / 45., -56. / 15., 32. / 9., 0., 0., 0.],
    [
        19372. / 6561.,
        -25360. / 2187.,
        64448. / 6561.,
        -212. / 729.,
        0.,
        0.,
    ],
    [
        9017. / 3168.,
        -355. / 33.,
        46732. / 5247.,
        49. / 176.,
        -5103. / 18656.,
        0.,
    ],
    [
        35. / 384.,
        0.,
        500. / 1113.,
        125. / 192.,
        -2187. / 6784.,
        11. / 84.,
    ],
];
const C: [f64; 6] = [1. / 5., 3. / 10., 4. / 5., 8. / 9., 1., 1.];
// b - b_hat, for the embedded error estimate.
const E: [f64; 7] = [
    71. / 57600.,
    0.,
    -71. / 16695.,
    71. / 1920.,
    -17253. / 339200.,
    22. / 525.,
    -1. / 40.,
];
// Continuous-extension weights for the fifth coefficient.
const D: [f64; 7] = [
    -12715105075. / 11282082432.,
    0.,
    87487479700. / 32700410799.,
    -10690763975. / 1880347072.,
    701980252875. / 199316789632.,
    -1453857185. / 822651844.,
    69997945. / 29380423.,
];

/// Integrate dy/dt = f(y, t) from y(s) = x up to the horizon.
pub fn integrate_flow<F: Scalar>(
    field: &VectorField<F>,
    x: &[F],
    s: F,
    horizon: F,
    cfg: &FlowConfig<F>,
) -> Result<Trajectory<F>> {
    if horizon < s {
        return Err(Error::Parameter(format!(
            "horizon {horizon} precedes start time {s}"
        )));
    }
    let n = field.dim();
    debug_assert_eq!(x.len(), n);

    let mut steps: Vec<DenseStep<F>> = Vec::new();
    let mut t = s;
    let mut y = x.to_vec();
    let mut k: Vec<Vec<F>> = (0..7).map(|_| vec![F::zero(); n]).collect();
    field.eval_into(&y, t, &mut k[0]);

    if horizon == s {
        return Ok(Trajectory {
            dim: n,
            start_state: y.clone(),
            start_time: s,
            end_time: s,
            end_state: y,
            steps,
        });
    }

    // Initial step: conservative fraction of the span, shrunk by the
    // current derivative scale.
    let span = horizon - s;
    let dscale = k[0].iter().fold(F::zero(), |a, &v| a.max(v.abs()));
    let mut h = (span * F::lit(1e-2)).min(cfg.rel_tol.powf(F::lit(0.2)))
        / (F::one() + dscale);
    let h_min = (horizon - s) * F::epsilon() * F::lit(32.0);

    let mut y_next = vec![F::zero(); n];
    let mut y_stage = vec![F::zero(); n];
    let mut n_steps = 0usize;

    while t < horizon {
        n_steps += 1;
        if n_steps > cfg.max_steps {
            return Err(Error::Integration(format!(
                "step budget exhausted at t = {t} (h = {h})"
            )));
        }
        if h < h_min {
            return Err(Error::Integration(format!(
                "step size underflow at t = {t}: h = {h} < {h_min}"
            )));
        }
        let h_eff = if t + h > horizon { horizon - t } else { h };

        // Stages 2..7 (k1 is fresh from FSAL or the initial evaluation).
        for stage in 0..6 {
            for i in 0..n {
                let mut acc = F::zero();
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += F::lit(a) * kj[i];
                    }
                }
                y_stage[i] = y[i] + h_eff * acc;
            }
            field.eval_into(&y_stage, t + F::lit(C[stage]) * h_eff, &mut k[stage + 1]);
        }
        // Fifth-order solution is the last stage argument (A row 6 = b).
        y_next.copy_from_slice(&y_stage);

        // Scaled error norm.
        let mut err = F::zero();
        for i in 0..n {
            let mut e = F::zero();
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += F::lit(E[j]) * kj[i];
                }
            }
            e *= h_eff;
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_next[i].abs());
            let q = e / scale;
            err += q * q;
        }
        err = (err / F::from_usize(n).unwrap()).sqrt();

        if err <= F::one() {
            // Accept: build dense coefficients.
            let mut r1 = vec![F::zero(); n];
            let mut r2 = vec![F::zero(); n];
            let mut r3 = vec![F::zero(); n];
            let mut r4 = vec![F::zero(); n];
            let mut r5 = vec![F::zero(); n];
            for i in 0..n {
                let ydiff = y_next[i] - y[i];
                let bspl = h_eff * k[0][i] - ydiff;
                r1[i] = y[i];
                r2[i] = ydiff;
                r3[i] = bspl;
                r4[i] = ydiff - h_eff * k[6][i] - bspl;
                let mut acc = F::zero();
                for (j, kj) in k.iter().enumerate() {
                    if D[j] != 0.0 {
                        acc += F::lit(D[j]) * kj[i];
                    }
                }
                r5[i] = h_eff * acc;
            }
            steps.push(DenseStep {
                t0: t,
                h: h_eff,
                rcont: [r1, r2, r3, r4, r5],
            });
            t = t + h_eff;
            y.copy_from_slice(&y_next);
            // FSAL: k7 of the accepted step is k1 of the next.
            let k7 = k[6].clone();
            k[0].copy_from_slice(&k7);
        }

        // Step-size update (both accept and reject paths).
        let fac = if err == F::zero() {
            F::lit(5.0)
        } else {
            (F::lit(0.9) * err.powf(F::lit(-0.2)))
                .max(F::lit(0.2))
                .min(F::lit(5.0))
        };
        h = h_eff * fac;
    }

    Ok(Trajectory {
        dim: n,
        start_state: x.to_vec(),
        start_time: s,
        end_time: horizon,
        end_state: y,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cos_field() -> VectorField<f64> {
        VectorField::new(1, "cos-t", 1.0, |_x, t: f64, out| out[0] = t.cos())
            .with_divergence(|_x, _t| 0.0)
    }

    #[test]
    fn cos_flow_matches_closed_form() {
        // y' = cos t from 0: y(t) = sin t, checked densely.
        let f = cos_field();
        let cfg = FlowConfig::with_tol(1e-10);
        let traj = integrate_flow(&f, &[0.0], 0.0, 2.0 * PI, &cfg).unwrap();
        for k in 0..=100 {
            let t = 2.0 * PI * k as f64 / 100.0;
            let y = traj.eval(t);
            assert!(
                (y[0] - t.sin()).abs() < 1e-8,
                "t = {t}: y = {} vs {}",
                y[0],
                t.sin()
            );
        }
    }

    #[test]
    fn shifted_start_matches_closed_form() {
        // y(t) = x + sin t - sin s.
        let f = cos_field();
        let cfg = FlowConfig::with_tol(1e-10);
        let (x, s) = (-0.3, 0.7);
        let traj = integrate_flow(&f, &[x], s, 5.0, &cfg).unwrap();
        let t = 3.9;
        let y = traj.eval(t);
        assert!((y[0] - (x + t.sin() - s.sin())).abs() < 1e-9);
    }

    #[test]
    fn zero_field_is_constant() {
        let f = VectorField::new(2, "zero", 0.0, |_x, _t, out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = 0.0;
        });
        let traj =
            integrate_flow(&f, &[0.4, -0.2], 0.0, 3.0, &FlowConfig::default()).unwrap();
        let y = traj.eval(1.7);
        assert_eq!(y, vec![0.4, -0.2]);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let f = VectorField::new(1, "linear-decay", 1.0, |x: &[f64], _t, out| out[0] = -x[0]);
        let traj =
            integrate_flow(&f, &[1.0], 0.0, 4.0, &FlowConfig::with_tol(1e-11)).unwrap();
        for k in 0..=16 {
            let t = 4.0 * k as f64 / 16.0;
            assert!((traj.eval(t)[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn flow_property_restart_consistency() {
        // Integrate to theta, restart there, integrate to t: must match the
        // single-shot run within 10x the tolerance.
        let f = cos_field();
        let tol = 1e-9;
        let cfg = FlowConfig::with_tol(tol);
        let single = integrate_flow(&f, &[0.2], 0.0, 5.0, &cfg).unwrap();
        let theta = 2.3;
        let first = integrate_flow(&f, &[0.2], 0.0, theta, &cfg).unwrap();
        let second = integrate_flow(&f, first.end_state(), theta, 5.0, &cfg).unwrap();
        let d = (single.end_state()[0] - second.end_state()[0]).abs();
        assert!(d < 10.0 * tol, "restart drift {d}");
    }

    #[test]
    fn degenerate_interval_is_identity() {
        let f = cos_field();
        let traj = integrate_flow(&f, &[0.5], 1.0, 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(traj.end_state(), &[0.5]);
        assert_eq!(traj.eval(1.0), vec![0.5]);
    }

    #[test]
    fn reversed_horizon_is_a_parameter_error() {
        let f = cos_field();
        assert!(integrate_flow(&f, &[0.0], 1.0, 0.0, &FlowConfig::default()).is_err());
    }
}
