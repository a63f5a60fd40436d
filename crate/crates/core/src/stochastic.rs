//! Small-noise regularization: Euler–Maruyama ensembles with killing at the
//! boundary.
//!
//! The drift ODE is perturbed to dy = f(y, t) dt + eps dW and the path is
//! killed at the first step whose post-step state has left the open domain.
//! There is no Brownian-bridge correction; the resulting O(sqrt(dt))
//! exit-time bias is documented and absorbed into check tolerances.
//! eps = 0 is a first-class input and degenerates to explicit Euler, so
//! deterministic and stochastic paths share one code path.

use rayon::prelude::*;

use crate::data::{DensitySampler, ScalarData};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{GridFunction, GridSpec, Mask};
use crate::rng::{DrawPurpose, PathRng};
use crate::scalar::{mean_stderr, Scalar};

/// A Monte-Carlo mean with its sampling error and provenance.
#[derive(Clone, Debug)]
pub struct McEstimate<F: Scalar> {
    pub mean: F,
    pub stderr: F,
    pub samples: usize,
    pub seed: u64,
    pub eps: F,
    pub tag: &'static str,
}

impl<F: Scalar> McEstimate<F> {
    fn new(values: &[F], seed: u64, eps: F, tag: &'static str) -> Self {
        let (mean, stderr) = mean_stderr(values);
        Self {
            mean,
            stderr,
            samples: values.len(),
            seed,
            eps,
            tag,
        }
    }
}

/// One simulated path with its kill data.
#[derive(Clone, Debug)]
pub struct SdePath<F: Scalar> {
    pub eps: F,
    pub dt: F,
    pub times: Vec<F>,
    /// Row-major states, one row of `dim` per retained time.
    pub states: Vec<F>,
    pub dim: usize,
    /// Step index at which the path was killed, if any.
    pub exit_step: Option<usize>,
}

impl<F: Scalar> SdePath<F> {
    pub fn state(&self, k: usize) -> &[F] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn survived(&self) -> bool {
        self.exit_step.is_none()
    }
}

fn validate_mc_params<F: Scalar>(eps: F, dt: F) -> Result<()> {
    if eps < F::zero() {
        return Err(Error::Parameter(format!("eps must be >= 0, got {eps}")));
    }
    if dt <= F::zero() {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    Ok(())
}

/// Shared Euler–Maruyama core. Calls `visit(k, t_k, y_k, alive)` for every
/// node including the start; `kill` enables the post-step boundary check.
#[allow(clippy::too_many_arguments)]
fn drive_path<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    eps: F,
    x: &[F],
    s: F,
    n_steps: usize,
    dt: F,
    rng: &PathRng,
    kill: bool,
    mut visit: impl FnMut(usize, F, &[F], bool),
) -> Option<usize> {
    let n = field.dim();
    let mut y = x.to_vec();
    let mut drift = vec![F::zero(); n];
    let mut noise = vec![0.0f64; n];
    let sqrt_dt = dt.sqrt();
    let mut exit_step = None;
    visit(0, s, &y, true);
    for k in 0..n_steps {
        let t = s + dt * F::from_usize(k).unwrap();
        field.eval_into(&y, t, &mut drift);
        if eps > F::zero() {
            rng.normals_into(k as u64, &mut noise);
            for d in 0..n {
                y[d] += drift[d] * dt + eps * sqrt_dt * F::lit(noise[d]);
            }
        } else {
            for d in 0..n {
                y[d] += drift[d] * dt;
            }
        }
        let alive = !kill || domain.implicit(&y) < F::zero();
        visit(k + 1, t + dt, &y, alive);
        if !alive {
            exit_step = Some(k + 1);
            break;
        }
    }
    exit_step
}

fn time_steps<F: Scalar>(s: F, horizon: F, dt: F) -> (usize, F) {
    let span = horizon - s;
    if span <= F::zero() {
        return (0, dt);
    }
    let n = (span / dt).ceil().to_usize().unwrap().max(1);
    (n, span / F::from_usize(n).unwrap())
}

/// Simulate one killed path and retain every node.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    eps: F,
    x: &[F],
    s: F,
    horizon: F,
    dt: F,
    seed: u64,
    path_index: u64,
) -> Result<SdePath<F>> {
    validate_mc_params(eps, dt)?;
    let (n_steps, dt_eff) = time_steps(s, horizon, dt);
    let rng = PathRng::new(seed, path_index);
    let dim = field.dim();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * dim);
    let exit_step = drive_path(
        field,
        domain,
        eps,
        x,
        s,
        n_steps,
        dt_eff,
        &rng,
        true,
        |_k, t, y, _alive| {
            times.push(t);
            states.extend_from_slice(y);
        },
    );
    Ok(SdePath {
        eps,
        dt: dt_eff,
        times,
        states,
        dim,
        exit_step,
    })
}

/// Monte-Carlo estimate of the terminal functional with killing:
/// mean of zeta(y(T)) over paths that never left the domain.
#[allow(clippy::too_many_arguments)]
pub fn mc_terminal<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    zeta: &ScalarData<F>,
    eps: F,
    x: &[F],
    s: F,
    horizon: F,
    dt: F,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<F>> {
    validate_mc_params(eps, dt)?;
    if n_paths < 2 {
        return Err(Error::Parameter("mc_terminal needs at least 2 paths".into()));
    }
    let (n_steps, dt_eff) = time_steps(s, horizon, dt);
    let values: Result<Vec<F>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let rng = PathRng::new(seed, p as u64);
            let mut last = x.to_vec();
            let exit = drive_path(
                field,
                domain,
                eps,
                x,
                s,
                n_steps,
                dt_eff,
                &rng,
                true,
                |_k, _t, y, _alive| last.copy_from_slice(y),
            );
            if exit.is_some() {
                Ok(F::zero())
            } else {
                zeta.eval(&last, horizon)
            }
        })
        .collect();
    Ok(McEstimate::new(&values?, seed, eps, "terminal"))
}

/// Monte-Carlo estimate of the running-cost functional: per-path left
/// rectangle quadrature of phi up to the kill time.
#[allow(clippy::too_many_arguments)]
pub fn mc_integral<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    phi: &ScalarData<F>,
    eps: F,
    x: &[F],
    s: F,
    horizon: F,
    dt: F,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<F>> {
    validate_mc_params(eps, dt)?;
    if n_paths < 2 {
        return Err(Error::Parameter("mc_integral needs at least 2 paths".into()));
    }
    let (n_steps, dt_eff) = time_steps(s, horizon, dt);
    let values: Result<Vec<F>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let rng = PathRng::new(seed, p as u64);
            let mut acc = F::zero();
            let mut err = None;
            let exit = drive_path(
                field,
                domain,
                eps,
                x,
                s,
                n_steps,
                dt_eff,
                &rng,
                true,
                |k, t, y, _alive| {
                    // Charge phi at the step start for every step taken.
                    if k < n_steps && err.is_none() {
                        match phi.eval(y, t) {
                            Ok(v) => acc += v * dt_eff,
                            Err(e) => err = Some(e),
                        }
                    }
                },
            );
            let _ = exit;
            match err {
                Some(e) => Err(e),
                None => Ok(acc),
            }
        })
        .collect();
    Ok(McEstimate::new(&values?, seed, eps, "integral"))
}

/// Mean squared sup-distance between the noisy path and the deterministic
/// Euler path from the same start (no killing on either, matching the
/// Gronwall argument that compares un-stopped processes).
#[allow(clippy::too_many_arguments)]
pub fn path_deviation<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    eps: F,
    x: &[F],
    s: F,
    horizon: F,
    dt: F,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<F>> {
    validate_mc_params(eps, dt)?;
    if n_paths < 2 {
        return Err(Error::Parameter(
            "path_deviation needs at least 2 paths".into(),
        ));
    }
    let (n_steps, dt_eff) = time_steps(s, horizon, dt);
    let dim = field.dim();
    let values: Result<Vec<F>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let rng = PathRng::new(seed, p as u64);
            // Reference path: same scheme, eps = 0.
            let mut reference = Vec::with_capacity((n_steps + 1) * dim);
            drive_path(
                field,
                domain,
                F::zero(),
                x,
                s,
                n_steps,
                dt_eff,
                &rng,
                false,
                |_k, _t, y, _alive| reference.extend_from_slice(y),
            );
            let mut worst = F::zero();
            drive_path(
                field,
                domain,
                eps,
                x,
                s,
                n_steps,
                dt_eff,
                &rng,
                false,
                |k, _t, y, _alive| {
                    let mut d2 = F::zero();
                    for d in 0..dim {
                        let diff = y[d] - reference[k * dim + d];
                        d2 += diff * diff;
                    }
                    worst = worst.max(d2);
                },
            );
            Ok(worst)
        })
        .collect();
    Ok(McEstimate::new(&values?, seed, eps, "deviation"))
}

/// Empirical sub-probability density of survivors at time t.
#[derive(Clone, Debug)]
pub struct DensityEstimate<F: Scalar> {
    /// Histogram of survivors normalized by N · cell volume.
    pub density: GridFunction<F>,
    /// Per-cell binomial standard error on the same scale.
    pub stderr: GridFunction<F>,
    pub samples: usize,
    pub seed: u64,
    pub eps: F,
    /// Fraction of paths still alive at t.
    pub survivor_fraction: F,
}

impl<F: Scalar> DensityEstimate<F> {
    /// L2 half-width of the estimator's one-sigma band.
    pub fn l2_band(&self) -> F {
        self.stderr.norm_l2()
    }
}

/// Draw the initial state for a path according to the sampler recipe.
fn sample_initial<F: Scalar>(
    sampler: &DensitySampler<F>,
    rho: &ScalarData<F>,
    rng: &PathRng,
    dim: usize,
) -> Result<Vec<F>> {
    match sampler {
        DensitySampler::UniformBox { lo, hi } => Ok((0..dim)
            .map(|d| {
                let u = F::lit(rng.uniform(DrawPurpose::Init, 0, d as u64));
                lo[d] + (hi[d] - lo[d]) * u
            })
            .collect()),
        DensitySampler::Rejection { lo, hi, bound } => {
            for attempt in 0u64..10_000 {
                let x: Vec<F> = (0..dim)
                    .map(|d| {
                        let u = F::lit(rng.uniform(DrawPurpose::Init, attempt, d as u64));
                        lo[d] + (hi[d] - lo[d]) * u
                    })
                    .collect();
                let u = F::lit(rng.uniform(DrawPurpose::Init, attempt, dim as u64));
                if u * *bound <= rho.eval(&x, F::zero())? {
                    return Ok(x);
                }
            }
            Err(Error::Data(
                "rejection sampler exhausted its attempt budget; check the declared bound"
                    .into(),
            ))
        }
    }
}

/// Histogram estimator of the killed-process density at time t.
#[allow(clippy::too_many_arguments)]
pub fn mc_density<F: Scalar>(
    field: &VectorField<F>,
    domain: &Domain<F>,
    rho: &ScalarData<F>,
    sampler: &DensitySampler<F>,
    eps: F,
    s: F,
    t: F,
    dt: F,
    n_paths: usize,
    seed: u64,
    spec: &GridSpec<F>,
    mask: &Mask,
) -> Result<DensityEstimate<F>> {
    validate_mc_params(eps, dt)?;
    let (n_steps, dt_eff) = time_steps(s, t, dt);
    let dim = field.dim();
    let cells: Result<Vec<Option<usize>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let rng = PathRng::new(seed, p as u64);
            let x = sample_initial(sampler, rho, &rng, dim)?;
            if domain.implicit(&x) >= F::zero() {
                return Ok(None);
            }
            let mut last = x.clone();
            let exit = drive_path(
                field,
                domain,
                eps,
                &x,
                s,
                n_steps,
                dt_eff,
                &rng,
                true,
                |_k, _t, y, _alive| last.copy_from_slice(y),
            );
            if exit.is_some() {
                Ok(None)
            } else {
                Ok(spec.locate(&last))
            }
        })
        .collect();
    let cells = cells?;

    let mut counts = vec![0usize; spec.len()];
    let mut alive = 0usize;
    for c in cells.into_iter().flatten() {
        counts[c] += 1;
        alive += 1;
    }
    let vol = spec.cell_volume();
    let nf = F::from_usize(n_paths).unwrap();
    let mut density = GridFunction::zeros(spec.clone(), mask.clone());
    let mut stderr = GridFunction::zeros(spec.clone(), mask.clone());
    for lin in 0..spec.len() {
        if !mask[lin] {
            continue;
        }
        let q = F::from_usize(counts[lin]).unwrap() / nf;
        density.values_mut()[lin] = q / vol;
        stderr.values_mut()[lin] = (q * (F::one() - q) / nf).sqrt() / vol;
    }
    Ok(DensityEstimate {
        density,
        stderr,
        samples: n_paths,
        seed,
        eps,
        survivor_fraction: F::from_usize(alive).unwrap() / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataRole;
    use crate::grid::domain_mask;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cos_field() -> VectorField<f64> {
        VectorField::new(1, "cos-t", 1.0, |_x, t: f64, out| out[0] = t.cos())
    }

    fn zero_field() -> VectorField<f64> {
        VectorField::new(1, "zero", 0.0, |_x, _t, out: &mut [f64]| out[0] = 0.0)
    }

    fn interval() -> Domain<f64> {
        Domain::interval(-1.0, 1.0)
    }

    #[test]
    fn deterministic_path_tracks_sine_and_exits_near_pi_over_2() {
        let path = simulate_path(
            &cos_field(),
            &interval(),
            0.0,
            &[0.0],
            0.0,
            2.0 * PI,
            1e-4,
            7,
            0,
        )
        .unwrap();
        let exit = path.exit_step.expect("killed");
        let t_exit = path.times[exit];
        assert!((t_exit - FRAC_PI_2).abs() < 0.05, "exit at {t_exit}");
        // Path within O(dt) of sin t before the exit.
        for k in (0..exit).step_by(500) {
            assert!((path.state(k)[0] - path.times[k].sin()).abs() < 1e-3);
        }
    }

    #[test]
    fn fixed_seed_reproduces_paths_bit_exactly() {
        let mk = || {
            simulate_path(
                &zero_field(),
                &interval(),
                0.3,
                &[0.1],
                0.0,
                1.0,
                1e-3,
                99,
                5,
            )
            .unwrap()
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.states, b.states);
        assert_eq!(a.exit_step, b.exit_step);
    }

    #[test]
    fn brownian_motion_escapes_with_positive_probability() {
        let field = zero_field();
        let dom = interval();
        let mut exits = 0;
        for p in 0..200 {
            let path =
                simulate_path(&field, &dom, 1.0, &[0.0], 0.0, 1.0, 1e-3, 2024, p).unwrap();
            if path.exit_step.is_some() {
                exits += 1;
            }
        }
        assert!(exits > 0, "no path exited");
        assert!(exits < 200, "every path exited");
    }

    #[test]
    fn increment_variance_matches_declaration() {
        // Ensemble second moment of one-step displacements for f == 0.
        let eps = 0.37;
        let dt = 1e-2;
        let field = zero_field();
        let dom = Domain::interval(-100.0, 100.0);
        let mut sumsq = 0.0;
        let n = 20_000;
        for p in 0..n {
            let path = simulate_path(&field, &dom, eps, &[0.0], 0.0, dt, dt, 3, p).unwrap();
            let d = path.state(1)[0] - path.state(0)[0];
            sumsq += d * d;
        }
        let var = sumsq / n as f64;
        let expect = eps * eps * dt;
        assert!((var / expect - 1.0).abs() < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn mc_terminal_with_zero_noise_is_exact_indicator() {
        let f = cos_field();
        let dom = interval();
        let one = ScalarData::one(DataRole::Terminal);
        // x = -0.5 survives to T = pi.
        let est = mc_terminal(&f, &dom, &one, 0.0, &[-0.5], 0.0, PI, 1e-3, 16, 1).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
        // x = 0.5 is killed.
        let est = mc_terminal(&f, &dom, &one, 0.0, &[0.5], 0.0, PI, 1e-3, 16, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn mc_terminal_zero_data_is_zero() {
        let f = zero_field();
        let dom = interval();
        let zero = ScalarData::zero(DataRole::Terminal);
        let est = mc_terminal(&f, &dom, &zero, 1.0, &[0.0], 0.0, 1.0, 1e-2, 64, 3).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn residence_time_estimate_of_grazing_start() {
        // phi == 1, eps = 0: V = capped exit time; the Euler path overshoots
        // the tangency at pi/2 and is killed there.
        let f = cos_field();
        let dom = interval();
        let one = ScalarData::one(DataRole::Running);
        let est =
            mc_integral(&f, &dom, &one, 0.0, &[0.0], 0.0, 2.0 * PI, 1e-4, 4, 11).unwrap();
        assert!((est.mean - FRAC_PI_2).abs() < 0.05, "V = {}", est.mean);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn mean_exit_time_of_scaled_brownian_motion() {
        // f == 0, eps = 1 on (-1, 1): E tau = (1 - x^2)/eps^2 = 1 at x = 0.
        // T = 20 is an effective-infinity surrogate.
        let f = zero_field();
        let dom = interval();
        let one = ScalarData::one(DataRole::Running);
        let est =
            mc_integral(&f, &dom, &one, 1.0, &[0.0], 0.0, 20.0, 1e-4, 4000, 17).unwrap();
        let err = (est.mean - 1.0).abs();
        assert!(
            err < 3.0 * est.stderr + 0.03,
            "mean {} stderr {}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn deviation_is_zero_without_noise_and_scales_with_eps_squared() {
        let f = zero_field();
        let dom = interval();
        let z0 = path_deviation(&f, &dom, 0.0, &[0.0], 0.0, 1.0, 1e-3, 8, 23).unwrap();
        assert_eq!(z0.mean, 0.0);
        // For f == 0, the deviation is exactly eps^2 sup |w|^2 with the same
        // Wiener path under a common seed, so halving eps quarters the mean.
        let z1 = path_deviation(&f, &dom, 0.2, &[0.0], 0.0, 1.0, 1e-3, 256, 23).unwrap();
        let z2 = path_deviation(&f, &dom, 0.1, &[0.0], 0.0, 1.0, 1e-3, 256, 23).unwrap();
        assert!(
            (z1.mean / z2.mean - 4.0).abs() < 1e-10,
            "ratio {}",
            z1.mean / z2.mean
        );
    }

    #[test]
    fn deviation_decreases_with_eps_on_cos_scenario() {
        let f = cos_field();
        let dom = interval();
        let mut prev = f64::INFINITY;
        for &eps in &[0.2, 0.1, 0.05] {
            let z =
                path_deviation(&f, &dom, eps, &[0.0], 0.0, 2.0 * PI, 1e-3, 500, 31).unwrap();
            assert!(
                z.mean + 3.0 * z.stderr < prev,
                "not separated at eps {eps}"
            );
            prev = z.mean;
        }
    }

    #[test]
    fn density_translates_with_unit_drift() {
        // f == 1, eps = 0, rho uniform on (-1, 0): at t = 0.5 the mass sits
        // on (-0.5, 0.5).
        let f = VectorField::new(1, "one", 1.0, |_x, _t, out: &mut [f64]| out[0] = 1.0);
        let dom = interval();
        let rho = ScalarData::uniform_density(vec![-1.0], vec![0.0]);
        let sampler = DensitySampler::UniformBox {
            lo: vec![-1.0],
            hi: vec![0.0],
        };
        let spec = GridSpec::from_domain(&dom, 64);
        let mask = domain_mask(&spec, &dom);
        let est = mc_density(
            &f, &dom, &rho, &sampler, 0.0, 0.0, 0.5, 1e-3, 40_000, 5, &spec, &mask,
        )
        .unwrap();
        let target = GridFunction::sample(spec.clone(), mask.clone(), |x| {
            if x[0] > -0.5 && x[0] < 0.5 {
                1.0
            } else {
                0.0
            }
        });
        let d = est.density.distance_l2(&target).unwrap();
        assert!(d <= 3.0 * est.l2_band() + 0.2, "d = {d}, band = {}", est.l2_band());
        // Mass at most one.
        assert!(est.density.mass() <= 1.0 + 1e-9);
    }

    #[test]
    fn frozen_particles_keep_their_histogram() {
        let f = zero_field();
        let dom = interval();
        let rho = ScalarData::uniform_density(vec![-0.8], vec![-0.2]);
        let sampler = DensitySampler::UniformBox {
            lo: vec![-0.8],
            hi: vec![-0.2],
        };
        let spec = GridSpec::from_domain(&dom, 32);
        let mask = domain_mask(&spec, &dom);
        let at = |t: f64| {
            mc_density(
                &f, &dom, &rho, &sampler, 0.0, 0.0, t, 1e-2, 5_000, 77, &spec, &mask,
            )
            .unwrap()
        };
        let early = at(0.25);
        let late = at(1.0);
        assert_eq!(early.density.values(), late.density.values());
        assert_eq!(early.survivor_fraction, 1.0);
    }

    #[test]
    fn survivor_mass_is_nonincreasing_in_time() {
        let f = zero_field();
        let dom = interval();
        let rho = ScalarData::uniform_density(vec![-0.9], vec![0.9]);
        let sampler = DensitySampler::UniformBox {
            lo: vec![-0.9],
            hi: vec![0.9],
        };
        let spec = GridSpec::from_domain(&dom, 32);
        let mask = domain_mask(&spec, &dom);
        let mut prev = 1.0f64 + 1e-12;
        for &t in &[0.1, 0.3, 0.6, 1.0] {
            let est = mc_density(
                &f, &dom, &rho, &sampler, 0.5, 0.0, t, 1e-2, 4_000, 13, &spec, &mask,
            )
            .unwrap();
            assert!(est.survivor_fraction <= prev);
            prev = est.survivor_fraction;
        }
    }

    #[test]
    fn parameter_validation() {
        let f = zero_field();
        let dom = interval();
        let one = ScalarData::one(DataRole::Terminal);
        assert!(mc_terminal(&f, &dom, &one, -0.1, &[0.0], 0.0, 1.0, 1e-2, 8, 0).is_err());
        assert!(mc_terminal(&f, &dom, &one, 0.1, &[0.0], 0.0, 1.0, 0.0, 8, 0).is_err());
        assert!(mc_terminal(&f, &dom, &one, 0.1, &[0.0], 0.0, 1.0, 1e-2, 1, 0).is_err());
    }
}
