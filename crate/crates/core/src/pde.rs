//! Dual transport/parabolic solvers on masked grids.
//!
//! The forward problem evolves densities,
//!     dp/dt = -div(f p) + (eps²/2) Δp,   p = 0 on the boundary,
//! and the backward problem evolves values,
//!     du/dt + f·∇u + (eps²/2) Δu = 0,    u = 0 on the boundary.
//!
//! Each forward time step is assembled as an explicit linear map, and the
//! backward solver applies the *matrix transposes of the same maps* in
//! reverse order. The discrete pairing (u, p) is therefore conserved to
//! round-off, which isolates discretization error from adjointness error in
//! every duality check downstream.
//!
//! Two advection discretizations are available:
//!
//! - `Upwind`: donor-cell fluxes, explicit, CFL-limited. Monotone and
//!   simple, but its numerical diffusion smears discontinuous data with a
//!   front width O(sqrt(h)), which caps the observable L2 rate on
//!   indicator data at 1/4.
//! - `Remap` (default for eps = 0): conservative semi-Lagrangian remap with
//!   RK4 face tracing. Unconditionally stable, monotone, mass-conserving,
//!   and it keeps fronts O(h)-sharp at a fixed step count, which is what
//!   the indicator-data convergence targets require. Each step is a cell
//!   average of exactly transported data, so the step norm inherits the
//!   growth bound of the continuous operator.
//!
//! Diffusion (eps > 0) is second-order centered with Crank–Nicolson in
//! time, solved matrix-free by conjugate gradients; the CN map is symmetric
//! so it is its own transpose. Dirichlet data enters through ghost cells
//! pinned at zero.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{GridFunction, GridSpec, Mask};
use crate::rng::{DrawPurpose, PathRng};
use crate::scalar::Scalar;

/// Advection discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvectionScheme {
    /// Donor-cell upwind, explicit under CFL.
    Upwind,
    /// Conservative semi-Lagrangian remap (dimension-split in n >= 2).
    Remap,
}

/// Scheme parameters.
#[derive(Clone, Debug)]
pub struct SchemeConfig<F: Scalar> {
    pub advection: AdvectionScheme,
    /// RK4 sub-steps per time step when tracing remap faces.
    pub trace_substeps: usize,
    /// Relative tolerance of the CN conjugate-gradient solve.
    pub cg_rel_tol: F,
    pub cg_max_iter: usize,
}

impl<F: Scalar> Default for SchemeConfig<F> {
    fn default() -> Self {
        Self {
            advection: AdvectionScheme::Remap,
            trace_substeps: 4,
            cg_rel_tol: F::lit(1e-13),
            cg_max_iter: 100_000,
        }
    }
}

impl<F: Scalar> SchemeConfig<F> {
    pub fn upwind() -> Self {
        Self {
            advection: AdvectionScheme::Upwind,
            ..Self::default()
        }
    }
}

/// Which problem the operator solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Densities: rho at t0 evolves to p(., t1).
    Forward,
    /// Values: data at t1 pulls back to u(., t0).
    Backward,
}

// ---------------------------------------------------------------------
// Sparse step matrices.
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Csr<F: Scalar> {
    rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<F>,
}

impl<F: Scalar> Csr<F> {
    fn from_rows(rows: Vec<Vec<(u32, F)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            rows: n,
            row_ptr,
            cols,
            vals,
        }
    }

    fn apply(&self, x: &[F], y: &mut [F]) {
        for r in 0..self.rows {
            let mut acc = F::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    fn apply_transpose(&self, x: &[F], y: &mut [F]) {
        for v in y.iter_mut() {
            *v = F::zero();
        }
        for r in 0..self.rows {
            let xr = x[r];
            if xr == F::zero() {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k] as usize] += self.vals[k] * xr;
            }
        }
    }
}

// ---------------------------------------------------------------------
// Crank–Nicolson diffusion.
// ---------------------------------------------------------------------

/// Neighbor table and CN solve state for the masked Laplacian.
struct Diffusion<F: Scalar> {
    kappa: F,
    len: usize,
    dim: usize,
    /// For each cell and axis: [minus, plus] neighbor or usize::MAX.
    neighbors: Vec<usize>,
    inv_h2: Vec<F>,
    mask: Mask,
    cg_rel_tol: F,
    cg_max_iter: usize,
}

const NO_NEIGHBOR: usize = usize::MAX;

impl<F: Scalar> Diffusion<F> {
    fn new(spec: &GridSpec<F>, mask: &Mask, kappa: F, cfg: &SchemeConfig<F>) -> Self {
        let len = spec.len();
        let dim = spec.dim();
        let mut neighbors = vec![NO_NEIGHBOR; len * dim * 2];
        for lin in 0..len {
            if !mask[lin] {
                continue;
            }
            let idx = spec.multi(lin);
            for d in 0..dim {
                let mut m = idx.clone();
                if idx[d] > 0 {
                    m[d] = idx[d] - 1;
                    let nb = spec.linear(&m);
                    if mask[nb] {
                        neighbors[(lin * dim + d) * 2] = nb;
                    }
                }
                if idx[d] + 1 < spec.cells()[d] {
                    m[d] = idx[d] + 1;
                    let nb = spec.linear(&m);
                    if mask[nb] {
                        neighbors[(lin * dim + d) * 2 + 1] = nb;
                    }
                }
            }
        }
        let inv_h2 = spec
            .spacing()
            .iter()
            .map(|&h| F::one() / (h * h))
            .collect();
        Self {
            kappa,
            len,
            dim,
            neighbors,
            inv_h2,
            mask: mask.clone(),
            cg_rel_tol: cfg.cg_rel_tol,
            cg_max_iter: cfg.cg_max_iter,
        }
    }

    /// y = (I + sign·kappa·Lap) x on masked cells.
    fn apply_shifted(&self, sign: F, x: &[F], y: &mut [F]) {
        for lin in 0..self.len {
            if !self.mask[lin] {
                y[lin] = F::zero();
                continue;
            }
            let mut lap = F::zero();
            for d in 0..self.dim {
                let m = self.neighbors[(lin * self.dim + d) * 2];
                let p = self.neighbors[(lin * self.dim + d) * 2 + 1];
                let xm = if m == NO_NEIGHBOR { F::zero() } else { x[m] };
                let xp = if p == NO_NEIGHBOR { F::zero() } else { x[p] };
                lap += (xm + xp - F::lit(2.0) * x[lin]) * self.inv_h2[d];
            }
            y[lin] = x[lin] + sign * self.kappa * lap;
        }
    }

    /// Solve (I - kappa Lap) out = (I + kappa Lap) x by CG.
    fn solve_cn(&self, x: &[F], out: &mut [F]) -> Result<()> {
        let mut b = vec![F::zero(); self.len];
        self.apply_shifted(F::one(), x, &mut b);
        out.copy_from_slice(x);

        let mut r = vec![F::zero(); self.len];
        let mut ap = vec![F::zero(); self.len];
        self.apply_shifted(-F::one(), out, &mut ap);
        for i in 0..self.len {
            r[i] = b[i] - ap[i];
        }
        let mut p = r.clone();
        let dot = |a: &[F], b: &[F]| {
            let mut acc = F::zero();
            for i in 0..a.len() {
                acc += a[i] * b[i];
            }
            acc
        };
        let b_norm = dot(&b, &b).sqrt();
        let tol = self.cg_rel_tol * b_norm.max(F::epsilon());
        let mut rr = dot(&r, &r);
        if rr.sqrt() <= tol {
            return Ok(());
        }
        for _ in 0..self.cg_max_iter {
            self.apply_shifted(-F::one(), &p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..self.len {
                out[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= tol {
                return Ok(());
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..self.len {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolve(format!(
            "CN conjugate gradients stalled at residual {:e}",
            rr.sqrt().to_f64_lossy()
        )))
    }
}

// ---------------------------------------------------------------------
// One time step.
// ---------------------------------------------------------------------

/// Linear maps making up one forward step; the backward step applies their
/// transposes in reverse order (the CN map is symmetric).
struct StepOp<F: Scalar> {
    advections: Vec<Csr<F>>,
    diffusion: Option<Arc<Diffusion<F>>>,
}

impl<F: Scalar> StepOp<F> {
    fn apply(&self, v: &mut Vec<F>, scratch: &mut Vec<F>) -> Result<()> {
        for a in &self.advections {
            a.apply(v, scratch);
            std::mem::swap(v, scratch);
        }
        if let Some(d) = &self.diffusion {
            d.solve_cn(v, scratch)?;
            std::mem::swap(v, scratch);
        }
        Ok(())
    }

    fn apply_transpose(&self, v: &mut Vec<F>, scratch: &mut Vec<F>) -> Result<()> {
        if let Some(d) = &self.diffusion {
            d.solve_cn(v, scratch)?;
            std::mem::swap(v, scratch);
        }
        for a in self.advections.iter().rev() {
            a.apply_transpose(v, scratch);
            std::mem::swap(v, scratch);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Advection assembly.
// ---------------------------------------------------------------------

/// Donor-cell upwind matrix for one step at time t.
fn assemble_upwind<F: Scalar>(
    field: &VectorField<F>,
    spec: &GridSpec<F>,
    mask: &Mask,
    t: F,
    dt: F,
) -> Result<Csr<F>> {
    let len = spec.len();
    let dim = spec.dim();
    let mut rows: Vec<Vec<(u32, F)>> = vec![Vec::new(); len];
    let mut fbuf = vec![F::zero(); dim];
    let mut max_rate = F::zero();
    let half = F::lit(0.5);

    for lin in 0..len {
        if !mask[lin] {
            continue;
        }
        let idx = spec.multi(lin);
        let center = spec.center(&idx);
        let mut diag = F::one();
        let mut entries: Vec<(u32, F)> = Vec::with_capacity(2 * dim);
        let mut outflow_rate = F::zero();
        for d in 0..dim {
            let h = spec.spacing()[d];
            let lam = dt / h;
            // Face on the plus side.
            let mut face = center.clone();
            face[d] = center[d] + h * half;
            field.eval_into(&face, t, &mut fbuf);
            let vp = fbuf[d];
            // Face on the minus side.
            face[d] = center[d] - h * half;
            field.eval_into(&face, t, &mut fbuf);
            let vm = fbuf[d];

            let vp_pos = vp.max(F::zero());
            let vp_neg = vp.min(F::zero());
            let vm_pos = vm.max(F::zero());
            let vm_neg = vm.min(F::zero());

            diag -= lam * (vp_pos - vm_neg);
            outflow_rate += (vp_pos - vm_neg) / h;

            let mut nb = idx.clone();
            if vp_neg < F::zero() && idx[d] + 1 < spec.cells()[d] {
                nb[d] = idx[d] + 1;
                let j = spec.linear(&nb);
                if mask[j] {
                    entries.push((j as u32, -lam * vp_neg));
                }
                nb[d] = idx[d];
            }
            if vm_pos > F::zero() && idx[d] > 0 {
                nb[d] = idx[d] - 1;
                let j = spec.linear(&nb);
                if mask[j] {
                    entries.push((j as u32, lam * vm_pos));
                }
            }
        }
        max_rate = max_rate.max(outflow_rate);
        entries.push((lin as u32, diag));
        entries.sort_by_key(|e| e.0);
        rows[lin] = entries;
    }

    if dt * max_rate > F::one() + F::lit(1e-12) {
        return Err(Error::Cfl {
            dt: dt.to_f64_lossy(),
            admissible: (F::one() / max_rate).to_f64_lossy(),
        });
    }
    Ok(Csr::from_rows(rows))
}

/// Conservative semi-Lagrangian remap along one axis.
///
/// Cell faces are traced backward over [t, t + dt] through dx/dr = f_d,
/// holding the transverse coordinates at their cell-center values; the new
/// cell value is the average of the old piecewise-constant field over the
/// traced interval. Out-of-mask and out-of-grid data count as zero, which
/// realizes both absorption and the Dirichlet ghost convention.
fn assemble_remap_axis<F: Scalar>(
    field: &VectorField<F>,
    spec: &GridSpec<F>,
    mask: &Mask,
    axis: usize,
    t: F,
    dt: F,
    substeps: usize,
) -> Csr<F> {
    let len = spec.len();
    let dim = spec.dim();
    let n_ax = spec.cells()[axis];
    let h = spec.spacing()[axis];
    let origin = spec.origin()[axis];
    let mut rows: Vec<Vec<(u32, F)>> = vec![Vec::new(); len];

    // Enumerate lines: all multi-indices with idx[axis] == 0.
    let mut transverse = vec![0usize; dim];
    let mut fbuf = vec![F::zero(); dim];
    let m = substeps.max(1);
    let sub = dt / F::from_usize(m).unwrap();
    let half = F::lit(0.5);
    let sixth = F::lit(1.0 / 6.0);
    let two = F::lit(2.0);

    'lines: loop {
        // Transverse center coordinates (axis coordinate replaced below).
        let mut pos = spec.center(&transverse);

        // Trace every face of this line backward in time.
        let mut pre = vec![F::zero(); n_ax + 1];
        for (k, pk) in pre.iter_mut().enumerate() {
            let mut x = origin + h * F::from_usize(k).unwrap();
            // RK4 backward from t + dt to t.
            let mut r = t + dt;
            for _ in 0..m {
                let eval = |xx: F, rr: F, pos: &mut Vec<F>, fb: &mut Vec<F>| {
                    pos[axis] = xx;
                    field.eval_into(pos, rr, fb);
                    fb[axis]
                };
                let k1 = eval(x, r, &mut pos, &mut fbuf);
                let k2 = eval(x - half * sub * k1, r - half * sub, &mut pos, &mut fbuf);
                let k3 = eval(x - half * sub * k2, r - half * sub, &mut pos, &mut fbuf);
                let k4 = eval(x - sub * k3, r - sub, &mut pos, &mut fbuf);
                x = x - sub * sixth * (k1 + two * k2 + two * k3 + k4);
                r = r - sub;
            }
            *pk = x;
        }
        // Characteristics of a smooth field do not cross; repair any
        // tracing noise so the preimage intervals stay ordered.
        for k in 1..pre.len() {
            if pre[k] < pre[k - 1] {
                pre[k] = pre[k - 1];
            }
        }

        // Overlap weights per target cell.
        let mut idx = transverse.clone();
        for i in 0..n_ax {
            idx[axis] = i;
            let lin = spec.linear(&idx);
            if !mask[lin] {
                continue;
            }
            let (a, b) = (pre[i], pre[i + 1]);
            if b <= a {
                continue;
            }
            let j_lo = ((a - origin) / h).floor().to_isize().unwrap_or(0);
            let j_hi = ((b - origin) / h).floor().to_isize().unwrap_or(0);
            let mut entries: Vec<(u32, F)> = Vec::new();
            let mut src = transverse.clone();
            for j in j_lo..=j_hi {
                if j < 0 || j as usize >= n_ax {
                    continue;
                }
                let cell_lo = origin + h * F::from_isize(j).unwrap();
                let cell_hi = cell_lo + h;
                let overlap = b.min(cell_hi) - a.max(cell_lo);
                if overlap <= F::zero() {
                    continue;
                }
                src[axis] = j as usize;
                let j_lin = spec.linear(&src);
                if mask[j_lin] {
                    entries.push((j_lin as u32, overlap / h));
                }
            }
            rows[lin] = entries;
        }

        // Next line.
        let mut d = 0;
        loop {
            if d == axis {
                d += 1;
                if d >= dim {
                    break 'lines;
                }
            }
            transverse[d] += 1;
            if transverse[d] < spec.cells()[d] {
                break;
            }
            transverse[d] = 0;
            d += 1;
            if d >= dim {
                break 'lines;
            }
        }
        if dim == 1 {
            break;
        }
    }
    Csr::from_rows(rows)
}

// ---------------------------------------------------------------------
// Evolution operators.
// ---------------------------------------------------------------------

/// A time-stamped family of grid functions.
#[derive(Clone, Debug)]
pub struct FieldFamily<F: Scalar> {
    pub times: Vec<F>,
    pub fields: Vec<GridFunction<F>>,
}

impl<F: Scalar> FieldFamily<F> {
    /// Field at the node nearest to t, with the snap distance.
    pub fn nearest(&self, t: F) -> (&GridFunction<F>, F) {
        let mut best = 0;
        let mut dist = (self.times[0] - t).abs();
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                best = i;
                dist = d;
            }
        }
        (&self.fields[best], dist)
    }

    pub fn first(&self) -> &GridFunction<F> {
        &self.fields[0]
    }

    pub fn last(&self) -> &GridFunction<F> {
        self.fields.last().unwrap()
    }
}

/// The discrete evolution operator over a time interval on a fixed grid.
#[derive(Clone)]
pub struct EvolutionOperator<F: Scalar> {
    pub direction: Direction,
    pub eps: F,
    pub t0: F,
    pub t1: F,
    /// Requested step; the actual step divides the interval evenly.
    pub dt: F,
    spec: GridSpec<F>,
    mask: Mask,
    field: VectorField<F>,
    scheme: SchemeConfig<F>,
}

impl<F: Scalar> EvolutionOperator<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        direction: Direction,
        field: VectorField<F>,
        spec: GridSpec<F>,
        mask: Mask,
        eps: F,
        t0: F,
        t1: F,
        dt: F,
        scheme: SchemeConfig<F>,
    ) -> Result<Self> {
        if t1 < t0 {
            return Err(Error::Parameter(format!(
                "operator interval reversed: [{t0}, {t1}]"
            )));
        }
        if dt <= F::zero() {
            return Err(Error::Parameter("dt must be positive".into()));
        }
        if eps < F::zero() {
            return Err(Error::Parameter("eps must be nonnegative".into()));
        }
        Ok(Self {
            direction,
            eps,
            t0,
            t1,
            dt,
            spec,
            mask,
            field,
            scheme,
        })
    }

    pub fn spec(&self) -> &GridSpec<F> {
        &self.spec
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Number of steps and the effective uniform dt.
    pub fn time_grid(&self) -> (usize, F) {
        let span = self.t1 - self.t0;
        if span <= F::zero() {
            return (0, self.dt);
        }
        let n = (span / self.dt).ceil().to_usize().unwrap().max(1);
        (n, span / F::from_usize(n).unwrap())
    }

    /// Node times t0, t0 + dt, ..., t1.
    pub fn node_times(&self) -> Vec<F> {
        let (n, dt) = self.time_grid();
        (0..=n)
            .map(|k| self.t0 + dt * F::from_usize(k).unwrap())
            .collect()
    }

    fn build_step(
        &self,
        t: F,
        dt: F,
        diffusion: &Option<Arc<Diffusion<F>>>,
    ) -> Result<StepOp<F>> {
        let advections = match self.scheme.advection {
            AdvectionScheme::Upwind => {
                vec![assemble_upwind(&self.field, &self.spec, &self.mask, t, dt)?]
            }
            AdvectionScheme::Remap => (0..self.spec.dim())
                .map(|axis| {
                    assemble_remap_axis(
                        &self.field,
                        &self.spec,
                        &self.mask,
                        axis,
                        t,
                        dt,
                        self.scheme.trace_substeps,
                    )
                })
                .collect(),
        };
        Ok(StepOp {
            advections,
            diffusion: diffusion.clone(),
        })
    }

    fn diffusion(&self, dt: F) -> Option<Arc<Diffusion<F>>> {
        if self.eps > F::zero() {
            let kappa = self.eps * self.eps * dt / F::lit(4.0);
            Some(Arc::new(Diffusion::new(
                &self.spec,
                &self.mask,
                kappa,
                &self.scheme,
            )))
        } else {
            None
        }
    }

    fn check_input(&self, g: &GridFunction<F>) -> Result<()> {
        if g.spec() != &self.spec {
            return Err(Error::GridMismatch(
                "input grid does not match the operator grid".into(),
            ));
        }
        Ok(())
    }

    /// Evolve a density from t0 to t1, returning every node.
    pub fn solve_forward(&self, rho: &GridFunction<F>) -> Result<FieldFamily<F>> {
        if self.direction != Direction::Forward {
            return Err(Error::Parameter(
                "solve_forward needs a forward operator".into(),
            ));
        }
        self.check_input(rho)?;
        let (n, dt) = self.time_grid();
        let diffusion = self.diffusion(dt);
        let mut v = rho.values().to_vec();
        let mut scratch = vec![F::zero(); v.len()];
        let mut times = vec![self.t0];
        let mut fields = vec![rho.clone()];
        let cached = self.cached_step(dt, &diffusion)?;
        for k in 0..n {
            let t = self.t0 + dt * F::from_usize(k).unwrap();
            match &cached {
                Some(step) => step.apply(&mut v, &mut scratch)?,
                None => self
                    .build_step(t, dt, &diffusion)?
                    .apply(&mut v, &mut scratch)?,
            }
            times.push(t + dt);
            fields.push(GridFunction::from_values(
                self.spec.clone(),
                self.mask.clone(),
                v.clone(),
            ));
        }
        Ok(FieldFamily { times, fields })
    }

    /// Pull terminal data back from t1 to t0, returning every node
    /// (times ascending, fields[k] = u(., t_k)).
    pub fn solve_backward(&self, zeta: &GridFunction<F>) -> Result<FieldFamily<F>> {
        if self.direction != Direction::Backward {
            return Err(Error::Parameter(
                "solve_backward needs a backward operator".into(),
            ));
        }
        self.check_input(zeta)?;
        let (n, dt) = self.time_grid();
        let diffusion = self.diffusion(dt);
        let mut v = zeta.values().to_vec();
        let mut scratch = vec![F::zero(); v.len()];
        let mut rev_fields = vec![GridFunction::from_values(
            self.spec.clone(),
            self.mask.clone(),
            v.clone(),
        )];
        let cached = self.cached_step(dt, &diffusion)?;
        for k in (0..n).rev() {
            let t = self.t0 + dt * F::from_usize(k).unwrap();
            match &cached {
                Some(step) => step.apply_transpose(&mut v, &mut scratch)?,
                None => self
                    .build_step(t, dt, &diffusion)?
                    .apply_transpose(&mut v, &mut scratch)?,
            }
            rev_fields.push(GridFunction::from_values(
                self.spec.clone(),
                self.mask.clone(),
                v.clone(),
            ));
        }
        rev_fields.reverse();
        Ok(FieldFamily {
            times: self.node_times(),
            fields: rev_fields,
        })
    }

    /// Apply the interval operator to a single grid function without
    /// retaining the intermediate nodes.
    pub fn apply(&self, g: &GridFunction<F>) -> Result<GridFunction<F>> {
        self.check_input(g)?;
        let (n, dt) = self.time_grid();
        let diffusion = self.diffusion(dt);
        let cached = self.cached_step(dt, &diffusion)?;
        let mut v = g.values().to_vec();
        let mut scratch = vec![F::zero(); v.len()];
        match self.direction {
            Direction::Forward => {
                for k in 0..n {
                    let t = self.t0 + dt * F::from_usize(k).unwrap();
                    match &cached {
                        Some(step) => step.apply(&mut v, &mut scratch)?,
                        None => self
                            .build_step(t, dt, &diffusion)?
                            .apply(&mut v, &mut scratch)?,
                    }
                }
            }
            Direction::Backward => {
                for k in (0..n).rev() {
                    let t = self.t0 + dt * F::from_usize(k).unwrap();
                    match &cached {
                        Some(step) => step.apply_transpose(&mut v, &mut scratch)?,
                        None => self
                            .build_step(t, dt, &diffusion)?
                            .apply_transpose(&mut v, &mut scratch)?,
                    }
                }
            }
        }
        Ok(GridFunction::from_values(
            self.spec.clone(),
            self.mask.clone(),
            v,
        ))
    }

    /// Steps are identical for autonomous fields, so build them once.
    fn cached_step(
        &self,
        dt: F,
        diffusion: &Option<Arc<Diffusion<F>>>,
    ) -> Result<Option<StepOp<F>>> {
        if self.field.is_autonomous() {
            Ok(Some(self.build_step(self.t0, dt, diffusion)?))
        } else {
            Ok(None)
        }
    }

    /// Estimate the L2 operator norm by power iteration on AᵀA.
    pub fn norm_estimate(&self, iters: usize, seed: u64) -> Result<F> {
        let rng = PathRng::new(seed, 0);
        let mut g = GridFunction::zeros(self.spec.clone(), self.mask.clone());
        for (i, v) in g.values_mut().iter_mut().enumerate() {
            *v = F::lit(rng.uniform(DrawPurpose::Aux, i as u64, 0) - 0.5);
        }
        let mut g = GridFunction::from_values(
            self.spec.clone(),
            self.mask.clone(),
            g.values().to_vec(),
        );
        let fwd;
        let bwd;
        match self.direction {
            Direction::Forward => {
                fwd = self.clone();
                bwd = Self {
                    direction: Direction::Backward,
                    ..self.clone()
                };
            }
            Direction::Backward => {
                bwd = self.clone();
                fwd = Self {
                    direction: Direction::Forward,
                    ..self.clone()
                };
            }
        }
        let mut norm = F::zero();
        for _ in 0..iters.max(1) {
            let scale = g.norm_l2();
            if scale == F::zero() {
                return Ok(F::zero());
            }
            g.scale(F::one() / scale);
            let a = fwd.apply(&g)?;
            norm = a.norm_l2();
            g = bwd.apply(&a)?;
        }
        Ok(norm)
    }
}

/// Backward value sweep with a running source: v(., t) = ∫ over the tail.
///
/// The discrete construction mirrors the left-rectangle pairing
/// Σ dt (phi_k, p_k): v_N = 0 and v_k = dt·phi_k + Sᵀ_k v_{k+1}, so the
/// duality identity holds to round-off against [`EvolutionOperator::solve_forward`].
#[allow(clippy::too_many_arguments)]
pub fn value_from_source<F: Scalar>(
    field: &VectorField<F>,
    phi: &crate::data::ScalarData<F>,
    spec: &GridSpec<F>,
    mask: &Mask,
    s: F,
    horizon: F,
    eps: F,
    dt: F,
    scheme: &SchemeConfig<F>,
) -> Result<FieldFamily<F>> {
    let op = EvolutionOperator::new(
        Direction::Backward,
        field.clone(),
        spec.clone(),
        mask.clone(),
        eps,
        s,
        horizon,
        dt,
        scheme.clone(),
    )?;
    let (n, dt_eff) = op.time_grid();
    let diffusion = op.diffusion(dt_eff);
    let cached = op.cached_step(dt_eff, &diffusion)?;

    let mut v = vec![F::zero(); spec.len()];
    let mut scratch = vec![F::zero(); spec.len()];
    let mut rev_fields = vec![GridFunction::zeros(spec.clone(), mask.clone())];
    for k in (0..n).rev() {
        let t = s + dt_eff * F::from_usize(k).unwrap();
        match &cached {
            Some(step) => step.apply_transpose(&mut v, &mut scratch)?,
            None => op
                .build_step(t, dt_eff, &diffusion)?
                .apply_transpose(&mut v, &mut scratch)?,
        }
        for lin in 0..spec.len() {
            if mask[lin] {
                let x = spec.center_of_linear(lin);
                v[lin] += dt_eff * phi.eval(&x, t)?;
            }
        }
        rev_fields.push(GridFunction::from_values(
            spec.clone(),
            mask.clone(),
            v.clone(),
        ));
    }
    rev_fields.reverse();
    Ok(FieldFamily {
        times: op.node_times(),
        fields: rev_fields,
    })
}

/// ‖L*_{s,t}ρ − L*_{θ,t}(L*_{s,θ}ρ)‖ / ‖ρ‖ for two forward operators
/// meeting at θ.
pub fn compose_check<F: Scalar>(
    op1: &EvolutionOperator<F>,
    op2: &EvolutionOperator<F>,
    rho: &GridFunction<F>,
) -> Result<F> {
    if op1.direction != Direction::Forward || op2.direction != Direction::Forward {
        return Err(Error::Parameter(
            "compose_check needs forward operators".into(),
        ));
    }
    if (op1.t1 - op2.t0).abs() > F::lit(1e-12) {
        return Err(Error::Parameter(format!(
            "operators do not meet: first ends at {}, second starts at {}",
            op1.t1, op2.t0
        )));
    }
    if op1.eps != op2.eps || op1.spec != op2.spec {
        return Err(Error::Parameter(
            "compose_check needs matching eps and grids".into(),
        ));
    }
    let denom = rho.norm_l2();
    if denom == F::zero() {
        return Ok(F::zero());
    }
    let whole = EvolutionOperator::new(
        Direction::Forward,
        op1.field.clone(),
        op1.spec.clone(),
        op1.mask.clone(),
        op1.eps,
        op1.t0,
        op2.t1,
        op1.dt,
        op1.scheme.clone(),
    )?;
    let direct = whole.apply(rho)?;
    let composed = op2.apply(&op1.apply(rho)?)?;
    Ok(direct.distance_l2(&composed)? / denom)
}
