//! Fundamental matrix of the linearized flow along a trajectory.
//!
//! Integrates dPhi/dt = (df/dx)(y(t), t) Phi with Phi(s, s) = I using
//! classic RK4 on the trajectory's dense output, carrying the time integral
//! of div f alongside so the Liouville identity det Phi = exp ∫ div f can
//! be checked at every node.

use crate::error::Result;
use crate::field::VectorField;
use crate::flow::Trajectory;
use crate::scalar::Scalar;

/// Phi(t, s) sampled along a trajectory, row-major n x n per node.
#[derive(Clone, Debug)]
pub struct VariationalMatrix<F: Scalar> {
    dim: usize,
    times: Vec<F>,
    mats: Vec<Vec<F>>,
    div_integrals: Vec<F>,
}

impl<F: Scalar> VariationalMatrix<F> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[F] {
        &self.times
    }

    /// Matrix at the node nearest to t.
    pub fn at_time(&self, t: F) -> &[F] {
        let mut best = 0;
        let mut dist = (self.times[0] - t).abs();
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                best = i;
                dist = d;
            }
        }
        &self.mats[best]
    }

    pub fn end(&self) -> &[F] {
        self.mats.last().unwrap()
    }

    /// det Phi at node i, by Gaussian elimination with partial pivoting.
    pub fn det_at(&self, i: usize) -> F {
        det(&self.mats[i], self.dim)
    }

    /// Largest relative violation of det Phi(t) = exp ∫ div f over nodes.
    pub fn liouville_residual(&self) -> F {
        let mut worst = F::zero();
        for i in 0..self.times.len() {
            let lhs = self.det_at(i);
            let rhs = self.div_integrals[i].exp();
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(F::one()));
        }
        worst
    }
}

fn det<F: Scalar>(mat: &[F], n: usize) -> F {
    let mut a = mat.to_vec();
    let mut d = F::one();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col] == F::zero() {
            return F::zero();
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            d = -d;
        }
        d *= a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                let sub = f * a[col * n + c];
                a[r * n + c] -= sub;
            }
        }
    }
    d
}

/// State for the matrix ODE: the flattened matrix plus the div-f integral.
struct MatrixOde<'a, F: Scalar> {
    field: &'a VectorField<F>,
    traj: &'a Trajectory<F>,
    dim: usize,
    y_buf: Vec<F>,
    jac_buf: Vec<F>,
}

impl<F: Scalar> MatrixOde<'_, F> {
    /// rhs = (J(y(t), t) * Phi, div f(y(t), t)).
    fn rhs(&mut self, t: F, state: &[F], out: &mut [F]) {
        let n = self.dim;
        self.traj.eval_into(t, &mut self.y_buf);
        self.field.jacobian_into(&self.y_buf, t, &mut self.jac_buf);
        for i in 0..n {
            for j in 0..n {
                let mut acc = F::zero();
                for k in 0..n {
                    acc += self.jac_buf[i * n + k] * state[k * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        let mut tr = F::zero();
        for i in 0..n {
            tr += self.jac_buf[i * n + i];
        }
        out[n * n] = tr;
    }
}

/// Integrate the variational equation along a trajectory.
///
/// `substeps` RK4 sub-steps are taken inside each accepted flow step.
pub fn variational_matrix<F: Scalar>(
    field: &VectorField<F>,
    traj: &Trajectory<F>,
    substeps: usize,
) -> Result<VariationalMatrix<F>> {
    let n = traj.dim();
    let m = substeps.max(1);
    let mut ode = MatrixOde {
        field,
        traj,
        dim: n,
        y_buf: vec![F::zero(); n],
        jac_buf: vec![F::zero(); n * n],
    };

    let len = n * n + 1;
    let mut state = vec![F::zero(); len];
    for i in 0..n {
        state[i * n + i] = F::one();
    }

    let mut times = vec![traj.start_time()];
    let mut mats = vec![state[..n * n].to_vec()];
    let mut div_integrals = vec![F::zero()];

    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![F::zero(); len],
        vec![F::zero(); len],
        vec![F::zero(); len],
        vec![F::zero(); len],
    );
    let mut tmp = vec![F::zero(); len];
    let half = F::lit(0.5);
    let sixth = F::lit(1.0 / 6.0);
    let two = F::lit(2.0);

    let nodes = traj.nodes();
    for w in nodes.windows(2) {
        let dt = (w[1] - w[0]) / F::from_usize(m).unwrap();
        for j in 0..m {
            let t = w[0] + dt * F::from_usize(j).unwrap();
            ode.rhs(t, &state, &mut k1);
            for i in 0..len {
                tmp[i] = state[i] + half * dt * k1[i];
            }
            ode.rhs(t + half * dt, &tmp, &mut k2);
            for i in 0..len {
                tmp[i] = state[i] + half * dt * k2[i];
            }
            ode.rhs(t + half * dt, &tmp, &mut k3);
            for i in 0..len {
                tmp[i] = state[i] + dt * k3[i];
            }
            ode.rhs(t + dt, &tmp, &mut k4);
            for i in 0..len {
                state[i] += dt * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
            }
        }
        times.push(w[1]);
        mats.push(state[..n * n].to_vec());
        div_integrals.push(state[n * n]);
    }

    Ok(VariationalMatrix {
        dim: n,
        times,
        mats,
        div_integrals,
    })
}
