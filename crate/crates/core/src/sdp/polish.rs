//! Newton refinement of a near rank-one SDP solution.
//!
//! When the relaxation is tight the optimum is `X = x xᵀ` with
//! `x = [Ψ; -1]`, and `(x, λ, y₀)` solves
//!
//! ```text
//!   (P - Σ λ_i Q_i - y₀ E) x = 0,    xᵀ Q_i x = 0.
//! ```
//!
//! Interior-point iterates stall near such a point because the scaling
//! matrices become ill-conditioned; a few Gauss-Newton steps on the system
//! above recover the remaining digits. The refined point is only accepted
//! when it is feasible and its cost does not exceed the interior-point
//! primal objective, so it is at least as good a solution of the SDP.

use nalgebra::{DMatrix, DVector};

use crate::constraints::QuadraticConstraint;

const MAX_STEPS: usize = 30;

#[derive(Debug, Clone)]
pub struct Polished {
    pub psi: Vec<f64>,
    pub constraint_residual: f64,
    pub steps: usize,
}

/// Minimum-norm least squares on the column-equilibrated matrix.
fn lstsq(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let scale: Vec<f64> = j
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    let mut js = j.clone();
    for (mut c, s) in js.column_iter_mut().zip(&scale) {
        c.scale_mut(*s);
    }
    let svd = js.svd(true, true);
    let smax = svd.singular_values.max();
    let mut z = svd.solve(r, 1e-13 * smax).ok()?;
    for (zi, s) in z.iter_mut().zip(&scale) {
        *zi *= s;
    }
    Some(z)
}

/// Multipliers `(λ, y₀)` minimising `‖(P - Σ λ_i Q_i - y₀ E) x‖`.
fn fit_multipliers(
    p: &DMatrix<f64>,
    qx: &[DVector<f64>],
    x: &DVector<f64>,
) -> Option<DVector<f64>> {
    let dim = x.len();
    let m = qx.len();
    let mut j = DMatrix::zeros(dim, m + 1);
    for (i, v) in qx.iter().enumerate() {
        j.set_column(i, v);
    }
    j[(dim - 1, m)] = x[dim - 1];
    lstsq(&j, &(p * x))
}

pub fn polish(
    p: &DMatrix<f64>,
    constraints: &[QuadraticConstraint],
    psi0: &[f64],
) -> Option<Polished> {
    let n = psi0.len();
    let dim = n + 1;
    let m = constraints.len();
    let mut x = DVector::zeros(dim);
    x.rows_mut(0, n).copy_from_slice(psi0);
    x[n] = -1.0;

    let qx =
        |x: &DVector<f64>| -> Vec<DVector<f64>> { constraints.iter().map(|c| &c.q * x).collect() };
    let mut mult = fit_multipliers(p, &qx(&x), &x)?;
    let p_scale = p.norm().max(1.0);

    let mut steps = 0;
    let mut prev_step = f64::INFINITY;
    for _ in 0..MAX_STEPS {
        let qxs = qx(&x);
        let mut s = p.clone();
        for (c, l) in constraints.iter().zip(mult.iter()) {
            s -= &c.q * *l;
        }
        s[(n, n)] -= mult[m];

        // Residual: stationarity rows scaled by ‖P‖, then constraints.
        let mut f = DVector::zeros(dim + m);
        f.rows_mut(0, dim).copy_from(&((&s * &x) / p_scale));
        for (i, v) in qxs.iter().enumerate() {
            f[dim + i] = x.dot(v);
        }

        let mut jac = DMatrix::zeros(dim + m, n + m + 1);
        jac.view_mut((0, 0), (dim, n))
            .copy_from(&(s.columns(0, n) / p_scale));
        for (i, v) in qxs.iter().enumerate() {
            jac.view_mut((0, n + i), (dim, 1))
                .copy_from(&(-v / p_scale));
            for k in 0..n {
                jac[(dim + i, k)] = 2.0 * v[k];
            }
        }
        jac[(n, n + m)] = -x[n] / p_scale;

        let delta = lstsq(&jac, &(-&f))?;
        for k in 0..n {
            x[k] += delta[k];
        }
        for i in 0..=m {
            mult[i] += delta[n + i];
        }
        steps += 1;
        let step = delta.rows(0, n).amax();
        if !step.is_finite() {
            return None;
        }
        // Stop at round-off level or once steps no longer shrink.
        if step <= 1e-13 * (1.0 + x.rows(0, n).amax())
            || (step >= prev_step && step <= 1e-8 * (1.0 + x.rows(0, n).amax()))
        {
            break;
        }
        prev_step = step;
    }

    let constraint_residual = qx(&x).iter().map(|v| x.dot(v).abs()).fold(0.0, f64::max);
    Some(Polished {
        psi: x.rows(0, n).iter().copied().collect(),
        constraint_residual,
        steps,
    })
}
