//! Dense primal-dual interior-point method for a single PSD block.
//!
//! Solves
//!
//! ```text
//!   min ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X ⪰ 0
//!   max bᵀy     s.t.  C - Σ y_i A_i = S ⪰ 0
//! ```
//!
//! with Nesterov-Todd scaling and a Mehrotra predictor-corrector. The
//! equality rows are orthonormalised in the trace inner product first so
//! that linearly dependent constraints (which the rotation families
//! deliberately contain in lifted form) do not make the Schur complement
//! singular.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual of a dependent equality row above which the system is declared
/// inconsistent.
pub const INCONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    /// Relative duality gap `|pobj - dobj| / (1 + |pobj| + |dobj|)`, with the
    /// cost normalised to unit Frobenius norm.
    pub gap_tol: f64,
    /// Relative primal and dual infeasibility.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            feas_tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Multipliers of the orthonormalised equality system.
    pub y: DVector<f64>,
    /// `⟨C, X⟩` in the caller's scale.
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Equality rows kept after removing linear dependence.
    pub independent_rows: usize,
}

struct Equalities {
    a: Vec<DMatrix<f64>>,
    b: DVector<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Modified Gram-Schmidt (two passes) over `vec(A_i)` carrying the
/// right-hand side along.
fn orthonormalise(a: &[DMatrix<f64>], b: &[f64]) -> Result<Equalities> {
    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(a.len());
    let mut rhs: Vec<f64> = Vec::with_capacity(a.len());
    for (ai, bi) in a.iter().zip(b) {
        let norm0 = ai.norm();
        if norm0 == 0.0 {
            if bi.abs() > INCONSISTENCY_TOL {
                return Err(Error::Infeasible(bi.abs()));
            }
            continue;
        }
        let mut w = ai / norm0;
        let mut beta = bi / norm0;
        for _ in 0..2 {
            for (u, bu) in basis.iter().zip(&rhs) {
                let c = w.dot(u);
                w -= u * c;
                beta -= c * bu;
            }
        }
        let wn = w.norm();
        if wn <= 1e-9 {
            if beta.abs() > INCONSISTENCY_TOL {
                return Err(Error::Infeasible(beta.abs()));
            }
            continue;
        }
        basis.push(w / wn);
        rhs.push(beta / wn);
    }
    Ok(Equalities {
        a: basis,
        b: DVector::from_vec(rhs),
    })
}

fn apply_a(eq: &Equalities, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(eq.a.len(), eq.a.iter().map(|ai| ai.dot(x)))
}

fn apply_at(eq: &Equalities, y: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    for (ai, yi) in eq.a.iter().zip(y.iter()) {
        out += ai * *yi;
    }
    out
}

/// Largest `α` with `M + α D ⪰ 0`, given the Cholesky factor of `M`.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, d: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let n = d.nrows();
    let linv_d = l
        .solve_lower_triangular(d)
        .unwrap_or_else(|| DMatrix::zeros(n, n));
    let inner = l
        .solve_lower_triangular(&linv_d.transpose())
        .unwrap_or_else(|| DMatrix::zeros(n, n));
    let lam = SymmetricEigen::new(sym(&inner)).eigenvalues.min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

struct Scaling {
    /// `W = G Gᵀ`, with `W S W = X`.
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    /// Diagonal of the scaled point `V = G⁻¹ X G⁻ᵀ = Gᵀ S G`.
    v: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let n = x.nrows();
    let lx = Cholesky::new(x.clone())?.l();
    let inner = sym(&(lx.transpose() * s * &lx));
    let eig = SymmetricEigen::new(inner);
    if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return None;
    }
    let quarter = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.powf(-0.25)));
    let g = &lx * &eig.eigenvectors * DMatrix::from_diagonal(&quarter);
    let quarter_inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.powf(0.25)));
    let lx_inv = lx.clone().try_inverse()?;
    let g_inv = DMatrix::from_diagonal(&quarter_inv) * eig.eigenvectors.transpose() * lx_inv;
    let w = &g * g.transpose();
    let v = eig.eigenvalues.map(|l| l.sqrt());
    Some(Scaling { w, g, g_inv, v })
}

struct Direction {
    dx: DMatrix<f64>,
    dy: DVector<f64>,
    ds: DMatrix<f64>,
}

/// Solves `A dX = rp`, `Aᵀ dy + dS = rd`, `dX + W dS W = rc`.
fn direction(
    eq: &Equalities,
    schur: &Cholesky<f64, nalgebra::Dyn>,
    w: &DMatrix<f64>,
    rp: &DVector<f64>,
    rd: &DMatrix<f64>,
    rc: &DMatrix<f64>,
) -> Direction {
    let n = w.nrows();
    let wrdw = w * rd * w;
    let rhs = rp - apply_a(eq, rc) + apply_a(eq, &wrdw);
    let dy = schur.solve(&rhs);
    let ds = sym(&(rd - apply_at(eq, &dy, n)));
    let dx = sym(&(rc - w * &ds * w));
    Direction { dx, dy, ds }
}

pub fn solve(
    c: &DMatrix<f64>,
    a: &[DMatrix<f64>],
    b: &[f64],
    opts: &IpmOptions,
) -> Result<IpmSolution> {
    let n = c.nrows();
    if c.ncols() != n || a.iter().any(|ai| ai.shape() != (n, n)) || a.len() != b.len() {
        return Err(Error::InvalidInput("inconsistent SDP dimensions".into()));
    }
    let eq = orthonormalise(a, b)?;
    let m = eq.a.len();

    let c_norm = c.norm();
    let c_scale = if c_norm > 0.0 { c_norm } else { 1.0 };
    let c = sym(c) / c_scale;
    let b_norm = eq.b.norm();

    let nf = n as f64;
    let xi =
        eq.b.iter()
            .map(|bi| nf.sqrt() * (1.0 + bi.abs()) / 2.0)
            .fold(10f64.max(nf.sqrt()), f64::max);
    let eta = 10f64.max(nf.sqrt()).max(c.norm());
    let mut x = DMatrix::identity(n, n) * xi;
    let mut s = DMatrix::identity(n, n) * eta;
    let mut y = DVector::zeros(m);

    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let (mut rel_gap, mut pinf, mut dinf);
    loop {
        let rp = &eq.b - apply_a(&eq, &x);
        let rd = sym(&(&c - apply_at(&eq, &y, n) - &s));
        let pobj = c.dot(&x);
        let dobj = eq.b.dot(&y);
        rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        pinf = rp.norm() / (1.0 + b_norm);
        dinf = rd.norm() / (1.0 + c.norm());
        let mu = x.dot(&s) / nf;
        log::trace!("ipm {iterations}: pobj {pobj:e} dobj {dobj:e} gap {rel_gap:e} pinf {pinf:e} dinf {dinf:e} mu {mu:e}");

        if rel_gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        let Some(sc) = nt_scaling(&x, &s) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let wa: Vec<DMatrix<f64>> = eq.a.iter().map(|ai| &sc.w * ai * &sc.w).collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = eq.a[i].dot(&wa[j]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        let schur = match Cholesky::new(schur.clone()) {
            Some(ch) => ch,
            None => {
                let reg = 1e-14 * schur.diagonal().amax().max(1e-300);
                let mut shifted = schur;
                for i in 0..m {
                    shifted[(i, i)] += reg;
                }
                match Cholesky::new(shifted) {
                    Some(ch) => ch,
                    None => {
                        status = SolveStatus::NumericalTrouble;
                        break;
                    }
                }
            }
        };
        let (Some(chol_x), Some(chol_s)) = (Cholesky::new(x.clone()), Cholesky::new(s.clone()))
        else {
            status = SolveStatus::NumericalTrouble;
            break;
        };

        // Predictor.
        let rc_aff = -&x;
        let aff = direction(&eq, &schur, &sc.w, &rp, &rd, &rc_aff);
        let ap = max_step(&chol_x, &aff.dx).min(1.0);
        let ad = max_step(&chol_s, &aff.ds).min(1.0);
        let mu_aff = (&x + &aff.dx * ap).dot(&(&s + &aff.ds * ad)) / nf;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector in the scaled space where X and S are both diag(v).
        let dxt = &sc.g_inv * &aff.dx * sc.g_inv.transpose();
        let dst = sc.g.transpose() * &aff.ds * &sc.g;
        let cross = &dxt * &dst;
        let mut h = -(&cross + cross.transpose());
        for i in 0..n {
            h[(i, i)] += 2.0 * sigma * mu - 2.0 * sc.v[i] * sc.v[i];
        }
        let rct = DMatrix::from_fn(n, n, |i, j| h[(i, j)] / (sc.v[i] + sc.v[j]));
        let rc = sym(&(&sc.g * rct * sc.g.transpose()));
        let dir = direction(&eq, &schur, &sc.w, &rp, &rd, &rc);

        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * max_step(&chol_x, &dir.dx)).min(1.0);
        let ad = (gamma * max_step(&chol_s, &dir.ds)).min(1.0);
        x = sym(&(&x + &dir.dx * ap));
        y += &dir.dy * ad;
        s = sym(&(&s + &dir.ds * ad));
        iterations += 1;

        if !x.iter().chain(s.iter()).all(|v| v.is_finite()) {
            status = SolveStatus::NumericalTrouble;
            break;
        }
    }

    Ok(IpmSolution {
        primal_objective: c.dot(&x) * c_scale,
        dual_objective: eq.b.dot(&y) * c_scale,
        x,
        s: s * c_scale,
        y: y * c_scale,
        rel_gap,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        iterations,
        status,
        independent_rows: m,
    })
}
