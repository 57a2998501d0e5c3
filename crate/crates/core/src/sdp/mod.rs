//! Rank-relaxed semidefinite program over the lifted variable
//! `X = [Ψ; -1][Ψ; -1]ᵀ` and extraction of a rank-one estimate.

mod polish;
pub mod solver;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};

use crate::constraints::QuadraticConstraint;
use crate::error::{Error, Result};
use crate::linear_system::{LinearSystem, MeasurementEpoch};

pub use solver::{IpmOptions, SolveStatus};

/// `σ₁` and `σ₂` closer than this (relative) make the rank-one factor
/// ill-defined.
pub const DEGENERATE_TOP: f64 = 1e-6;

/// Rank ratio above which the interior-point solution is returned as is.
pub const POLISH_MAX_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub ipm: IpmOptions,
    /// Refine a near rank-one solution by Newton steps on its optimality
    /// conditions.
    pub polish: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            ipm: IpmOptions::default(),
            polish: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftedProblem {
    /// `[A b]ᵀ [A b]`.
    pub p: DMatrix<f64>,
    pub constraints: Vec<QuadraticConstraint>,
    /// Index of the homogenising entry, fixed to one.
    pub anchor: usize,
}

impl LiftedProblem {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `‖AΨ - b‖²` evaluated through the lifted cost.
    pub fn cost_at(&self, psi: &[f64]) -> f64 {
        self.p.dot(&crate::constraints::lifted_outer(psi))
    }
}

pub fn lift(sys: &LinearSystem, constraints: Vec<QuadraticConstraint>) -> LiftedProblem {
    let n = sys.unknowns();
    let mut ab = DMatrix::zeros(sys.a.nrows(), n + 1);
    ab.columns_mut(0, n).copy_from(&sys.a);
    ab.set_column(n, &sys.b);
    let p = ab.transpose() * &ab;
    LiftedProblem {
        p: (&p + p.transpose()) * 0.5,
        constraints,
        anchor: n,
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DMatrix<f64>,
    /// `⟨P, X⟩`.
    pub objective: f64,
    pub dual_objective: f64,
    /// `|⟨Q_i, X⟩|` per original constraint.
    pub feasibility_residuals: Vec<f64>,
    /// `|X[anchor, anchor] - 1|`.
    pub anchor_residual: f64,
    /// Ratio of the two largest singular values of `X`.
    pub rank_ratio: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub anchor: usize,
    /// `x` was replaced by a refined rank-one point.
    pub polished: bool,
}

impl SdpSolution {
    pub fn max_feasibility_residual(&self) -> f64 {
        self.feasibility_residuals
            .iter()
            .copied()
            .fold(self.anchor_residual, f64::max)
    }
}

fn top_eigen(x: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(x.clone());
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let vals = idx.iter().map(|i| eig.eigenvalues[*i]).collect();
    let vecs = idx
        .iter()
        .map(|i| eig.eigenvectors.column(*i).into_owned())
        .collect();
    (vals, vecs)
}

pub fn rank_ratio(x: &DMatrix<f64>) -> f64 {
    let sv = x.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.len() < 2 || s[0] <= 0.0 {
        return 0.0;
    }
    s[1] / s[0]
}

pub fn solve_relaxed(problem: &LiftedProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let dim = problem.dim();
    if problem.anchor != dim - 1 {
        return Err(Error::InvalidInput(format!(
            "anchor {} is not the last of {dim} entries",
            problem.anchor
        )));
    }
    let mut a: Vec<DMatrix<f64>> = problem.constraints.iter().map(|c| c.q.clone()).collect();
    let mut b = vec![0.0; a.len()];
    let mut anchor = DMatrix::zeros(dim, dim);
    anchor[(problem.anchor, problem.anchor)] = 1.0;
    a.push(anchor);
    b.push(1.0);

    let raw = solver::solve(&problem.p, &a, &b, &opts.ipm)?;
    let mut sol = SdpSolution {
        rank_ratio: rank_ratio(&raw.x),
        objective: raw.primal_objective,
        dual_objective: raw.dual_objective,
        feasibility_residuals: problem
            .constraints
            .iter()
            .map(|c| c.inner(&raw.x).abs())
            .collect(),
        anchor_residual: (raw.x[(problem.anchor, problem.anchor)] - 1.0).abs(),
        iterations: raw.iterations,
        status: raw.status,
        anchor: problem.anchor,
        x: raw.x,
        polished: false,
    };
    // A dual objective above the primal one means the iterates stopped short
    // of a valid certificate, so it cannot vouch for a polished point.
    let certified = sol.dual_objective <= sol.objective + 1e-9 * (1.0 + sol.objective.abs());
    if opts.polish
        && certified
        && sol.status != SolveStatus::NumericalTrouble
        && sol.rank_ratio < POLISH_MAX_RATIO
    {
        try_polish(problem, &mut sol);
    }
    Ok(sol)
}

fn try_polish(problem: &LiftedProblem, sol: &mut SdpSolution) {
    let Some(start) = read_factor(&top_eigen(&sol.x).1[0], sol.anchor) else {
        return;
    };
    let Some(refined) = polish::polish(&problem.p, &problem.constraints, &start) else {
        return;
    };
    let size = refined.psi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let moved = refined
        .psi
        .iter()
        .zip(&start)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let cost = problem.cost_at(&refined.psi);
    // Weak duality: the dual objective bounds the optimum from below, so a
    // feasible point whose gap is no wider than the interior-point one is at
    // least as good.
    let allowed_gap =
        (sol.objective - sol.dual_objective).max(0.0) + 1e-9 * (1.0 + sol.objective.abs());
    let feasible = refined.constraint_residual <= 1e-10 * size;
    let better = cost - sol.dual_objective <= allowed_gap;
    log::debug!(
        "polish: {} steps, residual {:.1e}, moved {:.1e}, cost {:.6e} vs {:.6e}",
        refined.steps,
        refined.constraint_residual,
        moved,
        cost,
        sol.objective
    );
    if !(feasible && better) {
        return;
    }
    let x = crate::constraints::lifted_outer(&refined.psi);
    sol.feasibility_residuals = problem
        .constraints
        .iter()
        .map(|c| c.inner(&x).abs())
        .collect();
    sol.anchor_residual = 0.0;
    sol.rank_ratio = rank_ratio(&x);
    sol.objective = cost;
    sol.x = x;
    sol.polished = true;
}

#[derive(Debug, Clone)]
pub struct Extraction {
    /// Unknowns read off the rank-one factor scaled so its anchor entry is -1.
    pub psi: Vec<f64>,
    pub rank_ratio: f64,
    /// `σ₁ ≈ σ₂`: `alternative` holds the extraction from the second factor.
    pub degenerate_top: bool,
    pub alternative: Option<Vec<f64>>,
}

fn read_factor(v: &DVector<f64>, anchor: usize) -> Option<Vec<f64>> {
    let a = v[anchor];
    if a.abs() < 1e-12 * v.amax().max(1e-300) {
        return None;
    }
    Some(
        v.iter()
            .enumerate()
            .filter(|(i, _)| *i != anchor)
            .map(|(_, vi)| -vi / a)
            .collect(),
    )
}

/// Best rank-one approximation of `X` read back as an unknown vector.
pub fn extract_psi(sol: &SdpSolution) -> Result<Extraction> {
    if sol.status == SolveStatus::NumericalTrouble {
        return Err(Error::Solver("cannot extract from a failed solve".into()));
    }
    let (vals, vecs) = top_eigen(&sol.x);
    let psi = read_factor(&vecs[0], sol.anchor)
        .ok_or_else(|| Error::Solver("leading factor has no anchor component".into()))?;
    let degenerate_top =
        vals.len() > 1 && (vals[0] - vals[1]).abs() <= DEGENERATE_TOP * vals[0].abs();
    let alternative = if degenerate_top {
        log::warn!("extract_psi: leading singular values coincide");
        read_factor(&vecs[1], sol.anchor)
    } else {
        None
    };
    Ok(Extraction {
        psi,
        rank_ratio: sol.rank_ratio,
        degenerate_top,
        alternative,
    })
}

/// Subtracts a prior translation guess from every receiver position. The
/// translation recovered afterwards estimates `t - t_guess`.
pub fn apply_shift(epochs: &[MeasurementEpoch], t_guess: &Vector3<f64>) -> Vec<MeasurementEpoch> {
    epochs
        .iter()
        .map(|e| MeasurementEpoch {
            p_b_local: e.p_b_local - t_guess,
            ..*e
        })
        .collect()
}

/// Multiplies the translation columns of the two-agent system by `s`; the
/// recovered translation entries must be multiplied by `s` afterwards.
pub fn apply_translation_scaling(sys: &LinearSystem, s: f64) -> Result<LinearSystem> {
    scale_columns(sys, &[9, 10, 11], s)
}

pub fn scale_columns(sys: &LinearSystem, cols: &[usize], s: f64) -> Result<LinearSystem> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::NonPositiveScale(s));
    }
    let mut out = sys.clone();
    for &c in cols {
        out.a.column_mut(c).scale_mut(s);
    }
    Ok(out)
}
