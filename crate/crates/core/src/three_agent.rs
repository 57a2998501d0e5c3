//! Joint estimation for one GPS-equipped broadcaster A and two GPS-denied
//! agents B and C that also observe each other.
//!
//! Unknown vector (36 entries):
//! `[R_{A1}^{B2}, t_{A1}^{B2}, R_{A1}^{C2}, t_{A1}^{C2}, R_{C2}^{B2}, t_{C2}^{B2}]`
//! with rotations stored row-major.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    add_matmul_entry, rotation_constraints_at, ConstraintFamily, Polynomial, QuadraticConstraint,
    SymMat,
};
use crate::error::{Error, Result};
use crate::geometry::{doa_to_unit_vector, Agent, DoaMeasurement, FrameId, Pose, Rotation};
use crate::linear_system::{collinearity_rows, LinearSystem, RowPair, POSE_UNKNOWNS};
use crate::mle::{refine, MleOptions, NoiseModel, Observation};
use crate::pipeline::{ins_epoch, SdpDiagnostics, AMBIGUOUS_RATIO};
use crate::procrustes::closest_rotation;
use crate::scenario::Scenario;
use crate::sdp::{extract_psi, lift, solve_relaxed, SdpOptions, SolveStatus};

pub const TRI_UNKNOWNS: usize = 36;
const R1: usize = 0;
const T1: usize = 9;
const R2: usize = 12;
const T2: usize = 21;
const R3: usize = 24;
const T3: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriMeasurementEpoch {
    pub k: usize,
    pub p_a_global: Vector3<f64>,
    /// B in its INS frame.
    pub p_b_local: Vector3<f64>,
    /// C in its INS frame.
    pub p_c_local: Vector3<f64>,
    /// B toward A, B's INS axes.
    pub doa_b_to_a: DoaMeasurement,
    /// C toward A, C's INS axes.
    pub doa_c_to_a: DoaMeasurement,
    /// B toward C, B's INS axes.
    pub doa_b_to_c: DoaMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriPsi(pub [f64; TRI_UNKNOWNS]);

impl TriPsi {
    pub fn pack(
        b: (&Matrix3<f64>, &Vector3<f64>),
        c: (&Matrix3<f64>, &Vector3<f64>),
        cb: (&Matrix3<f64>, &Vector3<f64>),
    ) -> Self {
        let mut v = [0.0; TRI_UNKNOWNS];
        for (off, (r, t)) in [(R1, b), (R2, c), (R3, cb)] {
            for i in 0..3 {
                for j in 0..3 {
                    v[off + 3 * i + j] = r[(i, j)];
                }
                v[off + 9 + i] = t[i];
            }
        }
        Self(v)
    }

    /// Consistent unknowns for the true drift poses of B and C.
    pub fn from_poses(b: &Pose, c: &Pose) -> Self {
        let r3 = b.rotation.matrix() * c.rotation.matrix().transpose();
        let t3 = b.translation - r3 * c.translation;
        Self::pack(
            (b.rotation.matrix(), &b.translation),
            (c.rotation.matrix(), &c.translation),
            (&r3, &t3),
        )
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = [0.0; TRI_UNKNOWNS];
        v.copy_from_slice(values);
        Self(v)
    }

    fn block(&self, off: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let r = Matrix3::from_row_slice(&self.0[off..off + 9]);
        let t = Vector3::new(self.0[off + 9], self.0[off + 10], self.0[off + 11]);
        (r, t)
    }

    /// `(R_{A1}^{B2}, t_{A1}^{B2})`.
    pub fn b(&self) -> (Matrix3<f64>, Vector3<f64>) {
        self.block(R1)
    }

    /// `(R_{A1}^{C2}, t_{A1}^{C2})`.
    pub fn c(&self) -> (Matrix3<f64>, Vector3<f64>) {
        self.block(R2)
    }

    /// `(R_{C2}^{B2}, t_{C2}^{B2})`.
    pub fn cb(&self) -> (Matrix3<f64>, Vector3<f64>) {
        self.block(R3)
    }
}

/// Stacks the A-B, A-C and B-C collinearity rows: `6K × 36`.
pub fn assemble_tri(epochs: &[TriMeasurementEpoch]) -> Result<LinearSystem> {
    if epochs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = 6 * epochs.len();
    let mut a = DMatrix::zeros(rows, TRI_UNKNOWNS);
    let mut b = DVector::zeros(rows);
    for (e_idx, e) in epochs.iter().enumerate() {
        let pairs: [(RowPair, usize); 3] = [
            (
                collinearity_rows(
                    &doa_to_unit_vector(&e.doa_b_to_a),
                    &e.p_a_global,
                    &e.p_b_local,
                ),
                R1,
            ),
            (
                collinearity_rows(
                    &doa_to_unit_vector(&e.doa_c_to_a),
                    &e.p_a_global,
                    &e.p_c_local,
                ),
                R2,
            ),
            (
                collinearity_rows(
                    &doa_to_unit_vector(&e.doa_b_to_c),
                    &e.p_c_local,
                    &e.p_b_local,
                ),
                R3,
            ),
        ];
        for (p_idx, (pair, off)) in pairs.iter().enumerate() {
            for r in 0..2 {
                let row = 6 * e_idx + 2 * p_idx + r;
                for c in 0..POSE_UNKNOWNS {
                    a[(row, off + c)] = pair.rows[r][c];
                }
                b[row] = pair.rhs[r];
            }
        }
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite measurement".into()));
    }
    Ok(LinearSystem {
        a,
        b,
        k: epochs.len(),
    })
}

/// `coeff * (M v)_i` with `v` the 3-vector of unknowns at `v_off`.
fn add_matvec_entry(poly: &mut Polynomial, m: SymMat, v_off: usize, i: usize, coeff: f64) {
    for k in 0..3 {
        poly.add_product(m.idx(i, k), v_off + k, coeff);
    }
}

/// 63 rotation constraints, 27 composition constraints and 9 translation
/// compatibility constraints over the 37×37 lifted variable.
pub fn tri_constraints() -> Vec<QuadraticConstraint> {
    let n = TRI_UNKNOWNS;
    let mut out = Vec::with_capacity(99);
    for (off, name) in [(R1, "B:"), (R2, "C:"), (R3, "CB:")] {
        out.extend(rotation_constraints_at(off, n, name));
    }
    let (m1, m2, m3) = (SymMat::at(R1), SymMat::at(R2), SymMat::at(R3));

    // Composition R1 = R3 R2 in three arrangements.
    for i in 0..3 {
        for j in 0..3 {
            let mut p = Polynomial::default();
            p.add_linear(m2.idx(i, j), 1.0);
            add_matmul_entry(&mut p, m3.t(), m1, i, j, -1.0);
            out.push(QuadraticConstraint::new(
                p,
                n,
                format!("comp-C2[{i}{j}]"),
                ConstraintFamily::Composition,
            ));
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let mut p = Polynomial::default();
            p.add_linear(m1.idx(i, j), 1.0);
            add_matmul_entry(&mut p, m3, m2, i, j, -1.0);
            out.push(QuadraticConstraint::new(
                p,
                n,
                format!("comp-B2[{i}{j}]"),
                ConstraintFamily::Composition,
            ));
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let mut p = Polynomial::default();
            p.add_linear(m3.t().idx(i, j), 1.0);
            add_matmul_entry(&mut p, m2, m1.t(), i, j, -1.0);
            out.push(QuadraticConstraint::new(
                p,
                n,
                format!("comp-A1[{i}{j}]"),
                ConstraintFamily::Composition,
            ));
        }
    }

    // Translation compatibility t1 = R3 t2 + t3 in three arrangements.
    for i in 0..3 {
        let mut p = Polynomial::default();
        p.add_linear(T2 + i, 1.0);
        add_matvec_entry(&mut p, m3.t(), T1, i, -1.0);
        add_matvec_entry(&mut p, m3.t(), T3, i, 1.0);
        out.push(QuadraticConstraint::new(
            p,
            n,
            format!("trans-C2[{i}]"),
            ConstraintFamily::TranslationCompat,
        ));
    }
    for i in 0..3 {
        let mut p = Polynomial::default();
        p.add_linear(T1 + i, 1.0);
        add_matvec_entry(&mut p, m3, T2, i, -1.0);
        p.add_linear(T3 + i, -1.0);
        out.push(QuadraticConstraint::new(
            p,
            n,
            format!("trans-B2[{i}]"),
            ConstraintFamily::TranslationCompat,
        ));
    }
    for i in 0..3 {
        let mut p = Polynomial::default();
        add_matvec_entry(&mut p, m2.t(), T2, i, 1.0);
        add_matvec_entry(&mut p, m1.t(), T1, i, -1.0);
        add_matvec_entry(&mut p, m1.t(), T3, i, 1.0);
        out.push(QuadraticConstraint::new(
            p,
            n,
            format!("trans-A1[{i}]"),
            ConstraintFamily::TranslationCompat,
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TriOptions {
    pub sdp: SdpOptions,
    /// Length unit for the relaxation; `None` uses the RMS position norm.
    pub length_scale: Option<f64>,
    /// Optional alternating ML refinement (extension; off by default).
    pub mle: Option<(NoiseModel, MleOptions)>,
}

/// Largest entry of `R̄1 - R̄3 R̄2` and of `t̄1 - R̄3 t̄2 - t̄3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub composition: f64,
    pub translation: f64,
}

pub fn consistency(
    b: (&Matrix3<f64>, &Vector3<f64>),
    c: (&Matrix3<f64>, &Vector3<f64>),
    cb: (&Matrix3<f64>, &Vector3<f64>),
) -> Consistency {
    Consistency {
        composition: (b.0 - cb.0 * c.0).amax(),
        translation: (b.1 - cb.0 * c.1 - cb.1).amax(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriReport {
    pub rotation_b: Matrix3<f64>,
    pub translation_b: Vector3<f64>,
    pub rotation_c: Matrix3<f64>,
    pub translation_c: Vector3<f64>,
    pub rotation_cb: Matrix3<f64>,
    pub translation_cb: Vector3<f64>,
    /// Scalar DOA readings used (two per DOA).
    pub scalar_measurements: usize,
    pub consistency: Consistency,
    pub ambiguous: bool,
    pub sdp: SdpDiagnostics,
    pub refined: bool,
    pub warnings: Vec<String>,
}

impl TriReport {
    pub fn pose_b(&self) -> Pose {
        Pose::new(
            Rotation::new_unchecked(self.rotation_b),
            self.translation_b,
            FrameId::global(),
            FrameId::ins(Agent::B),
        )
    }

    pub fn pose_c(&self) -> Pose {
        Pose::new(
            Rotation::new_unchecked(self.rotation_c),
            self.translation_c,
            FrameId::global(),
            FrameId::ins(Agent::C),
        )
    }
}

/// Body-frame readings for the optional refinement.
#[derive(Debug, Clone, Default)]
pub struct TriObservations {
    /// B toward A.
    pub b_to_a: Vec<Observation>,
    /// C toward A.
    pub c_to_a: Vec<Observation>,
    /// B toward C; `target_global` is ignored and replaced by C's position
    /// reconstructed from the current C estimate.
    pub b_to_c: Vec<Observation>,
    /// C in its INS frame, per reading in `b_to_c`.
    pub c_local: Vec<Vector3<f64>>,
}

/// RMS norm of every position in the epochs.
pub fn rms_position(epochs: &[TriMeasurementEpoch]) -> f64 {
    let sum: f64 = epochs
        .iter()
        .map(|e| {
            e.p_a_global.norm_squared() + e.p_b_local.norm_squared() + e.p_c_local.norm_squared()
        })
        .sum();
    (sum / (3 * epochs.len().max(1)) as f64).sqrt()
}

pub fn solve_tri(
    epochs: &[TriMeasurementEpoch],
    opts: &TriOptions,
    obs: Option<&TriObservations>,
) -> Result<TriReport> {
    let scale = opts
        .length_scale
        .unwrap_or_else(|| rms_position(epochs).max(1.0));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    let scaled: Vec<TriMeasurementEpoch> = epochs
        .iter()
        .map(|e| TriMeasurementEpoch {
            p_a_global: e.p_a_global / scale,
            p_b_local: e.p_b_local / scale,
            p_c_local: e.p_c_local / scale,
            ..*e
        })
        .collect();
    let sys = assemble_tri(&scaled)?;
    let mut warnings = Vec::new();
    if epochs.len() < 3 {
        warnings.push(format!(
            "{} epochs; at least 3 are needed for a unique solution",
            epochs.len()
        ));
    }
    let constraints = tri_constraints();
    let n_constraints = constraints.len();
    let problem = lift(&sys, constraints);
    let sol = solve_relaxed(&problem, &opts.sdp)?;
    if sol.status != SolveStatus::Optimal {
        warnings.push(format!("SDP solver stopped with status {:?}", sol.status));
    }
    let ex = extract_psi(&sol)?;
    let psi = TriPsi::from_slice(&ex.psi);
    let (b_block, tb) = psi.b();
    let (c_block, tc) = psi.c();
    let (cb_block, tcb) = psi.cb();
    let (mut tb, mut tc, mut tcb) = (tb * scale, tc * scale, tcb * scale);
    let pb = closest_rotation(&b_block);
    let pc = closest_rotation(&c_block);
    let pcb = closest_rotation(&cb_block);
    let (mut rb, mut rc, mut rcb) = (
        *pb.rotation.matrix(),
        *pc.rotation.matrix(),
        *pcb.rotation.matrix(),
    );
    let ambiguous = epochs.len() < 3
        || sol.rank_ratio > AMBIGUOUS_RATIO
        || ex.degenerate_top
        || pb.degenerate
        || pc.degenerate
        || pcb.degenerate;
    if ambiguous {
        warnings.push(format!(
            "relaxation is not rank one (ratio {:.2e})",
            sol.rank_ratio
        ));
    }
    let cons = consistency((&rb, &tb), (&rc, &tc), (&rcb, &tcb));

    let mut refined = false;
    if let (Some((noise, mle_opts)), Some(o)) = (opts.mle, obs) {
        for _ in 0..2 {
            // C against A alone.
            if !o.c_to_a.is_empty() {
                let start = Pose::new(
                    Rotation::new_unchecked(rc),
                    tc,
                    FrameId::global(),
                    FrameId::ins(Agent::C),
                );
                let r = refine(&start, &o.c_to_a, &noise, &mle_opts, None)?;
                rc = *r.rotation.matrix();
                tc = r.translation;
            }
            // B against A and against C placed by the current C estimate.
            let mut b_obs = o.b_to_a.clone();
            for (ob, pc_local) in o.b_to_c.iter().zip(&o.c_local) {
                let mut m = *ob;
                m.target_global = rc.transpose() * (pc_local - tc);
                b_obs.push(m);
            }
            let start = Pose::new(
                Rotation::new_unchecked(rb),
                tb,
                FrameId::global(),
                FrameId::ins(Agent::B),
            );
            let r = refine(&start, &b_obs, &noise, &mle_opts, None)?;
            rb = *r.rotation.matrix();
            tb = r.translation;
        }
        rcb = rb * rc.transpose();
        tcb = tb - rcb * tc;
        refined = true;
    }

    Ok(TriReport {
        rotation_b: rb,
        translation_b: tb,
        rotation_c: rc,
        translation_c: tc,
        rotation_cb: rcb,
        translation_cb: tcb,
        scalar_measurements: 6 * epochs.len(),
        consistency: cons,
        ambiguous,
        sdp: SdpDiagnostics {
            objective: sol.objective,
            dual_objective: sol.dual_objective,
            max_feasibility_residual: sol.max_feasibility_residual(),
            rank_ratio: sol.rank_ratio,
            iterations: sol.iterations,
            status: sol.status,
            polished: sol.polished,
            degenerate_top: ex.degenerate_top,
            constraints: n_constraints,
        },
        refined,
        warnings,
    })
}

/// Epochs and body-frame observations from a three-agent scenario. Only
/// epochs with all three readings are kept.
pub fn tri_inputs(s: &Scenario) -> Result<(Vec<TriMeasurementEpoch>, TriObservations)> {
    let ba = s.pair_observations(Agent::B, Agent::A)?;
    let ca = s.pair_observations(Agent::C, Agent::A)?;
    let bc = s.pair_observations(Agent::B, Agent::C)?;
    let mut epochs = Vec::new();
    let mut obs = TriObservations::default();
    for o_ba in &ba {
        let (Some(o_ca), Some(o_bc)) = (
            ca.iter().find(|o| o.k == o_ba.k),
            bc.iter().find(|o| o.k == o_ba.k),
        ) else {
            continue;
        };
        let (e_ba, e_ca, e_bc) = (ins_epoch(o_ba)?, ins_epoch(o_ca)?, ins_epoch(o_bc)?);
        epochs.push(TriMeasurementEpoch {
            k: o_ba.k,
            p_a_global: e_ba.p_a_global,
            p_b_local: e_ba.p_b_local,
            p_c_local: e_ca.p_b_local,
            doa_b_to_a: e_ba.doa_ins,
            doa_c_to_a: e_ca.doa_ins,
            doa_b_to_c: e_bc.doa_ins,
        });
        obs.b_to_a.push(*o_ba);
        obs.c_to_a.push(*o_ca);
        obs.b_to_c.push(*o_bc);
        obs.c_local.push(o_bc.target_global);
    }
    if epochs.is_empty() {
        return Err(Error::InvalidInput(
            "scenario has no complete three-agent epochs".into(),
        ));
    }
    Ok((epochs, obs))
}
