//! Linear system `A Ψ = b` built from broadcast positions and INS-frame
//! DOA measurements.
//!
//! Each epoch contributes two rows obtained by cross-multiplying the first
//! and third (respectively second and third) components of the DOA unit
//! vector with the predicted relative position, which eliminates the
//! unknown range.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{doa_to_unit_vector, DoaMeasurement, Pose, Rotation};

/// Number of unknowns of one pose block: nine rotation entries and three
/// translation entries.
pub const POSE_UNKNOWNS: usize = 12;

/// Relative singular-value threshold below which `A` is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEpoch {
    pub k: usize,
    /// Broadcaster position in the global frame.
    pub p_a_global: Vector3<f64>,
    /// Receiver position in its own INS frame.
    pub p_b_local: Vector3<f64>,
    /// DOA toward the broadcaster, INS axes.
    pub doa_ins: DoaMeasurement,
}

impl MeasurementEpoch {
    pub fn is_finite(&self) -> bool {
        self.p_a_global.iter().all(|v| v.is_finite())
            && self.p_b_local.iter().all(|v| v.is_finite())
            && self.doa_ins.azimuth.is_finite()
            && self.doa_ins.elevation.is_finite()
    }
}

/// Unknown vector `[r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiVector(pub [f64; POSE_UNKNOWNS]);

impl PsiVector {
    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut psi = [0.0; POSE_UNKNOWNS];
        for i in 0..3 {
            for j in 0..3 {
                psi[3 * i + j] = rotation[(i, j)];
            }
            psi[9 + i] = translation[i];
        }
        Self(psi)
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self::from_parts(pose.rotation.matrix(), &pose.translation)
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut psi = [0.0; POSE_UNKNOWNS];
        psi.copy_from_slice(&values[..POSE_UNKNOWNS]);
        Self(psi)
    }

    /// Row-major 3×3 block; not necessarily orthogonal.
    pub fn rotation_block(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.0[..9])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.0)
    }

    /// Best-effort conversion when the rotation block is known to be exact.
    pub fn to_pose(
        &self,
        from: crate::geometry::FrameId,
        to: crate::geometry::FrameId,
    ) -> Result<Pose> {
        Ok(Pose::new(
            Rotation::new(self.rotation_block())?,
            self.translation(),
            from,
            to,
        ))
    }
}

/// Two rows of the collinearity system for one DOA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowPair {
    pub rows: [[f64; POSE_UNKNOWNS]; 2],
    pub rhs: [f64; 2],
}

/// Rows expressing that `R p_emitter + t - p_observer` is parallel to
/// `direction`, linear in `(R, t)`.
pub fn collinearity_rows(
    direction: &Vector3<f64>,
    p_emitter: &Vector3<f64>,
    p_observer: &Vector3<f64>,
) -> RowPair {
    let (q1, q2, q3) = (direction.x, direction.y, direction.z);
    let mut r1 = [0.0; POSE_UNKNOWNS];
    let mut r2 = [0.0; POSE_UNKNOWNS];
    for j in 0..3 {
        r1[j] = p_emitter[j] * q3;
        r1[6 + j] = -p_emitter[j] * q1;
        r2[3 + j] = p_emitter[j] * q3;
        r2[6 + j] = -p_emitter[j] * q2;
    }
    r1[9] = q3;
    r1[11] = -q1;
    r2[10] = q3;
    r2[11] = -q2;
    RowPair {
        rows: [r1, r2],
        rhs: [
            -q1 * p_observer.z + q3 * p_observer.x,
            -q2 * p_observer.z + q3 * p_observer.y,
        ],
    }
}

pub fn build_rows(e: &MeasurementEpoch) -> RowPair {
    collinearity_rows(&doa_to_unit_vector(&e.doa_ins), &e.p_a_global, &e.p_b_local)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Number of epochs stacked.
    pub k: usize,
}

impl LinearSystem {
    pub fn from_row_pairs(pairs: &[RowPair], unknowns: usize, k: usize) -> Self {
        let mut a = DMatrix::zeros(2 * pairs.len(), unknowns);
        let mut b = DVector::zeros(2 * pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            for r in 0..2 {
                for (j, v) in pair.rows[r].iter().enumerate() {
                    a[(2 * i + r, j)] = *v;
                }
                b[2 * i + r] = pair.rhs[r];
            }
        }
        Self { a, b, k }
    }

    pub fn unknowns(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, psi: &DVector<f64>) -> DVector<f64> {
        &self.a * psi - &self.b
    }

    pub fn singular_values(&self) -> DVector<f64> {
        self.a.clone().svd(false, false).singular_values
    }

    /// Numerical rank at relative threshold [`RANK_TOL`].
    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values(), RANK_TOL)
    }
}

pub fn numerical_rank(singular_values: &DVector<f64>, rel_tol: f64) -> usize {
    let max = singular_values.max();
    if max <= 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|s| **s > rel_tol * max)
        .count()
}

pub fn assemble(epochs: &[MeasurementEpoch]) -> Result<LinearSystem> {
    if epochs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = epochs.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "epoch {} has non-finite entries",
            bad.k
        )));
    }
    let pairs: Vec<RowPair> = epochs.iter().map(build_rows).collect();
    Ok(LinearSystem::from_row_pairs(
        &pairs,
        POSE_UNKNOWNS,
        epochs.len(),
    ))
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    /// Minimum-norm least-squares solution.
    pub psi: DVector<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    pub singular_values: DVector<f64>,
    /// Set when `rank < unknowns`: the trajectory cannot be resolved by the
    /// linear method alone.
    pub rank_deficient: bool,
}

impl LsSolution {
    pub fn pose_psi(&self) -> PsiVector {
        PsiVector::from_slice(self.psi.as_slice())
    }
}

/// Minimum-norm least-squares solve through the SVD.
pub fn solve_ls(sys: &LinearSystem) -> Result<LsSolution> {
    let n = sys.unknowns();
    let svd = sys.a.clone().svd(true, true);
    let sv = svd.singular_values.clone();
    let rank = numerical_rank(&sv, RANK_TOL);
    let smax = sv.max();
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Solver("SVD without U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Solver("SVD without Vᵀ".into()))?;
    let mut psi = DVector::zeros(n);
    for (i, s) in sv.iter().enumerate() {
        if *s > RANK_TOL * smax {
            let coeff = u.column(i).dot(&sys.b) / s;
            psi += v_t.row(i).transpose() * coeff;
        }
    }
    let residual_norm = sys.residual(&psi).norm();
    Ok(LsSolution {
        psi,
        residual_norm,
        rank,
        singular_values: sv,
        rank_deficient: rank < n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{published_pose, FLIGHT_ROWS};
    use crate::geometry::{unit_vector_to_doa, Agent, EulerAngles, FrameId};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b2() -> FrameId {
        FrameId::ins(Agent::B)
    }

    fn exact_epochs(rng: &mut ChaCha8Rng, pose: &Pose, k: usize) -> Vec<MeasurementEpoch> {
        (0..k)
            .map(|i| {
                let pa = Vector3::new(
                    rng.gen_range(-2000.0..2000.0),
                    rng.gen_range(-2000.0..2000.0),
                    rng.gen_range(200.0..500.0),
                );
                let pb = Vector3::new(
                    rng.gen_range(-2000.0..2000.0),
                    rng.gen_range(-2000.0..2000.0),
                    rng.gen_range(200.0..500.0),
                );
                let dir = pose.transform_point(&pa) - pb;
                MeasurementEpoch {
                    k: i + 1,
                    p_a_global: pa,
                    p_b_local: pb,
                    doa_ins: unit_vector_to_doa(&dir, b2(), i + 1).unwrap(),
                }
            })
            .collect()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let e = EulerAngles::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.4..1.4),
            rng.gen_range(-3.0..3.0),
        );
        let t = Vector3::new(
            rng.gen_range(-600.0..600.0),
            rng.gen_range(-600.0..600.0),
            rng.gen_range(-600.0..600.0),
        );
        Pose::new(Rotation::from_euler(e), t, FrameId::global(), b2())
    }

    #[test]
    fn axis_aligned_rows() {
        let e = MeasurementEpoch {
            k: 1,
            p_a_global: Vector3::new(1.0, 0.0, 0.0),
            p_b_local: Vector3::zeros(),
            doa_ins: DoaMeasurement::new(0.0, 0.0, b2(), 1),
        };
        let pair = build_rows(&e);
        let mut expected = [0.0; 12];
        expected[6] = -1.0;
        expected[11] = -1.0;
        assert_eq!(pair.rows[0], expected);
        assert_eq!(pair.rhs[0], 0.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(assemble(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(&mut rng);
        let one = assemble(&exact_epochs(&mut rng, &pose, 1)).unwrap();
        assert_eq!((one.a.nrows(), one.a.ncols(), one.b.len()), (2, 12, 2));
    }

    #[test]
    fn flight_rows_satisfy_published_pose() {
        let pose = published_pose();
        let psi = PsiVector::from_pose(&pose).to_dvector();
        let epochs: Vec<_> = FLIGHT_ROWS
            .iter()
            .map(|r| MeasurementEpoch {
                k: r.k,
                p_a_global: Vector3::from(r.p_a_global),
                p_b_local: Vector3::from(r.p_b_ins),
                doa_ins: DoaMeasurement::new(r.doa[0], r.doa[1], b2(), r.k),
            })
            .collect();
        let sys = assemble(&epochs).unwrap();
        assert_eq!(sys.a.nrows(), 12);
        assert_eq!(sys.rank(), 12);
        for r in sys.residual(&psi).iter() {
            assert!(r.abs() < 0.5, "row residual {r}");
        }
    }

    #[test]
    fn noiseless_rows_vanish_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let epochs = exact_epochs(&mut rng, &pose, 3);
            let psi = PsiVector::from_pose(&pose).to_dvector();
            for e in &epochs {
                let pair = build_rows(e);
                for r in 0..2 {
                    let lhs: f64 = pair.rows[r]
                        .iter()
                        .zip(psi.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    assert!((lhs - pair.rhs[r]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn noiseless_ls_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = random_pose(&mut rng);
        let sys = assemble(&exact_epochs(&mut rng, &pose, 6)).unwrap();
        let sol = solve_ls(&sys).unwrap();
        assert!(!sol.rank_deficient);
        assert!(sol.residual_norm < 1e-9);
        let truth = PsiVector::from_pose(&pose).to_dvector();
        assert_abs_diff_eq!(sol.psi, truth, epsilon = 1e-8);
    }

    #[test]
    fn position_scaling_scales_translation_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pose = random_pose(&mut rng);
        let epochs = exact_epochs(&mut rng, &pose, 8);
        let s = 3.5;
        let scaled: Vec<_> = epochs
            .iter()
            .map(|e| MeasurementEpoch {
                p_a_global: e.p_a_global * s,
                p_b_local: e.p_b_local * s,
                ..*e
            })
            .collect();
        let a = solve_ls(&assemble(&epochs).unwrap()).unwrap().pose_psi();
        let b = solve_ls(&assemble(&scaled).unwrap()).unwrap().pose_psi();
        assert_abs_diff_eq!(a.rotation_block(), b.rotation_block(), epsilon = 1e-8);
        assert_abs_diff_eq!(a.translation() * s, b.translation(), epsilon = 1e-6);
    }

    #[test]
    fn planar_broadcaster_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pose = random_pose(&mut rng);
        let mut epochs = exact_epochs(&mut rng, &pose, 10);
        // Tilted plane n·p = 250.
        let n = Vector3::new(0.2, -0.3, 1.0);
        for e in epochs.iter_mut() {
            let mut p = e.p_a_global;
            p.z = (250.0 - n.x * p.x - n.y * p.y) / n.z;
            e.p_a_global = p;
            let dir = pose.transform_point(&p) - e.p_b_local;
            e.doa_ins = unit_vector_to_doa(&dir, b2(), e.k).unwrap();
        }
        let sys = assemble(&epochs).unwrap();
        assert!(sys.rank() < 12);
        assert!(solve_ls(&sys).unwrap().rank_deficient);
    }
}
