//! Error metrics against ground truth.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Geodesic distance on SO(3): the angle of `R1ᵀ R2`.
/// Evaluated as `atan2(‖axis‖, cos)` so it stays accurate near 0 and π.
pub fn rotation_error(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let m = r1.transpose() * r2;
    let c = (m.trace() - 1.0) / 2.0;
    let s = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    s.atan2(c)
}

/// Receiver positions mapped back to the global frame with `(R, t)`:
/// `Rᵀ (p_local - t)`.
pub fn reconstruct_positions(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    p_local: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    p_local
        .iter()
        .map(|p| rotation.transpose() * (p - translation))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rotation_error_rad: f64,
    /// Mean reconstruction error divided by the mean inter-agent distance.
    pub position_error: f64,
    pub reconstructed: Vec<Vector3<f64>>,
}

/// Normalised position error: mean `‖p̄ - p‖` over epochs divided by the mean
/// broadcaster-receiver distance `d`.
pub fn position_error(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    p_local: &[Vector3<f64>],
    p_true_global: &[Vector3<f64>],
    mean_separation: f64,
) -> f64 {
    if p_local.is_empty() {
        return 0.0;
    }
    let rec = reconstruct_positions(rotation, translation, p_local);
    let total: f64 = rec
        .iter()
        .zip(p_true_global)
        .map(|(a, b)| (a - b).norm())
        .sum();
    total / (p_local.len() as f64 * mean_separation)
}

pub fn mean_separation(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum();
    total / a.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
pub fn error_report(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    true_rotation: &Matrix3<f64>,
    p_local: &[Vector3<f64>],
    p_true_global: &[Vector3<f64>],
    p_broadcaster: &[Vector3<f64>],
) -> ErrorReport {
    let d = mean_separation(p_broadcaster, p_true_global);
    ErrorReport {
        rotation_error_rad: rotation_error(rotation, true_rotation),
        position_error: position_error(rotation, translation, p_local, p_true_global, d),
        reconstructed: reconstruct_positions(rotation, translation, p_local),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{published_pose, FLIGHT_ROWS};
    use crate::geometry::{EulerAngles, Rotation};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    proptest! {
        #[test]
        fn geodesic_matches_axis_angle(
            ax in prop::array::uniform3(-1.0..1.0f64),
            angle in 1e-9..3.1f64,
        ) {
            let axis = Vector3::from(ax);
            prop_assume!(axis.norm() > 1e-3);
            let r = *Rotation::from_axis_angle(&axis, angle).matrix();
            let e = rotation_error(&Matrix3::identity(), &r);
            prop_assert!((e - angle).abs() <= 1e-12 * (1.0 + angle), "{} vs {}", e, angle);
        }
    }

    #[test]
    fn simple_rotation_errors() {
        let r = EulerAngles::new(0.3, 0.2, -0.5).matrix();
        assert_eq!(rotation_error(&r, &r), 0.0);
        let z90 = Rotation::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        assert!((rotation_error(&Matrix3::identity(), z90.matrix()) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn offset_of_one_separation_gives_unit_error() {
        let r = EulerAngles::new(1.0, -0.4, 0.1).matrix();
        let t = Vector3::new(5.0, 6.0, 7.0);
        let truth_global = vec![
            Vector3::new(0.0, 0.0, 300.0),
            Vector3::new(250.0, 10.0, 310.0),
        ];
        let a = vec![
            Vector3::new(800.0, 0.0, 350.0),
            Vector3::new(900.0, 400.0, 340.0),
        ];
        let local: Vec<_> = truth_global.iter().map(|p| r * p + t).collect();
        let d = mean_separation(&a, &truth_global);
        assert!(position_error(&r, &t, &local, &truth_global, d) < 1e-12);
        // Shifting t by d along R's first row moves every reconstruction by d.
        let t_off = t + r * Vector3::new(d, 0.0, 0.0);
        let e = position_error(&r, &t_off, &local, &truth_global, d);
        assert!((e - 1.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn published_columns_give_expected_error() {
        // Published SDP+O+ML column against the truth column.
        let truth: Vec<_> = FLIGHT_ROWS
            .iter()
            .map(|r| Vector3::from(r.p_b_global))
            .collect();
        let refined: Vec<_> = FLIGHT_ROWS
            .iter()
            .map(|r| Vector3::from(r.p_b_refined))
            .collect();
        let a: Vec<_> = FLIGHT_ROWS
            .iter()
            .map(|r| Vector3::from(r.p_a_global))
            .collect();
        let d = mean_separation(&a, &truth);
        let mean_offset: f64 = refined
            .iter()
            .zip(&truth)
            .map(|(x, y)| (x - y).norm())
            .sum::<f64>()
            / 6.0;
        let e = mean_offset / d;
        assert!((0.05..0.12).contains(&e), "{e}");
        // The published pose reconstructs the truth column closely.
        let p = published_pose();
        let local: Vec<_> = FLIGHT_ROWS
            .iter()
            .map(|r| Vector3::from(r.p_b_ins))
            .collect();
        let e0 = position_error(p.rotation.matrix(), &p.translation, &local, &truth, d);
        assert!(e0 < 2e-3, "{e0}");
    }

    proptest! {
        #[test]
        fn left_invariant(
            a in proptest::array::uniform3(-3.0..3.0f64),
            b in proptest::array::uniform3(-3.0..3.0f64),
            q in proptest::array::uniform3(-3.0..3.0f64),
        ) {
            let r1 = EulerAngles::new(a[0], a[1], a[2]).matrix();
            let r2 = EulerAngles::new(b[0], b[1], b[2]).matrix();
            let qm = EulerAngles::new(q[0], q[1], q[2]).matrix();
            let d = rotation_error(&r1, &r2);
            prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
            prop_assert!((rotation_error(&(qm * r1), &(qm * r2)) - d).abs() < 1e-7);
        }
    }
}
