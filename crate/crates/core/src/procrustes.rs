//! Projection of an arbitrary 3×3 matrix onto SO(3).

use nalgebra::{Matrix3, Vector3};

use crate::geometry::Rotation;

/// Ratio `σ₂/σ₁` below which the projection is not unique.
pub const DEGENERATE_SPECTRUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub rotation: Rotation,
    /// `det(U Vᵀ)` was negative and the last singular direction was flipped.
    pub reflection_repaired: bool,
    /// Fewer than two significant singular values; the result is one of
    /// several minimisers.
    pub degenerate: bool,
}

/// Closest rotation in Frobenius norm: `U Vᵀ`, or `U diag(1, 1, -1) Vᵀ`
/// when that would otherwise be a reflection.
pub fn closest_rotation(m: &Matrix3<f64>) -> Projection {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sv = svd.singular_values;

    // nalgebra sorts singular values in decreasing order, so the smallest
    // is last and flipping the last column of U is the minimal correction.
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    let (s1, s2) = (sv[order[0]], sv[order[1]]);
    let degenerate = !(s2 > DEGENERATE_SPECTRUM * s1);
    if degenerate {
        log::warn!("closest_rotation: degenerate spectrum {sv:?}");
    }

    let uv = u * v_t;
    if uv.determinant() >= 0.0 {
        return Projection {
            rotation: Rotation::new_unchecked(uv),
            reflection_repaired: false,
            degenerate,
        };
    }
    let mut d = Vector3::from_element(1.0);
    d[order[2]] = -1.0;
    Projection {
        rotation: Rotation::new_unchecked(u * Matrix3::from_diagonal(&d) * v_t),
        reflection_repaired: true,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::published_rotation;
    use crate::geometry::EulerAngles;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        // Uniform on SO(3) via a normalised Gaussian quaternion.
        use rand_distr::StandardNormal;
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        *uq.to_rotation_matrix().matrix()
    }

    #[test]
    fn rotation_is_fixed_point() {
        let r = EulerAngles::new(0.4, -0.2, 2.0).matrix();
        let p = closest_rotation(&r);
        assert!(!p.reflection_repaired);
        assert_abs_diff_eq!(*p.rotation.matrix(), r, epsilon = 1e-12);
    }

    #[test]
    fn reflection_is_repaired() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let p = closest_rotation(&m);
        assert!(p.reflection_repaired);
        let r = *p.rotation.matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let best = (r - m).norm();
        // Brute force over random restarts of Euler-angle local search.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut brute = f64::INFINITY;
        for _ in 0..200 {
            let mut e = [
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.1..3.1),
            ];
            let f = |e: &[f64; 3]| (EulerAngles::new(e[0], e[1], e[2]).matrix() - m).norm();
            let mut step = 0.5;
            let mut fe = f(&e);
            while step > 1e-7 {
                let mut improved = false;
                for i in 0..3 {
                    for s in [-step, step] {
                        let mut c = e;
                        c[i] += s;
                        let fc = f(&c);
                        if fc < fe {
                            e = c;
                            fe = fc;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            brute = brute.min(fe);
        }
        assert!(best <= brute + 1e-9, "{best} vs {brute}");
        // Known optimum: distance 2 (one axis flipped by a half turn).
        assert!((best - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_published_rotation() {
        let m = published_rotation();
        let p = closest_rotation(&(m * 0.9));
        assert_abs_diff_eq!(*p.rotation.matrix(), m, epsilon = 5e-3);
    }

    #[test]
    fn rank_one_input_is_flagged() {
        let m = Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.5, -1.0, 2.0).transpose();
        let p = closest_rotation(&m);
        assert!(p.degenerate);
        assert!((p.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let r = *closest_rotation(&m).rotation.matrix();
            let d = (r - m).norm();
            for _ in 0..1000 {
                let omega = random_rotation(&mut rng);
                assert!(d <= (omega - m).norm() + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn always_proper_and_scale_invariant(
            entries in proptest::array::uniform9(-5.0..5.0f64),
            s in 0.01..100.0f64,
        ) {
            let m = Matrix3::from_row_slice(&entries);
            let p = closest_rotation(&m);
            let r = *p.rotation.matrix();
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-9);
            if !p.degenerate {
                let q = *closest_rotation(&(m * s)).rotation.matrix();
                prop_assert!((q - r).amax() < 1e-8);
            }
        }
    }
}
