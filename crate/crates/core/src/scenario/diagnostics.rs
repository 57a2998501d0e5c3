//! Trajectory geometries that leave the pose unresolved, and a multi-start
//! search for distinct poses that fit the data exactly.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EulerAngles;
use crate::linear_system::MeasurementEpoch;

use super::metrics::rotation_error;

/// Relative threshold for the planarity and collinearity tests.
pub const SHAPE_TOL: f64 = 1e-6;
/// Largest pairwise DOA angle (radians) treated as parallel.
pub const PARALLEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unsuitability {
    PlanarA,
    CollinearA,
    ParallelDoa,
}

impl Unsuitability {
    pub fn expected_failure(&self) -> &'static str {
        match self {
            Unsuitability::PlanarA => {
                "linear system is rank deficient; least squares cannot resolve the pose"
            }
            Unsuitability::CollinearA => {
                "rotation is ambiguous about the broadcaster's line of flight"
            }
            Unsuitability::ParallelDoa => {
                "range along the common bearing is unobservable; translation is not unique"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub flags: Vec<Unsuitability>,
    /// Singular values of the centred broadcaster positions.
    pub spread: [f64; 3],
    /// Largest angle between any two INS-frame DOA vectors, radians.
    pub max_doa_angle: f64,
}

impl Diagnostics {
    pub fn has(&self, u: Unsuitability) -> bool {
        self.flags.contains(&u)
    }

    pub fn is_suitable(&self) -> bool {
        self.flags.is_empty()
    }
}

pub fn detect_unsuitable(epochs: &[MeasurementEpoch]) -> Result<Diagnostics> {
    if epochs.len() < 2 {
        return Err(Error::TooFewEpochs {
            required: 2,
            got: epochs.len(),
        });
    }
    let n = epochs.len();
    let mean = epochs.iter().map(|e| e.p_a_global).sum::<Vector3<f64>>() / n as f64;
    let mut centred = DMatrix::zeros(n, 3);
    for (i, e) in epochs.iter().enumerate() {
        centred
            .row_mut(i)
            .copy_from(&(e.p_a_global - mean).transpose());
    }
    let mut sv: Vec<f64> = centred
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(3, 0.0);
    let spread = [sv[0], sv[1], sv[2]];

    let mut max_doa_angle: f64 = 0.0;
    let units: Vec<Vector3<f64>> = epochs.iter().map(|e| e.doa_ins.unit_vector()).collect();
    for i in 0..n {
        for j in i + 1..n {
            max_doa_angle = max_doa_angle.max(
                units[i]
                    .cross(&units[j])
                    .norm()
                    .atan2(units[i].dot(&units[j])),
            );
        }
    }

    let mut flags = Vec::new();
    if spread[2] <= SHAPE_TOL * spread[0] {
        flags.push(Unsuitability::PlanarA);
    }
    if spread[1] <= SHAPE_TOL * spread[0] {
        flags.push(Unsuitability::CollinearA);
    }
    if max_doa_angle < PARALLEL_TOL {
        flags.push(Unsuitability::ParallelDoa);
    }
    Ok(Diagnostics {
        flags,
        spread,
        max_doa_angle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub starts: usize,
    pub seed: u64,
    /// Largest per-component unit-vector residual accepted as exact.
    pub exact_tol: f64,
    pub max_iter: usize,
    /// Translation search box half-width, metres.
    pub translation_box: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            starts: 64,
            seed: 0,
            exact_tol: 1e-9,
            max_iter: 300,
            translation_box: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub max_residual: f64,
}

const T_UNIT: f64 = 1000.0;

fn unpack(x: &Vector6<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    (
        EulerAngles::new(x[0], x[1], x[2]).matrix(),
        Vector3::new(x[3], x[4], x[5]) * T_UNIT,
    )
}

/// Residuals `v/‖v‖ - u` with `v = R p_A + t - p_B`.
fn residual(epochs: &[MeasurementEpoch], x: &Vector6<f64>) -> Option<DVector<f64>> {
    let (r, t) = unpack(x);
    let mut out = DVector::zeros(3 * epochs.len());
    for (i, e) in epochs.iter().enumerate() {
        let v = r * e.p_a_global + t - e.p_b_local;
        let n = v.norm();
        if !(n > 1e-9) {
            return None;
        }
        out.rows_mut(3 * i, 3)
            .copy_from(&(v / n - e.doa_ins.unit_vector()));
    }
    Some(out)
}

fn levenberg_marquardt(
    epochs: &[MeasurementEpoch],
    mut x: Vector6<f64>,
    max_iter: usize,
) -> Option<(Vector6<f64>, f64)> {
    let mut r = residual(epochs, &x)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let mut jac = DMatrix::zeros(r.len(), 6);
        for j in 0..6 {
            let h = 1e-7;
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let (Some(rp), Some(rm)) = (residual(epochs, &xp), residual(epochs, &xm)) else {
                return None;
            };
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        let jt = jac.transpose();
        let g = &jt * &r;
        let h = &jt * &jac;
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = h.clone();
            for d in 0..6 {
                damped[(d, d)] += lambda * (1.0 + h[(d, d)]);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let xn = x + Vector6::from_iterator(step.iter().copied());
            if let Some(rn) = residual(epochs, &xn) {
                let cn = rn.norm_squared();
                if cn < cost {
                    x = xn;
                    r = rn;
                    cost = cn;
                    lambda = (lambda * 0.3).max(1e-15);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved || cost < 1e-28 {
            break;
        }
    }
    Some((x, r.amax()))
}

/// Distinct poses reproducing the INS-frame DOAs to `exact_tol`, found by
/// Levenberg-Marquardt from seeded random starts.
pub fn exact_solutions(epochs: &[MeasurementEpoch], opts: &OracleOptions) -> Vec<ExactSolution> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found: Vec<ExactSolution> = Vec::new();
    let pi = std::f64::consts::PI;
    let tb = opts.translation_box / T_UNIT;
    for _ in 0..opts.starts {
        let x0 = Vector6::new(
            rng.gen_range(-pi..pi),
            rng.gen_range(-pi / 2.0..pi / 2.0),
            rng.gen_range(-pi..pi),
            rng.gen_range(-tb..tb),
            rng.gen_range(-tb..tb),
            rng.gen_range(-tb..tb),
        );
        let Some((x, worst)) = levenberg_marquardt(epochs, x0, opts.max_iter) else {
            continue;
        };
        if worst > opts.exact_tol {
            continue;
        }
        let (rotation, translation) = unpack(&x);
        let distinct = found.iter().all(|s| {
            rotation_error(&s.rotation, &rotation) > 1e-4
                || (s.translation - translation).norm() > 1e-3 * (1.0 + translation.norm())
        });
        if distinct {
            found.push(ExactSolution {
                rotation,
                translation,
                max_residual: worst,
            });
        }
    }
    found
}
