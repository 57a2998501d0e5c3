//! Maximum-likelihood refinement of a pose from body-frame DOA readings.
//!
//! The model predicts the broadcaster direction in the receiver's body frame,
//! `v(k) = R_att(k) (R p_target(k) + t - p_observer(k))`, and scores wrapped
//! azimuth/elevation residuals under independent Gaussian noise. The pose is
//! refined by gradient descent with Armijo backtracking.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vector_angles, wrap_angle, EulerAngles, Pose, Rotation, MIN_SEPARATION};

/// Finite-difference steps for the gradient check.
pub const FD_STEP_ANGLE: f64 = 1e-6;
pub const FD_STEP_METRES: f64 = 1e-4;

/// Pitch margin from ±π/2 at which the Euler chart is re-anchored.
const GIMBAL_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_azimuth: f64,
    pub sigma_elevation: f64,
}

impl NoiseModel {
    pub fn new(sigma_azimuth: f64, sigma_elevation: f64) -> Result<Self> {
        if !(sigma_azimuth > 0.0 && sigma_elevation > 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise standard deviations must be positive, got {sigma_azimuth} and {sigma_elevation}"
            )));
        }
        Ok(Self {
            sigma_azimuth,
            sigma_elevation,
        })
    }

    pub fn from_degrees(az: f64, el: f64) -> Result<Self> {
        Self::new(az.to_radians(), el.to_radians())
    }
}

/// One body-frame reading of a target whose position is known in the
/// global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub k: usize,
    pub target_global: Vector3<f64>,
    /// Observer position in its own INS frame.
    pub observer_local: Vector3<f64>,
    /// INS axes to body axes, `R_{B2}^{B4}(k)`.
    pub attitude: Rotation,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Predicted target direction in the observer body frame.
pub fn predict_body_vector(
    obs: &Observation,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Vector3<f64> {
    obs.attitude.matrix() * (rotation * obs.target_global + translation - obs.observer_local)
}

/// Predicted `(azimuth, elevation)` in the observer body frame.
pub fn predict_body_doa(obs: &Observation, pose: &Pose) -> Result<(f64, f64)> {
    vector_angles(&predict_body_vector(
        obs,
        pose.rotation.matrix(),
        &pose.translation,
    ))
}

fn residuals(obs: &Observation, v: &Vector3<f64>) -> Result<(f64, f64)> {
    let (az, el) = vector_angles(v)?;
    Ok((wrap_angle(obs.azimuth - az), wrap_angle(obs.elevation - el)))
}

fn nll_matrix(
    observations: &[Observation],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    noise: &NoiseModel,
) -> Result<f64> {
    let (wa, we) = weights(noise);
    let mut total = 0.0;
    for obs in observations {
        let (ra, re) = residuals(obs, &predict_body_vector(obs, rotation, translation))?;
        total += 0.5 * (ra * ra * wa + re * re * we);
    }
    Ok(total)
}

fn weights(noise: &NoiseModel) -> (f64, f64) {
    (
        1.0 / (noise.sigma_azimuth * noise.sigma_azimuth),
        1.0 / (noise.sigma_elevation * noise.sigma_elevation),
    )
}

/// Negative log-likelihood up to an additive constant.
pub fn negative_log_likelihood(
    observations: &[Observation],
    pose: &Pose,
    noise: &NoiseModel,
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    nll_matrix(
        observations,
        pose.rotation.matrix(),
        &pose.translation,
        noise,
    )
}

/// Euler chart around a fixed anchor: `R = E(params[0..3]) * anchor`,
/// `t = params[3..6]`.
#[derive(Debug, Clone, Copy)]
pub struct Chart {
    pub anchor: Matrix3<f64>,
}

impl Chart {
    pub fn identity() -> Self {
        Self {
            anchor: Matrix3::identity(),
        }
    }

    pub fn params_of(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Vector6<f64> {
        let e = EulerAngles::from_matrix(&(rotation * self.anchor.transpose()));
        Vector6::new(
            e.yaw,
            e.pitch,
            e.roll,
            translation.x,
            translation.y,
            translation.z,
        )
    }

    pub fn rotation(&self, params: &Vector6<f64>) -> Matrix3<f64> {
        euler(params).matrix() * self.anchor
    }

    pub fn translation(params: &Vector6<f64>) -> Vector3<f64> {
        Vector3::new(params[3], params[4], params[5])
    }
}

fn euler(params: &Vector6<f64>) -> EulerAngles {
    EulerAngles::new(params[0], params[1], params[2])
}

/// NLL as a function of chart parameters.
pub fn nll_params(
    observations: &[Observation],
    chart: &Chart,
    params: &Vector6<f64>,
    noise: &NoiseModel,
) -> Result<f64> {
    nll_matrix(
        observations,
        &chart.rotation(params),
        &Chart::translation(params),
        noise,
    )
}

/// Analytic gradient of [`nll_params`].
pub fn gradient(
    observations: &[Observation],
    chart: &Chart,
    params: &Vector6<f64>,
    noise: &NoiseModel,
) -> Result<Vector6<f64>> {
    let (wa, we) = weights(noise);
    let rot = chart.rotation(params);
    let t = Chart::translation(params);
    let partials = euler(params).matrix_partials();
    let mut g = Vector6::zeros();
    for obs in observations {
        let att = obs.attitude.matrix();
        let v = predict_body_vector(obs, &rot, &t);
        let (ra, re) = residuals(obs, &v)?;
        let h2 = v.x * v.x + v.y * v.y;
        let h = h2.sqrt();
        let rho2 = v.norm_squared();
        if h <= MIN_SEPARATION {
            return Err(Error::DegenerateVector(h));
        }
        let d_az = Vector3::new(-v.y / h2, v.x / h2, 0.0);
        let d_el = (Vector3::z() - v * (v.z / rho2)) / h;
        // d NLL / d v
        let dv = -(d_az * (ra * wa) + d_el * (re * we));
        let anchored = chart.anchor * obs.target_global;
        for (i, p) in partials.iter().enumerate() {
            g[i] += dv.dot(&(att * (p * anchored)));
        }
        let dt = att.transpose() * dv;
        g[3] += dt.x;
        g[4] += dt.y;
        g[5] += dt.z;
    }
    Ok(g)
}

/// Central finite-difference gradient (1e-6 rad, 1e-4 m).
pub fn gradient_fd(
    observations: &[Observation],
    chart: &Chart,
    params: &Vector6<f64>,
    noise: &NoiseModel,
) -> Result<Vector6<f64>> {
    let mut g = Vector6::zeros();
    for i in 0..6 {
        let h = if i < 3 { FD_STEP_ANGLE } else { FD_STEP_METRES };
        let mut p = *params;
        p[i] += h;
        let fp = nll_params(observations, chart, &p, noise)?;
        p[i] -= 2.0 * h;
        let fm = nll_params(observations, chart, &p, noise)?;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Relative NLL decrease over `stall_window` iterations below which the
    /// descent stops.
    pub rel_decrease_tol: f64,
    pub stall_window: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub initial_step: f64,
    /// Longest trial step in the scaled coordinates (radians and units of
    /// the mean observer-target distance). Steeper gradients are shortened
    /// to this length before backtracking.
    pub max_step: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-7,
            rel_decrease_tol: 1e-10,
            stall_window: 5,
            armijo: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlState {
    pub iteration: usize,
    /// Euler angles of the rotation followed by the translation.
    pub params: [f64; 6],
    pub nll: f64,
    pub gradient_norm: f64,
    pub step: f64,
    pub rotation_error: Option<f64>,
    pub position_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MleStop {
    GradientTolerance,
    Stalled,
    LineSearchFailed,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub trace: Vec<MlState>,
    pub stop: MleStop,
    pub reanchored: usize,
}

impl MleResult {
    pub fn final_nll(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |s| s.nll)
    }
}

/// Ground-truth hook for the trace: maps an estimate to
/// `(rotation_error, position_error)`.
pub type TruthMetrics<'a> = &'a dyn Fn(&Rotation, &Vector3<f64>) -> (f64, f64);

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut Vec<MlState>,
    iteration: usize,
    chart: &Chart,
    params: &Vector6<f64>,
    nll: f64,
    gnorm: f64,
    step: f64,
    truth: Option<TruthMetrics<'_>>,
) {
    let rot = chart.rotation(params);
    let e = EulerAngles::from_matrix(&rot);
    let (rotation_error, position_error) = match truth {
        Some(f) => {
            let (r, p) = f(&Rotation::new_unchecked(rot), &Chart::translation(params));
            (Some(r), Some(p))
        }
        None => (None, None),
    };
    trace.push(MlState {
        iteration,
        params: [e.yaw, e.pitch, e.roll, params[3], params[4], params[5]],
        nll,
        gradient_norm: gnorm,
        step,
        rotation_error,
        position_error,
    });
}

/// Typical observer-target distance, used to put angles and metres on a
/// comparable footing during descent.
fn length_scale(
    observations: &[Observation],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> f64 {
    let total: f64 = observations
        .iter()
        .map(|o| (rotation * o.target_global + translation - o.observer_local).norm())
        .sum();
    let mean = total / observations.len() as f64;
    if mean.is_finite() && mean > 1.0 {
        mean
    } else {
        1.0
    }
}

/// Gradient descent with Armijo backtracking from `initial`.
///
/// Descent runs on `(angles, t / L)` with `L` the mean initial
/// observer-target distance; the returned trace reports the gradient norm in
/// those coordinates. Trial steps are at most `max_step` long there.
pub fn refine(
    initial: &Pose,
    observations: &[Observation],
    noise: &NoiseModel,
    opts: &MleOptions,
    truth: Option<TruthMetrics<'_>>,
) -> Result<MleResult> {
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    let r0 = *initial.rotation.matrix();
    let mut chart = Chart::identity();
    let mut x = chart.params_of(&r0, &initial.translation);
    let mut reanchored = 0;
    if euler(&x).near_gimbal_lock(GIMBAL_MARGIN) {
        chart = Chart { anchor: r0 };
        x = chart.params_of(&r0, &initial.translation);
        reanchored += 1;
    }
    let scale = length_scale(observations, &r0, &initial.translation);
    let metric = Vector6::new(1.0, 1.0, 1.0, scale, scale, scale);

    let mut f = nll_params(observations, &chart, &x, noise)?;
    let mut g = gradient(observations, &chart, &x, noise)?.component_mul(&metric);
    let mut trace = Vec::new();
    record(&mut trace, 0, &chart, &x, f, g.norm(), 0.0, truth);

    let mut stop = MleStop::MaxIter;
    for it in 1..=opts.max_iter {
        let gnorm = g.norm();
        if gnorm < opts.grad_tol {
            stop = MleStop::GradientTolerance;
            break;
        }
        let dir = g * (opts.max_step / gnorm).min(1.0);
        let slope = g.dot(&dir);
        let mut alpha = opts.initial_step;
        let mut accepted = None;
        while alpha * dir.norm() > 1e-16 * (1.0 + x.norm()) {
            let cand = x - (dir * alpha).component_mul(&metric);
            if let Ok(fc) = nll_params(observations, &chart, &cand, noise) {
                if fc <= f - opts.armijo * alpha * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            alpha *= opts.shrink;
        }
        let Some((xn, fnew)) = accepted else {
            stop = MleStop::LineSearchFailed;
            break;
        };
        x = xn;
        f = fnew;
        if euler(&x).near_gimbal_lock(GIMBAL_MARGIN) {
            log::warn!("refine: pitch near ±π/2 at iteration {it}, re-anchoring the Euler chart");
            let rot = chart.rotation(&x);
            let t = Chart::translation(&x);
            chart = Chart { anchor: rot };
            x = chart.params_of(&rot, &t);
            reanchored += 1;
        }
        g = gradient(observations, &chart, &x, noise)?.component_mul(&metric);
        record(&mut trace, it, &chart, &x, f, g.norm(), alpha, truth);

        let w = opts.stall_window;
        if trace.len() > w {
            let old = trace[trace.len() - 1 - w].nll;
            if old - f <= opts.rel_decrease_tol * f.abs().max(f64::MIN_POSITIVE) {
                stop = MleStop::Stalled;
                break;
            }
        }
    }
    if stop == MleStop::MaxIter
        && trace
            .last()
            .is_some_and(|s| s.gradient_norm < opts.grad_tol)
    {
        stop = MleStop::GradientTolerance;
    }

    // Accepted iterates only decrease the NLL, so the last is the best.
    let rot = chart.rotation(&x);
    Ok(MleResult {
        rotation: crate::procrustes::closest_rotation(&rot).rotation,
        translation: Chart::translation(&x),
        trace,
        stop,
        reanchored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Agent, FrameId};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(e: [f64; 3], t: [f64; 3]) -> Pose {
        Pose::new(
            Rotation::from_euler(EulerAngles::new(e[0], e[1], e[2])),
            Vector3::from(t),
            FrameId::global(),
            FrameId::ins(Agent::B),
        )
    }

    fn synthetic(truth: &Pose, k: usize, seed: u64, sigma: Option<NoiseModel>) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|i| {
                let target = Vector3::new(
                    rng.gen_range(-900.0..900.0),
                    rng.gen_range(-900.0..900.0),
                    rng.gen_range(330.0..370.0),
                );
                let b_global = Vector3::new(
                    rng.gen_range(-900.0..900.0),
                    rng.gen_range(-900.0..900.0),
                    rng.gen_range(280.0..320.0),
                );
                let attitude = Rotation::from_euler(EulerAngles::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-0.2..0.2),
                    0.0,
                ));
                let mut obs = Observation {
                    k: i + 1,
                    target_global: target,
                    observer_local: truth.transform_point(&b_global),
                    attitude,
                    azimuth: 0.0,
                    elevation: 0.0,
                };
                let (az, el) = predict_body_doa(&obs, truth).unwrap();
                let (na, ne) = match sigma {
                    Some(n) => {
                        use rand_distr::{Distribution, Normal};
                        (
                            Normal::new(0.0, n.sigma_azimuth).unwrap().sample(&mut rng),
                            Normal::new(0.0, n.sigma_elevation)
                                .unwrap()
                                .sample(&mut rng),
                        )
                    }
                    None => (0.0, 0.0),
                };
                obs.azimuth = wrap_angle(az + na);
                obs.elevation = el + ne;
                obs
            })
            .collect()
    }

    #[test]
    fn far_start_takes_bounded_steps() {
        let truth = pose([0.3, -0.2, 1.0], [200.0, -100.0, 50.0]);
        let obs = synthetic(&truth, 6, 4, None);
        let start = pose([1.5, 0.4, -0.5], [900.0, 700.0, -300.0]);
        let noise = NoiseModel::from_degrees(0.5, 2.0).unwrap();
        let opts = MleOptions {
            max_iter: 20,
            ..Default::default()
        };
        let r = refine(&start, &obs, &noise, &opts, None).unwrap();
        let l = length_scale(&obs, start.rotation.matrix(), &start.translation);
        for w in r.trace.windows(2) {
            let (a, b) = (&w[0].params, &w[1].params);
            let mut d2 = 0.0;
            for i in 0..3 {
                d2 += (b[i] - a[i]).powi(2) + ((b[3 + i] - a[3 + i]) / l).powi(2);
            }
            assert!(d2.sqrt() <= opts.max_step * (1.0 + 1e-9), "{}", d2.sqrt());
        }
    }

    #[test]
    fn due_north_prediction() {
        let obs = Observation {
            k: 1,
            target_global: Vector3::new(0.0, 100.0, 10.0),
            observer_local: Vector3::zeros(),
            attitude: Rotation::identity(),
            azimuth: 0.0,
            elevation: 0.0,
        };
        let id = Pose::identity(FrameId::global(), FrameId::ins(Agent::B));
        let (az, el) = predict_body_doa(&obs, &id).unwrap();
        assert!((az - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((el - (10.0f64).atan2(100.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_at_truth_and_half_per_sigma() {
        let truth = pose([0.7, 0.2, -1.1], [120.0, -40.0, 15.0]);
        let mut obs = synthetic(&truth, 6, 1, None);
        let noise = NoiseModel::from_degrees(0.5, 2.0).unwrap();
        assert!(negative_log_likelihood(&obs, &truth, &noise).unwrap() < 1e-12);
        obs[0].azimuth += noise.sigma_azimuth;
        let f = negative_log_likelihood(&obs, &truth, &noise).unwrap();
        assert!((f - 0.5).abs() < 1e-9, "{f}");
    }

    #[test]
    fn wrap_and_swap_symmetry() {
        let truth = pose([0.7, 0.2, -1.1], [120.0, -40.0, 15.0]);
        let obs = synthetic(
            &truth,
            6,
            2,
            Some(NoiseModel::from_degrees(1.0, 1.0).unwrap()),
        );
        let est = pose([0.71, 0.19, -1.1], [110.0, -35.0, 20.0]);
        let noise = NoiseModel::from_degrees(1.0, 1.0).unwrap();
        let f = negative_log_likelihood(&obs, &est, &noise).unwrap();
        let mut shifted = obs.clone();
        for o in &mut shifted {
            o.azimuth += 2.0 * std::f64::consts::PI;
        }
        assert!((negative_log_likelihood(&shifted, &est, &noise).unwrap() - f).abs() < 1e-9 * f);

        // Equal sigmas: the objective is the sum of both squared residuals,
        // so exchanging which residual is called azimuth leaves it unchanged.
        let mut total = 0.0;
        for o in &obs {
            let (ra, re) = residuals(
                o,
                &predict_body_vector(o, est.rotation.matrix(), &est.translation),
            )
            .unwrap();
            total += (re * re + ra * ra) / (2.0 * noise.sigma_azimuth.powi(2));
        }
        assert!((total - f).abs() < 1e-9 * f);
    }

    #[test]
    fn gradient_vanishes_at_noiseless_truth() {
        let truth = pose([-2.0, 0.4, 0.3], [500.0, 200.0, -100.0]);
        let obs = synthetic(&truth, 8, 3, None);
        let noise = NoiseModel::from_degrees(1.0, 4.0).unwrap();
        let chart = Chart::identity();
        let x = chart.params_of(truth.rotation.matrix(), &truth.translation);
        assert!(gradient(&obs, &chart, &x, &noise).unwrap().norm() < 1e-6);
        let res = refine(&truth, &obs, &noise, &MleOptions::default(), None).unwrap();
        assert!(res.trace[0].gradient_norm < 1e-6);
        assert!(res.trace.len() <= 2);
    }

    #[test]
    fn refine_improves_a_perturbed_start() {
        let truth = pose([1.0, -0.3, 2.0], [-300.0, 250.0, 40.0]);
        let noise = NoiseModel::from_degrees(0.5, 2.0).unwrap();
        let obs = synthetic(&truth, 10, 4, Some(noise));
        let start = pose([1.03, -0.28, 2.02], [-280.0, 270.0, 60.0]);
        let res = refine(&start, &obs, &noise, &MleOptions::default(), None).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].nll <= w[0].nll);
        }
        assert!(res.final_nll() < res.trace[0].nll);
        let err = crate::scenario::rotation_error(res.rotation.matrix(), truth.rotation.matrix());
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn reanchors_near_gimbal_lock() {
        let truth = pose(
            [0.3, std::f64::consts::FRAC_PI_2 - 1e-4, 0.2],
            [10.0, 20.0, 30.0],
        );
        let noise = NoiseModel::from_degrees(0.5, 0.5).unwrap();
        let obs = synthetic(&truth, 8, 5, Some(noise));
        let res = refine(&truth, &obs, &noise, &MleOptions::default(), None).unwrap();
        assert!(res.reanchored >= 1);
        assert!(res.final_nll() <= res.trace[0].nll);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn analytic_gradient_matches_finite_differences(
            seed in 0u64..10_000,
            e in proptest::array::uniform3(-1.2..1.2f64),
            t in proptest::array::uniform3(-600.0..600.0f64),
        ) {
            let truth = pose([0.4, -0.1, 1.3], [100.0, 50.0, -20.0]);
            let noise = NoiseModel::from_degrees(1.0, 4.0).unwrap();
            let obs = synthetic(&truth, 6, seed, Some(noise));
            let chart = Chart::identity();
            let x = Vector6::new(e[0], e[1], e[2], t[0], t[1], t[2]);
            let ga = gradient(&obs, &chart, &x, &noise).unwrap();
            let gf = gradient_fd(&obs, &chart, &x, &noise).unwrap();
            prop_assert!((ga - gf).norm() <= 1e-5 * ga.norm().max(1.0), "{ga} vs {gf}");
        }
    }
}
