//! End-to-end two-agent estimation: LS, SDP + Procrustes, and optional ML
//! refinement.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{rotation_constraints, select, ConstraintSet};
use crate::error::{Error, Result};
use crate::geometry::{angles_to_unit_vector, unit_vector_to_doa, Agent, FrameId, Pose, Rotation};
use crate::linear_system::{assemble, solve_ls, LinearSystem, MeasurementEpoch, PsiVector};
use crate::mle::{refine, MlState, MleOptions, MleStop, NoiseModel, Observation, TruthMetrics};
use crate::procrustes::closest_rotation;
use crate::sdp::{
    apply_shift, apply_translation_scaling, extract_psi, lift, solve_relaxed, SdpOptions,
    SolveStatus,
};

/// Rank ratio above which the relaxation is reported as not pinning down a
/// unique pose.
pub const AMBIGUOUS_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "sdp")]
    Sdp,
    #[serde(rename = "sdp+ml")]
    SdpMl,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::Sdp => "sdp",
            Method::SdpMl => "sdp+ml",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(Method::Ls),
            "sdp" | "sdp+o" => Ok(Method::Sdp),
            "sdp+ml" | "sdp+o+ml" => Ok(Method::SdpMl),
            _ => Err(Error::InvalidInput(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub method: Method,
    pub sdp: SdpOptions,
    pub constraint_set: ConstraintSet,
    /// Multiplier on the translation columns before the SDP solve; `None`
    /// uses the RMS position norm, which keeps the lifted entries near unit
    /// size.
    pub t_scale: Option<f64>,
    /// Prior translation subtracted from receiver positions before solving.
    pub t_shift: Option<Vector3<f64>>,
    pub mle: MleOptions,
    /// Noise model for the likelihood; required for [`Method::SdpMl`].
    pub noise: Option<NoiseModel>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Sdp,
            sdp: SdpOptions::default(),
            constraint_set: ConstraintSet::Full,
            t_scale: None,
            t_shift: None,
            mle: MleOptions::default(),
            noise: None,
        }
    }
}

/// Converts a body-frame reading into an INS-frame epoch for the linear and
/// SDP stages.
pub fn ins_epoch(obs: &Observation) -> Result<MeasurementEpoch> {
    let u_body = angles_to_unit_vector(obs.azimuth, obs.elevation);
    let u_ins = obs.attitude.matrix().transpose() * u_body;
    Ok(MeasurementEpoch {
        k: obs.k,
        p_a_global: obs.target_global,
        p_b_local: obs.observer_local,
        doa_ins: unit_vector_to_doa(&u_ins, FrameId::ins(Agent::B), obs.k)?,
    })
}

/// Wraps an INS-frame epoch as a body-frame reading with identity attitude.
pub fn observation_from_epoch(e: &MeasurementEpoch) -> Observation {
    Observation {
        k: e.k,
        target_global: e.p_a_global,
        observer_local: e.p_b_local,
        attitude: Rotation::identity(),
        azimuth: e.doa_ins.azimuth,
        elevation: e.doa_ins.elevation,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsDiagnostics {
    pub rank: usize,
    pub rank_deficient: bool,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpDiagnostics {
    pub objective: f64,
    pub dual_objective: f64,
    pub max_feasibility_residual: f64,
    pub rank_ratio: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub polished: bool,
    pub degenerate_top: bool,
    pub constraints: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub stop: MleStop,
    pub reanchored: usize,
    pub trace: Vec<MlState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    /// Estimated `R_{A1}^{B2}`; an exact rotation except for the LS method.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `‖AΨ - b‖` at the returned estimate.
    pub residual_norm: f64,
    pub epochs: usize,
    pub ambiguous: bool,
    pub reflection_repaired: bool,
    pub ls: Option<LsDiagnostics>,
    pub sdp: Option<SdpDiagnostics>,
    /// Unprojected SDP estimate.
    pub sdp_rotation_block: Option<Matrix3<f64>>,
    pub sdp_translation: Option<Vector3<f64>>,
    pub mle: Option<MleDiagnostics>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn pose(&self) -> Pose {
        Pose::new(
            Rotation::new_unchecked(self.rotation),
            self.translation,
            FrameId::global(),
            FrameId::ins(Agent::B),
        )
    }
}

/// RMS norm of every broadcaster and receiver position, or 1 when all
/// positions sit at the origin.
pub fn length_scale(epochs: &[MeasurementEpoch]) -> f64 {
    let n = 2 * epochs.len();
    let sum: f64 = epochs
        .iter()
        .map(|e| e.p_a_global.norm_squared() + e.p_b_local.norm_squared())
        .sum();
    let l = (sum / n.max(1) as f64).sqrt();
    if l > 0.0 && l.is_finite() {
        l
    } else {
        1.0
    }
}

fn residual_norm(sys: &LinearSystem, r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    sys.residual(&PsiVector::from_parts(r, t).to_dvector())
        .norm()
}

/// Runs the configured method on body-frame readings.
pub fn solve(
    observations: &[Observation],
    opts: &SolverOptions,
    truth: Option<TruthMetrics<'_>>,
) -> Result<SolveReport> {
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    let epochs = observations
        .iter()
        .map(ins_epoch)
        .collect::<Result<Vec<_>>>()?;
    let sys = assemble(&epochs)?;
    let mut warnings = Vec::new();

    if opts.method == Method::Ls {
        let ls = solve_ls(&sys)?;
        let psi = ls.pose_psi();
        if ls.rank_deficient {
            warnings.push(format!("linear system has rank {} < 12", ls.rank));
        }
        return Ok(SolveReport {
            method: Method::Ls,
            rotation: psi.rotation_block(),
            translation: psi.translation(),
            residual_norm: ls.residual_norm,
            epochs: epochs.len(),
            ambiguous: ls.rank_deficient,
            reflection_repaired: false,
            ls: Some(LsDiagnostics {
                rank: ls.rank,
                rank_deficient: ls.rank_deficient,
                singular_values: ls.singular_values.iter().copied().collect(),
            }),
            sdp: None,
            sdp_rotation_block: None,
            sdp_translation: None,
            mle: None,
            warnings,
        });
    }

    let shift = opts.t_shift.unwrap_or_else(Vector3::zeros);
    let shifted = if opts.t_shift.is_some() {
        apply_shift(&epochs, &shift)
    } else {
        epochs.clone()
    };
    let scale = opts.t_scale.unwrap_or_else(|| length_scale(&shifted));
    let solve_sys = apply_translation_scaling(&assemble(&shifted)?, scale)?;
    let constraints = select(rotation_constraints(), opts.constraint_set);
    let n_constraints = constraints.len();
    let problem = lift(&solve_sys, constraints);
    let sol = solve_relaxed(&problem, &opts.sdp)?;
    if sol.status != SolveStatus::Optimal {
        warnings.push(format!("SDP solver stopped with status {:?}", sol.status));
    }
    let ex = extract_psi(&sol)?;
    let mut psi = PsiVector::from_slice(&ex.psi);
    for v in psi.0[9..12].iter_mut() {
        *v *= scale;
    }
    let block = psi.rotation_block();
    let t_sdp = psi.translation() + shift;
    let proj = closest_rotation(&block);
    if proj.degenerate {
        warnings.push("rotation block has a degenerate spectrum".into());
    }
    let ambiguous = sol.rank_ratio > AMBIGUOUS_RATIO || ex.degenerate_top || proj.degenerate;
    if ambiguous {
        warnings.push(format!(
            "relaxation is not rank one (ratio {:.2e}); the pose may not be unique",
            sol.rank_ratio
        ));
    }
    if epochs.len() < 4 {
        warnings.push(format!(
            "{} epochs; at least 4 are needed for a unique pose",
            epochs.len()
        ));
    }
    let sdp = SdpDiagnostics {
        objective: sol.objective,
        dual_objective: sol.dual_objective,
        max_feasibility_residual: sol.max_feasibility_residual(),
        rank_ratio: sol.rank_ratio,
        iterations: sol.iterations,
        status: sol.status,
        polished: sol.polished,
        degenerate_top: ex.degenerate_top,
        constraints: n_constraints,
    };

    let mut rotation = *proj.rotation.matrix();
    let mut translation = t_sdp;
    let mut mle = None;
    if opts.method == Method::SdpMl {
        let noise = opts.noise.ok_or_else(|| {
            Error::InvalidInput("maximum-likelihood refinement needs a noise model".into())
        })?;
        let start = Pose::new(
            proj.rotation,
            t_sdp,
            FrameId::global(),
            FrameId::ins(Agent::B),
        );
        let res = refine(&start, observations, &noise, &opts.mle, truth)?;
        rotation = *res.rotation.matrix();
        translation = res.translation;
        mle = Some(MleDiagnostics {
            stop: res.stop,
            reanchored: res.reanchored,
            trace: res.trace,
        });
    }

    Ok(SolveReport {
        method: opts.method,
        residual_norm: residual_norm(&sys, &rotation, &translation),
        rotation,
        translation,
        epochs: epochs.len(),
        ambiguous,
        reflection_repaired: proj.reflection_repaired,
        ls: None,
        sdp: Some(sdp),
        sdp_rotation_block: Some(block),
        sdp_translation: Some(t_sdp),
        mle,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{flight_pose, FLIGHT_ROWS};
    use crate::geometry::DoaMeasurement;
    use crate::scenario::rotation_error;

    fn flight_obs() -> Vec<Observation> {
        FLIGHT_ROWS
            .iter()
            .map(|r| {
                observation_from_epoch(&MeasurementEpoch {
                    k: r.k,
                    p_a_global: r.p_a_global.into(),
                    p_b_local: r.p_b_ins.into(),
                    doa_ins: DoaMeasurement::new(r.doa[0], r.doa[1], FrameId::ins(Agent::B), r.k),
                })
            })
            .collect()
    }

    #[test]
    fn body_to_ins_round_trip() {
        let obs = Observation {
            k: 3,
            target_global: Vector3::new(1.0, 2.0, 3.0),
            observer_local: Vector3::zeros(),
            attitude: Rotation::from_euler(crate::geometry::EulerAngles::new(0.5, 0.1, -0.2)),
            azimuth: 0.3,
            elevation: -0.1,
        };
        let e = ins_epoch(&obs).unwrap();
        let back = obs.attitude.matrix() * e.doa_ins.unit_vector();
        assert!((back - angles_to_unit_vector(0.3, -0.1)).amax() < 1e-14);
        let again = ins_epoch(&observation_from_epoch(&e)).unwrap();
        assert!((again.doa_ins.unit_vector() - e.doa_ins.unit_vector()).amax() < 1e-15);
    }

    #[test]
    fn flight_example_recovers_published_pose() {
        let obs = flight_obs();
        let truth = flight_pose();
        let rep = solve(&obs, &SolverOptions::default(), None).unwrap();
        assert!(!rep.ambiguous);
        assert!(
            (rep.translation - truth.translation).norm() < 15.0,
            "{}",
            rep.translation
        );
        assert!(rotation_error(&rep.rotation, truth.rotation.matrix()) < 0.02);
        // Six epochs give a square system; LS interpolates the rounding.
        let ls = solve(
            &obs,
            &SolverOptions {
                method: Method::Ls,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(ls.ls.as_ref().unwrap().rank, 12);
        assert!(ls.residual_norm < 1e-6);
    }

    #[test]
    fn ml_needs_noise_model() {
        let obs = flight_obs();
        let r = solve(
            &obs,
            &SolverOptions {
                method: Method::SdpMl,
                ..Default::default()
            },
            None,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shift_and_scale_do_not_change_the_answer() {
        let obs = flight_obs();
        let base = solve(&obs, &SolverOptions::default(), None).unwrap();
        let tuned = solve(
            &obs,
            &SolverOptions {
                t_scale: Some(854.9),
                t_shift: Some(Vector3::new(850.0, 0.0, 0.0)),
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert!((base.rotation - tuned.rotation).amax() < 1e-6);
        assert!((base.translation - tuned.translation).amax() < 1e-4);
    }
}
