//! Synthetic flights: kinematic trajectories, constant INS drift, body-frame
//! DOA readings with Gaussian noise, plus metrics and Monte Carlo campaigns.

mod campaign;
mod diagnostics;
mod metrics;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vector_angles, wrap_angle, Agent, EulerAngles, FrameId, Pose, Rotation};
use crate::mle::Observation;

pub use campaign::{
    median, monte_carlo, run_trial, CampaignConfig, CampaignResult, CellSummary, TrialRecord,
};
pub use diagnostics::{
    detect_unsuitable, exact_solutions, Diagnostics, ExactSolution, OracleOptions, Unsuitability,
};
pub use metrics::{
    error_report, mean_separation, position_error, reconstruct_positions, rotation_error,
    ErrorReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub horizontal_separation: f64,
    pub altitude_a: f64,
    pub altitude_b: f64,
    pub altitude_c: f64,
    pub speed: f64,
    pub sample_period: f64,
    /// Per-trajectory mean turn is drawn from `U(-turn_mean_max, turn_mean_max)`.
    pub turn_mean_max: f64,
    pub turn_std: f64,
    pub climb_std: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            horizontal_separation: 800.0,
            altitude_a: 350.0,
            altitude_b: 300.0,
            altitude_c: 300.0,
            speed: 50.0,
            sample_period: 5.0,
            turn_mean_max: 40f64.to_radians(),
            turn_std: 30f64.to_radians(),
            climb_std: 5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    /// Each Euler angle is drawn from `U(-euler_max, euler_max)`.
    pub euler_max: f64,
    /// Each translation component is drawn from `U(-translation_max, translation_max)`.
    pub translation_max: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            euler_max: PI,
            translation_max: 600.0,
        }
    }
}

/// Measurement noise standard deviations in radians; zero is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub sigma_azimuth: f64,
    pub sigma_elevation: f64,
}

impl NoiseLevel {
    pub fn from_degrees(az: f64, el: f64) -> Self {
        Self {
            sigma_azimuth: az.to_radians(),
            sigma_elevation: el.to_radians(),
        }
    }
}

/// Special trajectory constructions for Agent A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    Free,
    /// A holds a constant altitude.
    PlanarA,
    /// A flies `(100 t, 0, 0)`.
    CollinearA,
    /// B flies in formation with A at a fixed offset, so every INS-frame DOA
    /// is identical.
    ParallelDoa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub k: usize,
    pub agents: usize,
    pub trajectory: TrajectoryParams,
    pub drift: DriftParams,
    pub noise: NoiseLevel,
    pub shape: Shape,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 6,
            agents: 2,
            trajectory: TrajectoryParams::default(),
            drift: DriftParams::default(),
            noise: NoiseLevel::default(),
            shape: Shape::Free,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: Agent,
    /// Frame the positions are expressed in, e.g. "A1" or "B2".
    pub frame: String,
    pub positions: Vec<Vector3<f64>>,
    /// Euler angles of the native-frame to body-frame rotation per epoch.
    pub attitudes: Vec<EulerAngles>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub agent: Agent,
    /// Euler angles of `R_{A1}^{X2}`.
    pub euler: EulerAngles,
    /// `t_{A1}^{X2}`, metres.
    pub t: Vector3<f64>,
}

impl DriftRecord {
    pub fn pose(&self) -> Pose {
        Pose::new(
            Rotation::from_euler(self.euler),
            self.t,
            FrameId::global(),
            FrameId::ins(self.agent),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_az_deg: f64,
    pub sigma_el_deg: f64,
}

/// Body-frame DOA of `target` as seen by `observer`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub k: usize,
    pub observer: Agent,
    pub target: Agent,
    pub azimuth: f64,
    pub elevation: f64,
    pub true_azimuth: f64,
    pub true_elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub agents: Vec<AgentRecord>,
    pub drift: Vec<DriftRecord>,
    pub noise: NoiseSpec,
    pub measurements: Vec<Reading>,
}

struct Track {
    positions: Vec<Vector3<f64>>,
    headings: Vec<f64>,
    climbs: Vec<f64>,
}

fn fly(
    rng: &mut ChaCha8Rng,
    start: Vector3<f64>,
    k: usize,
    p: &TrajectoryParams,
    level: bool,
) -> Track {
    let mut heading = rng.gen_range(0.0..2.0 * PI);
    let turn_mean = rng.gen_range(-p.turn_mean_max..=p.turn_mean_max);
    let turn = Normal::new(turn_mean, p.turn_std).expect("finite turn parameters");
    let climb_dist = Normal::new(0.0, p.climb_std).expect("finite climb parameters");
    let step = p.speed * p.sample_period;
    let mut pos = start;
    let mut track = Track {
        positions: Vec::with_capacity(k),
        headings: Vec::with_capacity(k),
        climbs: Vec::with_capacity(k),
    };
    for _ in 0..k {
        let climb: f64 = climb_dist.sample(rng);
        let climb = if level { 0.0 } else { climb };
        track.positions.push(pos);
        track.headings.push(heading);
        track.climbs.push(climb);
        let (sh, ch) = heading.sin_cos();
        let (sc, cc) = climb.sin_cos();
        pos += Vector3::new(cc * ch, cc * sh, sc) * step;
        heading = wrap_angle(heading + turn.sample(rng));
    }
    track
}

/// `R_{A1}^{X4}`: body x along the velocity, z up for level flight.
fn body_attitude(heading: f64, climb: f64) -> Matrix3<f64> {
    (EulerAngles::new(heading, -climb, 0.0).matrix()).transpose()
}

fn sample_drift(rng: &mut ChaCha8Rng, agent: Agent, d: &DriftParams) -> DriftRecord {
    let mut u = |m: f64| if m > 0.0 { rng.gen_range(-m..m) } else { 0.0 };
    let euler = EulerAngles::new(u(d.euler_max), u(d.euler_max), u(d.euler_max));
    let t = Vector3::new(
        u(d.translation_max),
        u(d.translation_max),
        u(d.translation_max),
    );
    DriftRecord { agent, euler, t }
}

/// Builds a scenario deterministically from `seed`.
///
/// Random draws happen in a fixed order (drift, trajectories, unit noise) so
/// that scenarios differing only in noise level or in the number of epochs
/// share trajectories and standardised noise.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    if cfg.k == 0 {
        return Err(Error::EmptyInput);
    }
    if !(cfg.agents == 2 || cfg.agents == 3) {
        return Err(Error::InvalidInput(format!(
            "{} agents; 2 or 3 supported",
            cfg.agents
        )));
    }
    if cfg.agents == 3 && cfg.shape != Shape::Free {
        return Err(Error::InvalidInput(
            "special shapes are two-agent constructions".into(),
        ));
    }
    let p = &cfg.trajectory;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let denied: Vec<Agent> = if cfg.agents == 3 {
        vec![Agent::B, Agent::C]
    } else {
        vec![Agent::B]
    };
    let drift: Vec<DriftRecord> = denied
        .iter()
        .map(|a| sample_drift(&mut rng, *a, &cfg.drift))
        .collect();

    let bearing = rng.gen_range(0.0..2.0 * PI);
    let a_start = Vector3::new(0.0, 0.0, p.altitude_a);
    let offset = |b: f64, alt: f64| {
        Vector3::new(
            p.horizontal_separation * b.cos(),
            p.horizontal_separation * b.sin(),
            alt,
        )
    };

    let mut track_a = fly(&mut rng, a_start, cfg.k, p, cfg.shape == Shape::PlanarA);
    if cfg.shape == Shape::CollinearA {
        track_a.positions = (0..cfg.k)
            .map(|i| Vector3::new(100.0 * i as f64 * p.sample_period, 0.0, 0.0))
            .collect();
        track_a.headings = vec![0.0; cfg.k];
        track_a.climbs = vec![0.0; cfg.k];
    }
    let mut tracks = vec![(Agent::A, track_a)];
    let b_start = offset(bearing, p.altitude_b);
    let track_b = if cfg.shape == Shape::ParallelDoa {
        let a = &tracks[0].1;
        let rel = b_start - a_start;
        Track {
            positions: a.positions.iter().map(|x| x + rel).collect(),
            headings: a.headings.clone(),
            climbs: a.climbs.clone(),
        }
    } else {
        fly(&mut rng, b_start, cfg.k, p, false)
    };
    tracks.push((Agent::B, track_b));
    if cfg.agents == 3 {
        let c_start = offset(bearing + 2.0 * PI / 3.0, p.altitude_c);
        tracks.push((Agent::C, fly(&mut rng, c_start, cfg.k, p, false)));
    }

    let drift_of = |a: Agent| drift.iter().find(|d| d.agent == a).map(|d| d.pose());
    let global = |a: Agent| {
        &tracks
            .iter()
            .find(|(x, _)| *x == a)
            .expect("agent present")
            .1
    };

    let mut agents = Vec::new();
    for (agent, track) in &tracks {
        let (frame, positions, attitudes) = match drift_of(*agent) {
            None => (
                FrameId::global(),
                track.positions.clone(),
                (0..cfg.k)
                    .map(|i| {
                        EulerAngles::from_matrix(&body_attitude(track.headings[i], track.climbs[i]))
                    })
                    .collect(),
            ),
            Some(pose) => (
                FrameId::ins(*agent),
                track
                    .positions
                    .iter()
                    .map(|x| pose.transform_point(x))
                    .collect(),
                (0..cfg.k)
                    .map(|i| {
                        let r = body_attitude(track.headings[i], track.climbs[i])
                            * pose.rotation.matrix().transpose();
                        EulerAngles::from_matrix(&r)
                    })
                    .collect(),
            ),
        };
        agents.push(AgentRecord {
            id: *agent,
            frame: frame.to_string(),
            positions,
            attitudes,
        });
    }

    let pairs: Vec<(Agent, Agent)> = if cfg.agents == 3 {
        vec![
            (Agent::B, Agent::A),
            (Agent::C, Agent::A),
            (Agent::B, Agent::C),
        ]
    } else {
        vec![(Agent::B, Agent::A)]
    };
    let mut measurements = Vec::new();
    for i in 0..cfg.k {
        for (obs, tgt) in &pairs {
            let to = global(*obs);
            let v = body_attitude(to.headings[i], to.climbs[i])
                * (global(*tgt).positions[i] - to.positions[i]);
            let (az, el) = vector_angles(&v)?;
            measurements.push(Reading {
                k: i + 1,
                observer: *obs,
                target: *tgt,
                azimuth: az,
                elevation: el,
                true_azimuth: az,
                true_elevation: el,
            });
        }
    }
    for m in &mut measurements {
        let za: f64 = StandardNormal.sample(&mut rng);
        let ze: f64 = StandardNormal.sample(&mut rng);
        m.azimuth = wrap_angle(m.true_azimuth + cfg.noise.sigma_azimuth * za);
        m.elevation = m.true_elevation + cfg.noise.sigma_elevation * ze;
    }

    Ok(Scenario {
        seed,
        agents,
        drift,
        noise: NoiseSpec {
            sigma_az_deg: cfg.noise.sigma_azimuth.to_degrees(),
            sigma_el_deg: cfg.noise.sigma_elevation.to_degrees(),
        },
        measurements,
    })
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.agents.first().map_or(0, |a| a.positions.len())
    }

    pub fn agent(&self, id: Agent) -> Result<&AgentRecord> {
        self.agents
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("scenario has no agent {id}")))
    }

    pub fn truth_pose(&self, id: Agent) -> Result<Pose> {
        self.drift
            .iter()
            .find(|d| d.agent == id)
            .map(|d| d.pose())
            .ok_or_else(|| Error::InvalidInput(format!("scenario has no drift for agent {id}")))
    }

    /// Global positions of `id`, mapped through the true drift when needed.
    pub fn global_positions(&self, id: Agent) -> Result<Vec<Vector3<f64>>> {
        let rec = self.agent(id)?;
        if id == Agent::A {
            return Ok(rec.positions.clone());
        }
        let inv = self.truth_pose(id)?.inverse();
        Ok(rec
            .positions
            .iter()
            .map(|p| inv.transform_point(p))
            .collect())
    }

    pub fn readings(&self, observer: Agent, target: Agent) -> Vec<&Reading> {
        self.measurements
            .iter()
            .filter(|m| m.observer == observer && m.target == target)
            .collect()
    }

    /// Body-frame readings of A by `observer`, ready for the two-agent solver.
    pub fn observations(&self, observer: Agent) -> Result<Vec<Observation>> {
        self.pair_observations(observer, Agent::A)
    }

    /// Readings from `observer` toward `target`, with the target placed at
    /// its stored (own-frame) position.
    pub fn pair_observations(&self, observer: Agent, target: Agent) -> Result<Vec<Observation>> {
        let a = self.agent(target)?;
        let o = self.agent(observer)?;
        self.readings(observer, target)
            .into_iter()
            .map(|m| {
                let i = m.k - 1;
                if i >= a.positions.len() || i >= o.positions.len() {
                    return Err(Error::InvalidInput(format!(
                        "reading for missing epoch {}",
                        m.k
                    )));
                }
                Ok(Observation {
                    k: m.k,
                    target_global: a.positions[i],
                    observer_local: o.positions[i],
                    attitude: Rotation::from_euler(o.attitudes[i]),
                    azimuth: m.azimuth,
                    elevation: m.elevation,
                })
            })
            .collect()
    }

    /// Keeps the first `k` epochs.
    pub fn truncate(&self, k: usize) -> Scenario {
        let mut s = self.clone();
        for a in &mut s.agents {
            a.positions.truncate(k);
            a.attitudes.truncate(k);
        }
        s.measurements.retain(|m| m.k <= k);
        s
    }

    /// Largest deviation between stored noiseless readings and readings
    /// recomputed from positions, attitudes and the true drift.
    pub fn self_consistency(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for m in &self.measurements {
            let i = m.k - 1;
            let obs = self.agent(m.observer)?;
            let p_obs = self.global_positions(m.observer)?[i];
            let p_tgt = self.global_positions(m.target)?[i];
            let to_local = match m.observer {
                Agent::A => Matrix3::identity(),
                other => *self.truth_pose(other)?.rotation.matrix(),
            };
            let v = Rotation::from_euler(obs.attitudes[i]).matrix() * to_local * (p_tgt - p_obs);
            let (az, el) = vector_angles(&v)?;
            worst = worst
                .max(wrap_angle(az - m.true_azimuth).abs())
                .max((el - m.true_elevation).abs());
        }
        Ok(worst)
    }

    /// Metrics of an estimate of `R_{A1}^{X2}, t_{A1}^{X2}` for agent `id`.
    pub fn errors(
        &self,
        id: Agent,
        rotation: &Matrix3<f64>,
        translation: &Vector3<f64>,
    ) -> Result<ErrorReport> {
        let truth = self.truth_pose(id)?;
        Ok(error_report(
            rotation,
            translation,
            truth.rotation.matrix(),
            &self.agent(id)?.positions,
            &self.global_positions(id)?,
            &self.agent(Agent::A)?.positions,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        for a in &self.agents {
            if a.positions.len() != k || a.attitudes.len() != k {
                return Err(Error::InvalidInput(format!(
                    "agent {} has inconsistent epoch counts",
                    a.id
                )));
            }
        }
        if self.agent(Agent::A).is_err() || self.agent(Agent::B).is_err() {
            return Err(Error::InvalidInput("scenario needs agents A and B".into()));
        }
        for m in &self.measurements {
            if m.k == 0 || m.k > k {
                return Err(Error::InvalidInput(format!(
                    "reading at epoch {} outside 1..={k}",
                    m.k
                )));
            }
        }
        Ok(())
    }
}

/// Per-trial seed derived from a master seed and a counter.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // SplitMix64 finaliser over the combined words.
    let mut z = master
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
