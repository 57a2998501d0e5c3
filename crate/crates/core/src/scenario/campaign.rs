//! Seeded Monte Carlo campaigns over noise level and number of epochs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Agent;
use crate::mle::NoiseModel;
use crate::pipeline::{solve, Method, SolverOptions};
use crate::procrustes::closest_rotation;

use super::{derive_seed, generate_scenario, NoiseLevel, ScenarioConfig};

/// Noise model floor used for the likelihood when the data are noiseless.
const MIN_MODEL_SIGMA_DEG: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Azimuth standard deviations, degrees.
    pub sigmas_deg: Vec<f64>,
    /// Elevation standard deviation as a multiple of the azimuth one.
    #[serde(default = "default_el_ratio")]
    pub elevation_ratio: f64,
    /// Inclusive range of epoch counts.
    pub k_range: [usize; 2],
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

fn default_el_ratio() -> f64 {
    4.0
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            sigmas_deg: vec![0.1, 1.0, 2.0],
            elevation_ratio: 4.0,
            k_range: [2, 20],
            trials: 100,
            seed: 1,
            methods: vec![Method::Sdp, Method::SdpMl],
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.k_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidInput(format!("bad epoch range {lo}..={hi}")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.sigmas_deg.is_empty() || self.sigmas_deg.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput(
                "sigmas must be non-negative and non-empty".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        if !(self.elevation_ratio >= 0.0) {
            return Err(Error::InvalidInput(
                "elevation ratio must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sigma_az_deg: f64,
    pub k: usize,
    pub trial: usize,
    pub method: Method,
    pub rotation_error_deg: f64,
    pub position_error: f64,
    pub ambiguous: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub sigma_az_deg: f64,
    pub sigma_el_deg: f64,
    pub k: usize,
    pub method: Method,
    pub median_rot_err_deg: f64,
    pub median_pos_err: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One trajectory pair at one noise level, solved for every `K` in range.
pub fn run_trial(
    cfg: &CampaignConfig,
    sigma_deg: f64,
    trial: usize,
    opts: &SolverOptions,
) -> Vec<TrialRecord> {
    let [k_lo, k_hi] = cfg.k_range;
    let noise = NoiseLevel::from_degrees(sigma_deg, sigma_deg * cfg.elevation_ratio);
    let scenario_cfg = ScenarioConfig {
        k: k_hi,
        noise,
        ..Default::default()
    };
    let seed = derive_seed(cfg.seed, trial as u64);
    let want_ml = cfg.methods.contains(&Method::SdpMl);
    let want_sdp = cfg.methods.contains(&Method::Sdp);
    let want_ls = cfg.methods.contains(&Method::Ls);
    let model = NoiseModel::from_degrees(
        sigma_deg.max(MIN_MODEL_SIGMA_DEG),
        (sigma_deg * cfg.elevation_ratio).max(MIN_MODEL_SIGMA_DEG),
    )
    .expect("positive model sigmas");

    let mut out = Vec::new();
    let failed = |k: usize, method: Method| TrialRecord {
        sigma_az_deg: sigma_deg,
        k,
        trial,
        method,
        rotation_error_deg: f64::NAN,
        position_error: f64::NAN,
        ambiguous: false,
        failed: true,
    };
    let full = match generate_scenario(&scenario_cfg, seed) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("trial {trial}: scenario generation failed: {e}");
            for k in k_lo..=k_hi {
                for m in &cfg.methods {
                    out.push(failed(k, *m));
                }
            }
            return out;
        }
    };

    for k in k_lo..=k_hi {
        let s = full.truncate(k);
        let obs = match s.observations(Agent::B) {
            Ok(o) => o,
            Err(_) => {
                for m in &cfg.methods {
                    out.push(failed(k, *m));
                }
                continue;
            }
        };
        let record = |method: Method,
                      r: &nalgebra::Matrix3<f64>,
                      t: &nalgebra::Vector3<f64>,
                      ambiguous: bool| {
            match s.errors(Agent::B, r, t) {
                Ok(e) => TrialRecord {
                    sigma_az_deg: sigma_deg,
                    k,
                    trial,
                    method,
                    rotation_error_deg: e.rotation_error_rad.to_degrees(),
                    position_error: e.position_error,
                    ambiguous,
                    failed: false,
                },
                Err(_) => failed(k, method),
            }
        };
        if want_ls {
            let o = SolverOptions {
                method: Method::Ls,
                ..*opts
            };
            match solve(&obs, &o, None) {
                Ok(rep) => out.push(record(
                    Method::Ls,
                    &rep.rotation,
                    &rep.translation,
                    rep.ambiguous,
                )),
                Err(_) => out.push(failed(k, Method::Ls)),
            }
        }
        if want_sdp || want_ml {
            let method = if want_ml { Method::SdpMl } else { Method::Sdp };
            let o = SolverOptions {
                method,
                noise: Some(model),
                ..*opts
            };
            match solve(&obs, &o, None) {
                Ok(rep) => {
                    if want_sdp {
                        let block = rep.sdp_rotation_block.expect("SDP method");
                        let r = *closest_rotation(&block).rotation.matrix();
                        out.push(record(
                            Method::Sdp,
                            &r,
                            &rep.sdp_translation.expect("SDP method"),
                            rep.ambiguous,
                        ));
                    }
                    if want_ml {
                        out.push(record(
                            Method::SdpMl,
                            &rep.rotation,
                            &rep.translation,
                            rep.ambiguous,
                        ));
                    }
                }
                Err(e) => {
                    log::debug!("trial {trial}, K={k}: {e}");
                    if want_sdp {
                        out.push(failed(k, Method::Sdp));
                    }
                    if want_ml {
                        out.push(failed(k, Method::SdpMl));
                    }
                }
            }
        }
    }
    out
}

/// Runs every (noise level, trial) job in parallel and aggregates medians.
/// Output depends only on the configuration, not on scheduling.
pub fn monte_carlo(cfg: &CampaignConfig, opts: &SolverOptions) -> Result<CampaignResult> {
    cfg.validate()?;
    let jobs: Vec<(f64, usize)> = cfg
        .sigmas_deg
        .iter()
        .flat_map(|s| (0..cfg.trials).map(move |t| (*s, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|(s, t)| run_trial(cfg, *s, *t, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut cells = Vec::new();
    for &sigma in &cfg.sigmas_deg {
        for k in cfg.k_range[0]..=cfg.k_range[1] {
            for &method in &cfg.methods {
                let sel: Vec<&TrialRecord> = records
                    .iter()
                    .filter(|r| r.sigma_az_deg == sigma && r.k == k && r.method == method)
                    .collect();
                let ok: Vec<&&TrialRecord> = sel.iter().filter(|r| !r.failed).collect();
                let mut rot: Vec<f64> = ok.iter().map(|r| r.rotation_error_deg).collect();
                let mut pos: Vec<f64> = ok.iter().map(|r| r.position_error).collect();
                cells.push(CellSummary {
                    sigma_az_deg: sigma,
                    sigma_el_deg: sigma * cfg.elevation_ratio,
                    k,
                    method,
                    median_rot_err_deg: median(&mut rot),
                    median_pos_err: median(&mut pos),
                    trials: sel.len(),
                    failures: sel.len() - ok.len(),
                });
            }
        }
    }
    Ok(CampaignResult { records, cells })
}

impl CampaignResult {
    /// Summary table as CSV.
    pub fn cells_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(c)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn cell(&self, sigma: f64, k: usize, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.sigma_az_deg == sigma && c.k == k && c.method == method)
    }
}
