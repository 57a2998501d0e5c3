use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use doaloc::dataset::{perturb_epochs, MeasurementRow, TruthFile};
use doaloc::error::Error;
use doaloc::geometry::{Agent, EulerAngles, Rotation};
use doaloc::linear_system::MeasurementEpoch;
use doaloc::mle::{MlState, MleOptions, NoiseModel, Observation};
use doaloc::pipeline::{
    ins_epoch, observation_from_epoch, solve, Method, SolveReport, SolverOptions,
};
use doaloc::scenario::{
    detect_unsuitable, error_report, exact_solutions, generate_scenario, mean_separation,
    position_error, rotation_error, CampaignConfig, CampaignResult, CellSummary, NoiseLevel,
    OracleOptions, Scenario, ScenarioConfig, Shape,
};
use doaloc::sdp::SdpOptions;
use doaloc::three_agent::{solve_tri, tri_inputs, TriOptions};

use crate::args::{
    Cli, DiagnoseArgs, GenerateArgs, MonteCarloArgs, SolveArgs, SolverArgs, TriSolveArgs,
};
use crate::svg::{LineChart, Series};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    Solver(String),
    Degenerate(String),
    Config(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Solver(_) => 1,
            Failure::Degenerate(_) => 2,
            Failure::Config(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Solver(m) | Failure::Degenerate(m) | Failure::Config(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Solver(_) | Error::Infeasible(_) | Error::NotARotation(_) => {
                Failure::Solver(msg)
            }
            Error::DegenerateVector(_) | Error::TooFewEpochs { .. } => Failure::Degenerate(msg),
            _ => Failure::Config(msg),
        }
    }
}

fn config<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Config(format!("{context}: {e}"))
}

type CmdResult = std::result::Result<(), Failure>;

fn angle(x: f64, degrees: bool) -> f64 {
    if degrees {
        x.to_degrees()
    } else {
        x
    }
}

fn unit(degrees: bool) -> &'static str {
    if degrees {
        "deg"
    } else {
        "rad"
    }
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::result::Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(config(&dir.display().to_string()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(config(&path.display().to_string()))?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> std::result::Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(config("serialising output"))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(config(&path.display().to_string()))
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn load_scenario(path: &Path) -> std::result::Result<Scenario, Failure> {
    Scenario::from_json(&read_text(path)?).map_err(config(&path.display().to_string()))
}

fn read_csv_epochs(
    path: &Path,
    degrees: bool,
) -> std::result::Result<Vec<MeasurementEpoch>, Failure> {
    let file = fs::File::open(path).map_err(config(&path.display().to_string()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in rdr.deserialize::<MeasurementRow>() {
        let mut row = row.map_err(config(&path.display().to_string()))?;
        if degrees {
            row.theta_rad = row.theta_rad.to_radians();
            row.phi_rad = row.phi_rad.to_radians();
        }
        out.push(
            row.to_epoch()
                .map_err(config(&path.display().to_string()))?,
        );
    }
    if out.is_empty() {
        return Err(Failure::Config(format!(
            "{}: no measurement rows",
            path.display()
        )));
    }
    Ok(out)
}

/// Everything needed to score an estimate of B's pose.
struct Truth {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    p_local: Vec<Vector3<f64>>,
    p_global: Vec<Vector3<f64>>,
    p_broadcaster: Vec<Vector3<f64>>,
}

impl Truth {
    fn metrics(&self, r: &Matrix3<f64>, t: &Vector3<f64>, degrees: bool) -> Metrics {
        let e = error_report(
            r,
            t,
            &self.rotation,
            &self.p_local,
            &self.p_global,
            &self.p_broadcaster,
        );
        let mean_m = e
            .reconstructed
            .iter()
            .zip(&self.p_global)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / self.p_global.len().max(1) as f64;
        Metrics {
            rotation_error: angle(e.rotation_error_rad, degrees),
            position_error: e.position_error,
            mean_position_error_m: mean_m,
            translation_error_m: (t - self.translation).norm(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Metrics {
    rotation_error: f64,
    /// Mean reconstruction error over mean broadcaster-receiver distance.
    position_error: f64,
    mean_position_error_m: f64,
    translation_error_m: f64,
}

struct Input {
    observations: Vec<Observation>,
    truth: Option<Truth>,
    noise_hint: Option<NoiseSpecOut>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct NoiseSpecOut {
    sigma_az_deg: f64,
    sigma_el_deg: f64,
}

fn sigmas(args: &SolverArgs) -> Option<NoiseSpecOut> {
    // A missing elevation sigma defaults to four times the azimuth one.
    match (args.sigma_az_deg, args.sigma_el_deg) {
        (Some(a), Some(e)) => Some(NoiseSpecOut {
            sigma_az_deg: a,
            sigma_el_deg: e,
        }),
        (Some(a), None) => Some(NoiseSpecOut {
            sigma_az_deg: a,
            sigma_el_deg: 4.0 * a,
        }),
        (None, Some(e)) => Some(NoiseSpecOut {
            sigma_az_deg: e / 4.0,
            sigma_el_deg: e,
        }),
        (None, None) => None,
    }
}

fn scenario_truth(s: &Scenario, agent: Agent) -> std::result::Result<Truth, Failure> {
    let pose = s.truth_pose(agent)?;
    Ok(Truth {
        rotation: *pose.rotation.matrix(),
        translation: pose.translation,
        p_local: s.agent(agent)?.positions.clone(),
        p_global: s.global_positions(agent)?,
        p_broadcaster: s.agent(Agent::A)?.positions.clone(),
    })
}

/// Loads readings for B. CSV readings get seeded noise when `inject` is set.
fn load_input(
    path: &Path,
    truth_path: Option<&Path>,
    degrees: bool,
    inject: Option<(NoiseSpecOut, u64)>,
) -> std::result::Result<(Input, Option<NoiseSpecOut>), Failure> {
    if is_json(path) {
        let s = load_scenario(path)?;
        let hint =
            (s.noise.sigma_az_deg > 0.0 && s.noise.sigma_el_deg > 0.0).then_some(NoiseSpecOut {
                sigma_az_deg: s.noise.sigma_az_deg,
                sigma_el_deg: s.noise.sigma_el_deg,
            });
        let input = Input {
            observations: s.observations(Agent::B)?,
            truth: Some(scenario_truth(&s, Agent::B)?),
            noise_hint: hint,
        };
        return Ok((input, None));
    }
    let mut epochs = read_csv_epochs(path, degrees)?;
    let mut injected = None;
    if let Some((n, seed)) = inject {
        let level = NoiseLevel::from_degrees(n.sigma_az_deg, n.sigma_el_deg);
        epochs = perturb_epochs(&epochs, &level, seed)?;
        injected = Some(n);
    }
    let truth = match truth_path {
        Some(p) => {
            let t: TruthFile =
                serde_json::from_str(&read_text(p)?).map_err(config(&p.display().to_string()))?;
            Rotation::with_tolerance(t.rotation, 1e-6).map_err(config(&p.display().to_string()))?;
            let p_local: Vec<Vector3<f64>> = epochs.iter().map(|e| e.p_b_local).collect();
            let p_global = if t.p_global.is_empty() {
                p_local
                    .iter()
                    .map(|p| t.rotation.transpose() * (p - t.translation))
                    .collect()
            } else if t.p_global.len() == epochs.len() {
                t.p_global.clone()
            } else {
                return Err(Failure::Config(format!(
                    "{}: {} true positions for {} epochs",
                    p.display(),
                    t.p_global.len(),
                    epochs.len()
                )));
            };
            Some(Truth {
                rotation: t.rotation,
                translation: t.translation,
                p_local,
                p_global,
                p_broadcaster: epochs.iter().map(|e| e.p_a_global).collect(),
            })
        }
        None => None,
    };
    let input = Input {
        observations: epochs.iter().map(observation_from_epoch).collect(),
        truth,
        noise_hint: None,
    };
    Ok((input, injected))
}

fn solver_options(
    args: &SolverArgs,
    method: Method,
) -> std::result::Result<SolverOptions, Failure> {
    let mut sdp = SdpOptions::default();
    if let Some(t) = args.sdp_tol {
        if !(t > 0.0) {
            return Err(Failure::Config(format!(
                "--sdp-tol must be positive, got {t}"
            )));
        }
        sdp.ipm.gap_tol = t;
    }
    if let Some(m) = args.sdp_max_iter {
        sdp.ipm.max_iter = m;
    }
    sdp.polish = !args.no_polish;
    let mut mle = MleOptions::default();
    if let Some(m) = args.mle_max_iter {
        mle.max_iter = m;
    }
    if let Some(g) = args.mle_grad_tol {
        mle.grad_tol = g;
    }
    let t_shift = match args.t_shift.as_deref() {
        None => None,
        Some([x, y, z]) => Some(Vector3::new(*x, *y, *z)),
        Some(v) => {
            return Err(Failure::Config(format!(
                "--t-shift needs three values x,y,z, got {}",
                v.len()
            )))
        }
    };
    Ok(SolverOptions {
        method,
        sdp,
        constraint_set: args.constraint_set.into(),
        t_scale: args.t_scale,
        t_shift,
        mle,
        noise: None,
    })
}

fn noise_model(n: NoiseSpecOut) -> std::result::Result<NoiseModel, Failure> {
    NoiseModel::from_degrees(n.sigma_az_deg, n.sigma_el_deg).map_err(Failure::from)
}

#[derive(Serialize)]
struct Residuals {
    linear_residual_norm: f64,
    sdp_max_feasibility: Option<f64>,
    /// Largest entry of `RᵀR - I`.
    orthogonality_defect: f64,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    method: &'static str,
    angle_unit: &'static str,
    #[serde(rename = "R_est")]
    r_est: [[f64; 3]; 3],
    t_est: [f64; 3],
    /// Yaw, pitch, roll of `R_est`.
    euler_est: [f64; 3],
    residuals: Residuals,
    rank_ratio: Option<f64>,
    ambiguous: bool,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mle_trace: Option<&'a [MlState]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_injected: Option<NoiseSpecOut>,
    details: &'a SolveReport,
}

fn trajectory_csv(report: &SolveReport, input: &Input) -> std::result::Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let truth = input.truth.as_ref();
    let mut header = vec!["k", "x", "y", "z"];
    if truth.is_some() {
        header.extend(["x_true", "y_true", "z_true", "error_m"]);
    }
    w.write_record(&header).map_err(config("trajectory CSV"))?;
    for (i, o) in input.observations.iter().enumerate() {
        let p = report.rotation.transpose() * (o.observer_local - report.translation);
        let mut rec = vec![
            o.k.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
        ];
        if let Some(t) = truth {
            let q = t.p_global[i];
            rec.extend([
                q.x.to_string(),
                q.y.to_string(),
                q.z.to_string(),
                (p - q).norm().to_string(),
            ]);
        }
        w.write_record(&rec).map_err(config("trajectory CSV"))?;
    }
    let bytes = w.into_inner().map_err(config("trajectory CSV"))?;
    String::from_utf8(bytes).map_err(config("trajectory CSV"))
}

pub fn cmd_solve(cli: &Cli, args: &SolveArgs) -> CmdResult {
    let mut method: Method = args.method.into();
    if args.no_mle && method == Method::SdpMl {
        method = Method::Sdp;
    }
    let requested = sigmas(&args.solver);
    let inject = match (requested, cli.seed) {
        (Some(n), Some(seed)) if !is_json(&args.input) => Some((n, seed)),
        _ => None,
    };
    let (input, injected) = load_input(&args.input, args.truth.as_deref(), cli.degrees, inject)?;
    let mut opts = solver_options(&args.solver, method)?;
    if method == Method::SdpMl {
        let n = requested.or(input.noise_hint).ok_or_else(|| {
            Failure::Config("sdp+ml needs --sigma-az-deg/--sigma-el-deg for the likelihood".into())
        })?;
        opts.noise = Some(noise_model(n)?);
    }

    let truth_fn = input.truth.as_ref().map(|t| {
        move |r: &Rotation, tr: &Vector3<f64>| {
            let d = mean_separation(&t.p_broadcaster, &t.p_global);
            (
                rotation_error(r.matrix(), &t.rotation),
                position_error(r.matrix(), tr, &t.p_local, &t.p_global, d),
            )
        }
    });
    let report = match &truth_fn {
        Some(f) => solve(&input.observations, &opts, Some(f)),
        None => solve(&input.observations, &opts, None),
    }?;

    let r = report.rotation;
    let euler = EulerAngles::from_matrix(&r);
    let out = SolveOutput {
        method: report.method.name(),
        angle_unit: unit(cli.degrees),
        r_est: rows(&r),
        t_est: [
            report.translation.x,
            report.translation.y,
            report.translation.z,
        ],
        euler_est: [
            angle(euler.yaw, cli.degrees),
            angle(euler.pitch, cli.degrees),
            angle(euler.roll, cli.degrees),
        ],
        residuals: Residuals {
            linear_residual_norm: report.residual_norm,
            sdp_max_feasibility: report.sdp.as_ref().map(|s| s.max_feasibility_residual),
            orthogonality_defect: (r.transpose() * r - Matrix3::identity()).amax(),
        },
        rank_ratio: report.sdp.as_ref().map(|s| s.rank_ratio),
        ambiguous: report.ambiguous,
        warnings: &report.warnings,
        metrics: input
            .truth
            .as_ref()
            .map(|t| t.metrics(&r, &report.translation, cli.degrees)),
        mle_trace: report.mle.as_ref().map(|m| m.trace.as_slice()),
        noise_injected: injected,
        details: &report,
    };
    let report_path = write_file(&cli.out_dir, "report.json", &to_json(&out)?)?;
    let traj_path = write_file(
        &cli.out_dir,
        "trajectory.csv",
        &trajectory_csv(&report, &input)?,
    )?;
    println!("method {}", report.method.name());
    println!(
        "t_est {:.6} {:.6} {:.6}",
        report.translation.x, report.translation.y, report.translation.z
    );
    if let Some(m) = &out.metrics {
        println!(
            "rotation error {:.6e} {}, translation error {:.6e} m, position error {:.6e}",
            m.rotation_error,
            unit(cli.degrees),
            m.translation_error_m,
            m.position_error
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} and {}",
        report_path.display(),
        traj_path.display()
    );

    if let Some(ls) = &report.ls {
        if ls.rank_deficient {
            return Err(Failure::Degenerate(format!(
                "RankDeficient: linear system has rank {} < 12",
                ls.rank
            )));
        }
    }
    if report.ambiguous {
        return Err(Failure::Degenerate(
            "Ambiguous: the relaxation did not return a rank-one solution".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct AgentEstimate {
    #[serde(rename = "R_est")]
    r_est: [[f64; 3]; 3],
    t_est: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<Metrics>,
}

#[derive(Serialize)]
struct TriOutput<'a> {
    angle_unit: &'static str,
    b: AgentEstimate,
    c: AgentEstimate,
    #[serde(rename = "R_cb_est")]
    r_cb_est: [[f64; 3]; 3],
    t_cb_est: [f64; 3],
    details: &'a doaloc::three_agent::TriReport,
}

pub fn cmd_tri_solve(cli: &Cli, args: &TriSolveArgs) -> CmdResult {
    let s = load_scenario(&args.input)?;
    if s.agents.len() != 3 {
        return Err(Failure::Config(format!(
            "{}: tri-solve needs a three-agent scenario",
            args.input.display()
        )));
    }
    let (epochs, obs) = tri_inputs(&s)?;
    let base = solver_options(&args.solver, Method::Sdp)?;
    let mle = if args.mle {
        let hint = (s.noise.sigma_az_deg > 0.0).then_some(NoiseSpecOut {
            sigma_az_deg: s.noise.sigma_az_deg,
            sigma_el_deg: s.noise.sigma_el_deg,
        });
        let n = sigmas(&args.solver)
            .or(hint)
            .ok_or_else(|| Failure::Config("--mle needs --sigma-az-deg/--sigma-el-deg".into()))?;
        Some((noise_model(n)?, base.mle))
    } else {
        None
    };
    let opts = TriOptions {
        sdp: base.sdp,
        length_scale: args.length_scale,
        mle,
    };
    let rep = solve_tri(&epochs, &opts, Some(&obs))?;
    let est = |agent: Agent,
               r: &Matrix3<f64>,
               t: &Vector3<f64>|
     -> std::result::Result<AgentEstimate, Failure> {
        let truth = scenario_truth(&s, agent)?;
        Ok(AgentEstimate {
            r_est: rows(r),
            t_est: [t.x, t.y, t.z],
            metrics: Some(truth.metrics(r, t, cli.degrees)),
        })
    };
    let out = TriOutput {
        angle_unit: unit(cli.degrees),
        b: est(Agent::B, &rep.rotation_b, &rep.translation_b)?,
        c: est(Agent::C, &rep.rotation_c, &rep.translation_c)?,
        r_cb_est: rows(&rep.rotation_cb),
        t_cb_est: [
            rep.translation_cb.x,
            rep.translation_cb.y,
            rep.translation_cb.z,
        ],
        details: &rep,
    };
    let path = write_file(&cli.out_dir, "tri_report.json", &to_json(&out)?)?;
    for (name, e) in [("B", &out.b), ("C", &out.c)] {
        if let Some(m) = &e.metrics {
            println!(
                "{name}: rotation error {:.6e} {}, translation error {:.6e} m",
                m.rotation_error,
                unit(cli.degrees),
                m.translation_error_m
            );
        }
    }
    println!(
        "{} scalar readings, composition residual {:.3e}, translation residual {:.3e}",
        rep.scalar_measurements, rep.consistency.composition, rep.consistency.translation
    );
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", path.display());
    if rep.ambiguous {
        return Err(Failure::Degenerate(
            "Ambiguous: the relaxation did not return a rank-one solution".into(),
        ));
    }
    Ok(())
}

pub fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> CmdResult {
    let shape = if args.planar_a {
        Shape::PlanarA
    } else if args.collinear_a {
        Shape::CollinearA
    } else if args.parallel_doa {
        Shape::ParallelDoa
    } else {
        Shape::Free
    };
    if args.sigma_az_deg < 0.0 || args.sigma_el_deg < 0.0 {
        return Err(Failure::Config("noise levels must be non-negative".into()));
    }
    let cfg = ScenarioConfig {
        k: args.k,
        agents: args.agents,
        noise: NoiseLevel::from_degrees(args.sigma_az_deg, args.sigma_el_deg),
        shape,
        ..Default::default()
    };
    let s = generate_scenario(&cfg, cli.seed.unwrap_or(0))?;
    let path = write_file(&cli.out_dir, &args.output, &s.to_json()?)?;
    println!("wrote {}", path.display());
    if let Some(name) = &args.csv {
        let epochs: Vec<MeasurementEpoch> = s
            .observations(Agent::B)?
            .iter()
            .map(ins_epoch)
            .collect::<doaloc::error::Result<_>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &epochs {
            let mut row = MeasurementRow::from_epoch(e);
            row.theta_rad = angle(row.theta_rad, cli.degrees);
            row.phi_rad = angle(row.phi_rad, cli.degrees);
            w.serialize(row).map_err(config("measurement CSV"))?;
        }
        let bytes = w.into_inner().map_err(config("measurement CSV"))?;
        let text = String::from_utf8(bytes).map_err(config("measurement CSV"))?;
        let csv_path = write_file(&cli.out_dir, name, &text)?;
        let pose = s.truth_pose(Agent::B)?;
        let truth = TruthFile {
            rotation: *pose.rotation.matrix(),
            translation: pose.translation,
            p_global: s.global_positions(Agent::B)?,
        };
        let stem = Path::new(name)
            .file_stem()
            .and_then(|x| x.to_str())
            .unwrap_or("measurements");
        let truth_path = write_file(
            &cli.out_dir,
            &format!("{stem}_truth.json"),
            &to_json(&truth)?,
        )?;
        println!("wrote {} and {}", csv_path.display(), truth_path.display());
    }
    Ok(())
}

fn campaign_config(
    cli: &Cli,
    args: &MonteCarloArgs,
) -> std::result::Result<CampaignConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str::<CampaignConfig>(&read_text(p)?)
            .map_err(config(&p.display().to_string()))?,
        None => CampaignConfig::default(),
    };
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = &args.sigma {
        cfg.sigmas_deg = s.clone();
    }
    if let Some(k) = args.k_min {
        cfg.k_range[0] = k;
    }
    if let Some(k) = args.k_max {
        cfg.k_range[1] = k;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.iter().map(|m| Method::from(*m)).collect();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Plots of median errors against K, one pair of files per noise level.
pub fn plots_from_csv(text: &str) -> std::result::Result<Vec<(String, String)>, Failure> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let cells: Vec<CellSummary> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(config("results CSV"))?;
    let mut sigmas: Vec<f64> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for c in &cells {
        if !sigmas.contains(&c.sigma_az_deg) {
            sigmas.push(c.sigma_az_deg);
        }
        if !methods.contains(&c.method) {
            methods.push(c.method);
        }
    }
    let mut out = Vec::new();
    for sigma in sigmas {
        let series = |f: fn(&CellSummary) -> f64| -> Vec<Series> {
            methods
                .iter()
                .map(|m| Series {
                    name: m.name().to_string(),
                    points: cells
                        .iter()
                        .filter(|c| c.sigma_az_deg == sigma && c.method == *m)
                        .map(|c| (c.k as f64, f(c)))
                        .collect(),
                })
                .collect()
        };
        let pos = LineChart {
            title: format!("Median position error, σ_az = {sigma}°"),
            x_label: "number of DOA measurements K".into(),
            y_label: "median normalised position error".into(),
            log_y: true,
            series: series(|c| c.median_pos_err),
        };
        let rot = LineChart {
            title: format!("Median rotation error, σ_az = {sigma}°"),
            x_label: "number of DOA measurements K".into(),
            y_label: "median rotation error (deg)".into(),
            log_y: true,
            series: series(|c| c.median_rot_err_deg),
        };
        out.push((format!("median_pos_err_sigma_{sigma}.svg"), pos.render()));
        out.push((format!("median_rot_err_sigma_{sigma}.svg"), rot.render()));
    }
    Ok(out)
}

fn trials_csv(res: &CampaignResult) -> std::result::Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &res.records {
        w.serialize(r).map_err(config("trials CSV"))?;
    }
    let bytes = w.into_inner().map_err(config("trials CSV"))?;
    String::from_utf8(bytes).map_err(config("trials CSV"))
}

pub fn cmd_montecarlo(cli: &Cli, args: &MonteCarloArgs) -> CmdResult {
    if let Some(p) = &args.replot {
        let text = read_text(p)?;
        for (name, svg) in plots_from_csv(&text)? {
            let path = write_file(&cli.out_dir, &name, &svg)?;
            println!("wrote {}", path.display());
        }
        return Ok(());
    }
    let cfg = campaign_config(cli, args)?;
    let opts = solver_options(&args.solver, Method::Sdp)?;
    let res = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(config("thread pool"))?
            .install(|| doaloc::scenario::monte_carlo(&cfg, &opts)),
        None => doaloc::scenario::monte_carlo(&cfg, &opts),
    }?;
    let results = res.cells_csv()?;
    let mut written = vec![
        write_file(&cli.out_dir, "results.csv", &results)?,
        write_file(&cli.out_dir, "trials.csv", &trials_csv(&res)?)?,
    ];
    for (name, svg) in plots_from_csv(&results)? {
        written.push(write_file(&cli.out_dir, &name, &svg)?);
    }
    let failures: usize = res.cells.iter().map(|c| c.failures).sum();
    println!(
        "{} cells, {} trial records, {} failed solves",
        res.cells.len(),
        res.records.len(),
        failures
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct FlagOut {
    flag: doaloc::scenario::Unsuitability,
    expected_failure: &'static str,
}

#[derive(Serialize)]
struct ExactOut {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
    max_residual: f64,
}

#[derive(Serialize)]
struct DiagnoseOutput {
    angle_unit: &'static str,
    flags: Vec<FlagOut>,
    spread: [f64; 3],
    max_doa_angle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_solutions: Option<Vec<ExactOut>>,
}

pub fn cmd_diagnose(cli: &Cli, args: &DiagnoseArgs) -> CmdResult {
    let epochs: Vec<MeasurementEpoch> = if is_json(&args.input) {
        load_scenario(&args.input)?
            .observations(Agent::B)?
            .iter()
            .map(ins_epoch)
            .collect::<doaloc::error::Result<_>>()?
    } else {
        read_csv_epochs(&args.input, cli.degrees)?
    };
    let d = detect_unsuitable(&epochs)?;
    let exact = args.oracle.then(|| {
        exact_solutions(
            &epochs,
            &OracleOptions {
                starts: args.starts,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            },
        )
    });
    let out = DiagnoseOutput {
        angle_unit: unit(cli.degrees),
        flags: d
            .flags
            .iter()
            .map(|f| FlagOut {
                flag: *f,
                expected_failure: f.expected_failure(),
            })
            .collect(),
        spread: d.spread,
        max_doa_angle: angle(d.max_doa_angle, cli.degrees),
        exact_solutions: exact.as_ref().map(|v| {
            v.iter()
                .map(|s| ExactOut {
                    r: rows(&s.rotation),
                    t: [s.translation.x, s.translation.y, s.translation.z],
                    max_residual: s.max_residual,
                })
                .collect()
        }),
    };
    let path = write_file(&cli.out_dir, "diagnostics.json", &to_json(&out)?)?;
    if out.flags.is_empty() {
        println!("no unsuitable geometry detected");
    }
    for f in &out.flags {
        println!("{:?}: {}", f.flag, f.expected_failure);
    }
    if let Some(v) = &exact {
        println!("{} distinct exact poses found", v.len());
    }
    println!("wrote {}", path.display());
    let multiple = exact.as_ref().is_some_and(|v| v.len() > 1);
    if !out.flags.is_empty() || multiple {
        return Err(Failure::Degenerate("input geometry is unsuitable".into()));
    }
    Ok(())
}
