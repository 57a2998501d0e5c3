use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use doaloc::constraints::ConstraintSet;
use doaloc::pipeline::Method;

#[derive(Debug, Parser)]
#[command(
    name = "doaloc",
    version,
    about = "Localise GPS-denied agents from direction-of-arrival readings"
)]
pub struct Cli {
    /// Seed for scenario generation, noise injection and campaigns.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Measurement CSV angles and reported angles are in degrees.
    #[arg(long, global = true)]
    pub degrees: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write it as JSON.
    Generate(GenerateArgs),
    /// Estimate the drift pose of B from a measurement CSV or scenario JSON.
    Solve(SolveArgs),
    /// Jointly estimate B and C from a three-agent scenario.
    TriSolve(TriSolveArgs),
    /// Run a seeded campaign and write median tables and plots.
    Montecarlo(MonteCarloArgs),
    /// Flag trajectory geometries that leave the pose unresolved.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ls,
    Sdp,
    #[value(name = "sdp+ml", alias = "sdp+o+ml")]
    SdpMl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ls => Method::Ls,
            MethodArg::Sdp => Method::Sdp,
            MethodArg::SdpMl => Method::SdpMl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConstraintSetArg {
    Full,
    IndependentOnly,
}

impl From<ConstraintSetArg> for ConstraintSet {
    fn from(c: ConstraintSetArg) -> Self {
        match c {
            ConstraintSetArg::Full => ConstraintSet::Full,
            ConstraintSetArg::IndependentOnly => ConstraintSet::IndependentOnly,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// SDP relative duality gap tolerance.
    #[arg(long)]
    pub sdp_tol: Option<f64>,
    #[arg(long)]
    pub sdp_max_iter: Option<usize>,
    /// Skip the rank-one refinement of the SDP solution.
    #[arg(long)]
    pub no_polish: bool,
    #[arg(long, value_enum, default_value = "full")]
    pub constraint_set: ConstraintSetArg,
    /// Multiplier applied to the translation columns before the SDP;
    /// defaults to the RMS position norm.
    #[arg(long)]
    pub t_scale: Option<f64>,
    /// Prior translation guess `x,y,z` subtracted before the SDP.
    #[arg(
        long,
        value_name = "X,Y,Z",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub t_shift: Option<Vec<f64>>,
    #[arg(long)]
    pub mle_max_iter: Option<usize>,
    #[arg(long)]
    pub mle_grad_tol: Option<f64>,
    /// Azimuth standard deviation (degrees) for the likelihood and for
    /// noise injected into CSV input when `--seed` is given.
    #[arg(long)]
    pub sigma_az_deg: Option<f64>,
    /// Elevation standard deviation, degrees.
    #[arg(long)]
    pub sigma_el_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of epochs.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// 2 for A and B, 3 to add C.
    #[arg(long, default_value_t = 2)]
    pub agents: usize,
    /// A holds a constant altitude.
    #[arg(long, group = "shape")]
    pub planar_a: bool,
    /// A flies a straight line along x.
    #[arg(long, group = "shape")]
    pub collinear_a: bool,
    /// B flies in formation with A.
    #[arg(long, group = "shape")]
    pub parallel_doa: bool,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_az_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_el_deg: f64,
    /// Scenario file name inside the output directory.
    #[arg(long, default_value = "scenario.json")]
    pub output: String,
    /// Also write B's INS-frame readings as a measurement CSV.
    #[arg(long)]
    pub csv: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Measurement CSV or scenario JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth JSON for a measurement CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sdp")]
    pub method: MethodArg,
    /// Stop after SDP+O even when `--method sdp+ml` is given.
    #[arg(long)]
    pub no_mle: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct TriSolveArgs {
    /// Three-agent scenario JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Run the alternating likelihood refinement (extension).
    #[arg(long)]
    pub mle: bool,
    /// Length unit for the relaxation; defaults to the RMS position norm.
    #[arg(long)]
    pub length_scale: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    /// Campaign JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Azimuth noise levels in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Only redraw the plots from an existing results CSV.
    #[arg(long)]
    pub replot: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Measurement CSV or scenario JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Search for distinct exact poses with a multi-start local solver.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
}
