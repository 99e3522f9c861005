use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "graspkp", version, about = "Keypoint grasp detection tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Cornell,
    Ajd,
}

impl From<ProfileArg> for graspkp::ProfileName {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Cornell => graspkp::ProfileName::Cornell,
            ProfileArg::Ajd => graspkp::ProfileName::Ajd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    #[value(name = "top1")]
    Top1,
    #[value(name = "topN")]
    TopN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodeMode {
    /// Gaussian training targets
    Targets,
    /// Noise-free bundle with unit peaks and separated embeddings
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Oracle,
    Pipeline,
    AlwaysFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    All,
    Detection,
    Offset,
    Pull,
    Push,
    Total,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render annotations into a heatmap bundle
    Encode(EncodeArgs),
    /// Extract top-k keypoints from a bundle
    Decode(DecodeArgs),
    /// Group keypoints into ranked grasps
    Group(GroupArgs),
    /// Score predictions against ground truth with the rectangle metric
    Evaluate(EvaluateArgs),
    /// Rank grasps by depth-image quality scores
    Score(ScoreArgs),
    /// Run seeded bin-picking trials on synthetic scenes
    SimulateBinpick(SimulateArgs),
    /// Coverage-based annotation filtering
    FilterJacquard(FilterArgs),
    /// Finite-difference check of every loss gradient
    Gradcheck(GradcheckArgs),
    /// Round-trip and gradient self checks
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cornell")]
    pub profile: ProfileArg,
    /// Image height in pixels [default: 227 for cornell, 512 for ajd]
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width in pixels [default: 227 for cornell, 512 for ajd]
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, value_enum, default_value = "targets")]
    pub mode: EncodeMode,
    /// Embedding seed for `--mode ideal`
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = graspkp::DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "cornell")]
    pub profile: ProfileArg,
    /// Skip 3x3 local-maximum suppression
    #[arg(long)]
    pub no_nms: bool,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_enum, default_value = "cornell")]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = graspkp::DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value_t = graspkp::grouper::DEFAULT_MAX_OUTPUT)]
    pub top: usize,
    #[arg(long)]
    pub rho_embed: Option<f64>,
    #[arg(long)]
    pub rho_cen: Option<f64>,
    #[arg(long)]
    pub tau_orient: Option<f64>,
    /// Tag every output record with this image id
    #[arg(long)]
    pub image_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value = "cornell")]
    pub profile: ProfileArg,
    #[arg(long, value_enum, default_value = "top1")]
    pub policy: PolicyArg,
    /// Predictions considered per image under `--policy topN`
    #[arg(long, default_value_t = graspkp::grouper::DEFAULT_MAX_OUTPUT)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub grasps: PathBuf,
    /// Single-plane bundle with a `depth` plane and optional `surface` plane
    #[arg(long)]
    pub depth: PathBuf,
    /// Gripper model JSON; missing fields take their defaults
    #[arg(long)]
    pub gripper: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "pipeline")]
    pub detector: DetectorArg,
    #[arg(long, value_enum, default_value = "cornell")]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = graspkp::DEFAULT_TOP_K)]
    pub top: usize,
    #[arg(long, default_value_t = 100)]
    pub max_attempts: usize,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Directory of `<id>.jsonl` annotation files
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory of `<id>.gktb` mask files
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub loss: LossArg,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Synthetic annotation sets per profile
    #[arg(long, default_value_t = 20)]
    pub sets: usize,
}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Success,
    /// Ran but a check failed.
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Group(a) => commands::group(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Score(a) => commands::score(&a),
        Command::SimulateBinpick(a) => commands::simulate(&a),
        Command::FilterJacquard(a) => commands::filter(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Selftest(a) => commands::selftest(&a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
