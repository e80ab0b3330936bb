use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Generate, roll out, evaluate, log and verify synthetic monitoring
/// environments.
#[derive(Debug, Parser)]
#[command(name = "sme", version)]
pub struct Cli {
    /// Where to write the run log (default: next to the main output).
    #[arg(long, global = true)]
    pub run_log: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Create an environment manifest.
    Gen(GenArgs),
    /// Run full episodes with a reference agent and write per-episode stats.
    Rollout(RolloutArgs),
    /// Score a reference agent on within- and out-of-distribution shells.
    Eval(EvalArgs),
    /// Log transitions of the noisy behavior policy to a binary dataset.
    Dataset(DatasetArgs),
    /// Merge datasets from the same environment and noise level.
    Concat(ConcatArgs),
    /// Run the statistical self-checks on an environment.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Master seed from which every random component is derived.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// State dimension N_s.
    #[arg(long, default_value_t = 8)]
    pub n_state: usize,
    /// Action dimension N_a.
    #[arg(long, default_value_t = 4)]
    pub n_action: usize,
    /// Reward interval: accrued reward is paid every k steps.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Step rewards at or below this value are zeroed.
    #[arg(long, default_value_t = 0.0)]
    pub r_min: f64,
    /// Survival difficulty: episodes end when the step reward drops below it.
    #[arg(long, default_value_t = 0.0)]
    pub difficulty: f64,
    /// Depth of the optimal policy network.
    #[arg(long, default_value_t = 1)]
    pub complexity: usize,
    /// Episode length T.
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Pay accrued reward when an episode terminates early.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub payout_on_termination: bool,
    /// Store kernel and policy weights in the manifest.
    #[arg(long)]
    pub embed_weights: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// optimal, center, or noise:<nu>
    #[arg(long, default_value = "optimal")]
    pub policy: String,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Per-episode CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a per-step trajectory CSV.
    #[arg(long)]
    pub steps_out: Option<PathBuf>,
    /// Also render the returns as an SVG line plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value = "optimal")]
    pub policy: String,
    /// Comma-separated expansion levels; the first must be 0.
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    pub shells: String,
    #[arg(long, default_value_t = 8334)]
    pub n_per_shell: usize,
    /// Seed for state sampling (default: the environment's master seed).
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// CSV report; a JSON report is written alongside with extension .json.
    #[arg(long)]
    pub out: PathBuf,
    /// Also render mean similarity per shell as an SVG line plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// Maximum mixing weight of the noise policy.
    #[arg(long)]
    pub nu: f64,
    #[arg(long, default_value_t = 50_000)]
    pub n: u64,
    /// Writes PREFIX.json and PREFIX.bin.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConcatArgs {
    /// Dataset manifests (PREFIX.json) to merge, in order.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub transition_states: usize,
    #[arg(long, default_value_t = 10_000)]
    pub mass_actions: usize,
    #[arg(long, default_value_t = 100_000)]
    pub lipschitz_pairs: usize,
    #[arg(long, default_value_t = 100_000)]
    pub policy_states: usize,
    #[arg(long, default_value_t = 10_000)]
    pub collapse_states: usize,
    #[arg(long, default_value_t = 0)]
    pub suite_seed: u64,
    /// JSON check report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative control: corrupt the environment before checking.
    #[arg(long, hide = true, default_value = "none")]
    pub corrupt: String,
}
