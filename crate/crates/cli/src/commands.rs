use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sme_core::agents::{AgentKind, ReferenceAgent};
use sme_core::config::RawConfig;
use sme_core::error::CallbackError;
use sme_core::eval::{evaluate_policy, evaluate_policy_sequential, ShellPartition};
use sme_core::fileio::write_atomic;
use sme_core::offline::{concat_datasets, dataset_paths, generate_dataset, BehaviorPolicy};
use sme_core::rng::{RandomStream, StreamId};
use sme_core::verify::{verify, Corruption, VerifyBudget};
use sme_core::Environment;

use crate::args::{ConcatArgs, DatasetArgs, EvalArgs, GenArgs, RolloutArgs, VerifyArgs};
use crate::svg;
use crate::Failure;

/// What a finished subcommand reports back for the run log.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    /// Default run-log location.
    pub run_log: PathBuf,
    pub seeds: serde_json::Value,
    pub failed_checks: usize,
}

/// `path` with a trailing `.json`/`.csv` removed and `suffix` appended.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "csv" | "bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut name = stem.into_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn load_env(path: &Path) -> Result<Environment, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("reading {}: {e}", path.display())))?;
    Environment::load_manifest(&text).map_err(|e| Failure::from(e).context(&path.display().to_string()))
}

fn env_seeds(env: &Environment) -> serde_json::Value {
    json!({ "master_seed": env.config().master_seed })
}

pub fn gen(args: &GenArgs) -> Result<Outcome, Failure> {
    let cfg = RawConfig {
        n_state: Some(args.n_state),
        n_action: Some(args.n_action),
        reward_interval: Some(args.k),
        min_reward: Some(args.r_min),
        survival_difficulty: Some(args.difficulty),
        policy_complexity: Some(args.complexity),
        horizon: Some(args.horizon),
        master_seed: Some(args.seed),
    }
    .validate()?;
    let env = Environment::new(cfg)?.with_payout_on_termination(args.payout_on_termination);
    write_output(&args.out, env.save_manifest(args.embed_weights)?.as_bytes())?;
    println!(
        "wrote {} (N_s={}, N_a={}, depth={}, seed={})",
        args.out.display(),
        cfg.n_state,
        cfg.n_action,
        cfg.policy_complexity,
        cfg.master_seed
    );
    Ok(Outcome {
        outputs: vec![args.out.clone()],
        run_log: sibling(&args.out, ".runlog.json"),
        seeds: env_seeds(&env),
        failed_checks: 0,
    })
}

pub fn rollout(args: &RolloutArgs) -> Result<Outcome, Failure> {
    let kind: AgentKind = args.policy.parse()?;
    let mut env = load_env(&args.env)?;
    let (n_s, n_a) = (env.config().n_state, env.config().n_action);
    let mut agent = ReferenceAgent::new(kind, &env)?;

    let mut steps = String::new();
    if args.steps_out.is_some() {
        let mut header = vec!["episode".to_string(), "t".to_string()];
        header.extend((0..n_s).map(|i| format!("s{i}")));
        header.extend((0..n_a).map(|i| format!("a{i}")));
        header.extend((0..n_a).map(|i| format!("a_star{i}")));
        header.extend(["reward", "r_step", "tilde_r", "terminated", "truncated"].map(String::from));
        steps.push_str(&header.join(","));
        steps.push('\n');
    }
    let log_steps = args.steps_out.is_some();
    let summary = env.rollout_observed(agent.callback(), args.episodes, |episode, step| {
        if !log_steps {
            return;
        }
        let info = &step.info;
        let mut row = format!("{episode},{}", info.step_index);
        for v in info.state.iter().chain(&info.action).chain(&info.a_star) {
            let _ = write!(row, ",{v}");
        }
        let _ = writeln!(
            row,
            ",{},{},{},{},{}",
            step.reward, info.r, info.tilde_r, step.terminated as u8, step.truncated as u8
        );
        steps.push_str(&row);
    })?;

    let mut csv = String::from("episode,return,length,mean_tilde_r,mean_step_reward,terminated\n");
    for e in &summary.episodes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            e.episode, e.total_return, e.length, e.mean_tilde_r, e.mean_step_reward, e.terminated as u8
        );
    }
    write_output(&args.out, csv.as_bytes())?;
    let mut outputs = vec![args.out.clone()];
    if let Some(path) = &args.steps_out {
        write_output(path, steps.as_bytes())?;
        outputs.push(path.clone());
    }
    if let Some(path) = &args.svg {
        let returns: Vec<f64> = summary.episodes.iter().map(|e| e.total_return).collect();
        let plot = svg::line_plot(&format!("episode return ({kind})"), "return", &returns, None);
        write_output(path, plot.as_bytes())?;
        outputs.push(path.clone());
    }
    println!(
        "{} episodes with {kind}: mean return {:.4}, mean length {:.2}, mean tilde_r {:.6}, mean step reward {:.6}",
        summary.episodes.len(),
        summary.mean_return,
        summary.mean_length,
        summary.mean_tilde_r,
        summary.mean_step_reward
    );
    Ok(Outcome {
        outputs,
        run_log: sibling(&args.out, ".runlog.json"),
        seeds: json!({
            "master_seed": env.config().master_seed,
            "initial_state_stream": StreamId::InitialStates as u64,
        }),
        failed_checks: 0,
    })
}

pub fn eval(args: &EvalArgs) -> Result<Outcome, Failure> {
    let kind: AgentKind = args.policy.parse()?;
    let partition = ShellPartition::parse(&args.shells)?;
    let env = load_env(&args.env)?;
    let json_path = args.out.with_extension("json");
    if json_path == args.out {
        return Err(Failure::Validation("--out must not end in .json; the JSON report is written alongside".into()));
    }
    let eval_seed = args.eval_seed.unwrap_or(env.config().master_seed);
    let mut stream = RandomStream::derive(eval_seed, StreamId::Evaluation);
    let mut agent = ReferenceAgent::new(kind, &env)?;
    let report = if agent.is_stateless() {
        let agent = &agent;
        evaluate_policy(
            |obs| agent.act_stateless(obs).expect("stateless agent").map_err(CallbackError::from),
            &env,
            &partition,
            args.n_per_shell,
            &mut stream,
        )?
    } else {
        evaluate_policy_sequential(agent.callback(), &env, &partition, args.n_per_shell, &mut stream)?
    };
    write_output(&args.out, report.to_csv().as_bytes())?;
    write_output(&json_path, report.to_json()?.as_bytes())?;
    let mut outputs = vec![args.out.clone(), json_path];
    if let Some(path) = &args.svg {
        let ys: Vec<f64> = report.categories.iter().map(|c| c.mean_tilde_r).collect();
        let labels: Vec<String> = report.categories.iter().map(|c| c.category_label.clone()).collect();
        let plot = svg::line_plot(&format!("mean tilde_r per shell ({kind})"), "mean tilde_r", &ys, Some(&labels));
        write_output(path, plot.as_bytes())?;
        outputs.push(path.clone());
    }
    for c in &report.categories {
        println!("{:<10} n={:<7} mean_tilde_r={:.6} mean_regret={:.6}", c.category_label, c.n, c.mean_tilde_r, c.mean_regret);
    }
    Ok(Outcome {
        outputs,
        run_log: sibling(&args.out, ".runlog.json"),
        seeds: json!({
            "master_seed": env.config().master_seed,
            "eval_seed": eval_seed,
            "eval_stream": StreamId::Evaluation as u64,
        }),
        failed_checks: 0,
    })
}

pub fn dataset(args: &DatasetArgs) -> Result<Outcome, Failure> {
    let env = load_env(&args.env)?;
    let mut bp = BehaviorPolicy::new(&env, args.nu)?;
    let manifest = generate_dataset(&env, &mut bp, args.n, &args.out)?;
    let (json_path, bin_path) = dataset_paths(&args.out);
    println!(
        "{} transitions over {} episodes (nu={}): mean tilde_r {:.6}, mean step reward {:.6}",
        manifest.n_transitions, manifest.n_episodes, manifest.max_noise, manifest.mean_tilde_r, manifest.mean_step_reward
    );
    Ok(Outcome {
        outputs: vec![json_path, bin_path],
        run_log: sibling(&args.out, ".runlog.json"),
        seeds: json!({
            "master_seed": env.config().master_seed,
            "initial_state_stream": StreamId::InitialStates as u64,
            "noise_policy_stream": StreamId::NoisePolicy as u64,
            "alpha_stream": StreamId::BehaviorAlpha as u64,
        }),
        failed_checks: 0,
    })
}

pub fn concat(args: &ConcatArgs) -> Result<Outcome, Failure> {
    let manifest = concat_datasets(&args.inputs, &args.out)?;
    let (json_path, bin_path) = dataset_paths(&args.out);
    println!("merged {} datasets: {} transitions", args.inputs.len(), manifest.n_transitions);
    Ok(Outcome {
        outputs: vec![json_path, bin_path],
        run_log: sibling(&args.out, ".runlog.json"),
        seeds: json!({ "master_seed": manifest.config.master_seed }),
        failed_checks: 0,
    })
}

pub fn verify_cmd(args: &VerifyArgs) -> Result<Outcome, Failure> {
    let corruption: Corruption = args.corrupt.parse()?;
    let env = load_env(&args.env)?;
    let budget = VerifyBudget {
        transition_states: args.transition_states,
        mass_actions: args.mass_actions,
        lipschitz_pairs: args.lipschitz_pairs,
        policy_states: args.policy_states,
        collapse_states: args.collapse_states,
        suite_seed: args.suite_seed,
        ..VerifyBudget::default()
    };
    if [budget.transition_states, budget.mass_actions, budget.lipschitz_pairs, budget.policy_states, budget.collapse_states]
        .iter()
        .any(|&n| n < 10)
    {
        return Err(Failure::Validation("every verification budget must be at least 10 samples".into()));
    }
    let report = verify(&env, &budget, corruption);
    print!("{}", report.to_table());
    let mut outputs = vec![];
    if let Some(path) = &args.out {
        write_output(path, report.to_json()?.as_bytes())?;
        outputs.push(path.clone());
    }
    let run_log = match &args.out {
        Some(out) => sibling(out, ".runlog.json"),
        None => sibling(&args.env, ".verify.runlog.json"),
    };
    Ok(Outcome {
        outputs,
        run_log,
        seeds: json!({
            "master_seed": env.config().master_seed,
            "suite_seed": args.suite_seed,
        }),
        failed_checks: report.checks.len() - report.n_passed(),
    })
}
