//! Within-distribution and out-of-distribution evaluation over nested
//! hypercube shells around the unit cube.
//!
//! A state belongs to shell `m` when its expansion level
//! `E(s) = 2‖s − c‖∞ − 1` (with `c = 0.5·1`) falls in `(ε_{m−1}, ε_m]`;
//! `E(s) ≤ 0` is within-distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::{clip_action, Environment};
use crate::error::{CallbackError, Error, Result};
use crate::reward::{augment_observation, step_reward};
use crate::rng::RandomStream;
use crate::stats::RunningStats;

/// Maximum rejection-sampling attempts per accepted state.
pub const MAX_ATTEMPTS_PER_STATE: u64 = 10_000;

pub fn expansion_level(s: &[f64]) -> f64 {
    let max_dev = s.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    2.0 * max_dev - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Category {
    pub fn is_within_distribution(&self) -> bool {
        self.eps_high == 0.0
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        let e = expansion_level(s);
        if self.is_within_distribution() {
            e <= 0.0
        } else {
            e > self.eps_low && e <= self.eps_high
        }
    }
}

/// Ascending expansions `0 = ε₀ < ε₁ < … < ε_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellPartition {
    expansions: Vec<f64>,
}

impl Default for ShellPartition {
    /// `{0.2m : m = 0..5}`: the unit cube plus five shells.
    fn default() -> Self {
        Self {
            expansions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl ShellPartition {
    pub fn new(expansions: Vec<f64>) -> Result<Self> {
        if expansions.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("expansions must start at 0".into()));
        }
        if expansions.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("expansions must be finite".into()));
        }
        if expansions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "expansions must be strictly ascending".into(),
            ));
        }
        Ok(Self { expansions })
    }

    /// Parse a comma-separated list such as `"0,0.2,0.4"`.
    pub fn parse(text: &str) -> Result<Self> {
        let expansions = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad expansion {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(expansions)
    }

    pub fn expansions(&self) -> &[f64] {
        &self.expansions
    }

    /// Within-distribution category followed by one category per shell.
    pub fn categories(&self) -> Vec<Category> {
        let mut out = vec![Category {
            label: "WD".to_string(),
            eps_low: 0.0,
            eps_high: 0.0,
        }];
        out.extend(self.expansions.windows(2).map(|w| Category {
            label: format!("({},{}]", w[0], w[1]),
            eps_low: w[0],
            eps_high: w[1],
        }));
        out
    }

    /// Index into [`ShellPartition::categories`], or `None` beyond the
    /// outermost cube.
    pub fn categorize(&self, s: &[f64]) -> Option<usize> {
        let e = expansion_level(s);
        if e <= 0.0 {
            return Some(0);
        }
        self.expansions
            .windows(2)
            .position(|w| e > w[0] && e <= w[1])
            .map(|i| i + 1)
    }
}

/// `n` states uniform on the shell `(eps_low, eps_high]`, or uniform on the
/// unit cube when both bounds are zero.
pub fn sample_shell(
    stream: &mut RandomStream,
    eps_low: f64,
    eps_high: f64,
    n_state: usize,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    sample_shell_counted(stream, eps_low, eps_high, n_state, n).map(|(states, _)| states)
}

/// [`sample_shell`] that also returns the total number of candidate states
/// drawn, so the empirical acceptance rate is `n / attempts`.
pub fn sample_shell_counted(
    stream: &mut RandomStream,
    eps_low: f64,
    eps_high: f64,
    n_state: usize,
    n: usize,
) -> Result<(Vec<Vec<f64>>, u64)> {
    if eps_low == 0.0 && eps_high == 0.0 {
        return Ok(((0..n).map(|_| stream.uniform_vec(n_state)).collect(), n as u64));
    }
    if !(eps_low >= 0.0 && eps_low < eps_high && eps_high.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "shell bounds must satisfy 0 ≤ low < high, got ({eps_low}, {eps_high}]"
        )));
    }
    let width = 1.0 + eps_high;
    let mut out = Vec::with_capacity(n);
    let mut total = 0u64;
    for _ in 0..n {
        let mut attempts = 0u64;
        loop {
            if attempts == MAX_ATTEMPTS_PER_STATE {
                return Err(Error::SamplingExhausted {
                    eps_low,
                    eps_high,
                    attempts,
                });
            }
            attempts += 1;
            let s: Vec<f64> = (0..n_state)
                .map(|_| 0.5 + width * (stream.uniform() - 0.5))
                .collect();
            let e = expansion_level(&s);
            if e > eps_low && e <= eps_high {
                out.push(s);
                break;
            }
        }
        total += attempts;
    }
    Ok((out, total))
}

/// Analytic acceptance probability of the shell rejection sampler.
pub fn shell_acceptance_probability(eps_low: f64, eps_high: f64, n_state: usize) -> f64 {
    1.0 - ((1.0 + eps_low) / (1.0 + eps_high)).powi(n_state as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category_label: String,
    pub eps_low: f64,
    pub eps_high: f64,
    pub n: u64,
    pub mean_tilde_r: f64,
    pub std_tilde_r: f64,
    /// Mean of `1 − hat_r`.
    pub mean_regret: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub config: EnvConfig,
    pub expansions: Vec<f64>,
    pub n_per_category: usize,
    pub n_states: usize,
    pub stream_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryStats>,
    pub metadata: EvalMetadata,
}

pub const EVAL_CSV_HEADER: &str =
    "category_label,eps_low,eps_high,n,mean_tilde_r,std_tilde_r,mean_regret,clip_fraction";

impl EvalReport {
    /// CSV with one row per category. Labels such as `(0,0.2]` contain a
    /// comma, so the label field is always quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_CSV_HEADER);
        out.push('\n');
        for c in &self.categories {
            out.push_str(&format!(
                "\"{}\",{},{},{},{},{},{},{}\n",
                c.category_label,
                c.eps_low,
                c.eps_high,
                c.n,
                c.mean_tilde_r,
                c.std_tilde_r,
                c.mean_regret,
                c.clip_fraction
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

#[derive(Debug, Clone, Copy)]
struct StateScore {
    tilde_r: f64,
    regret: f64,
    clip_fraction: f64,
}

fn score_state<F>(policy_fn: F, env: &Environment, s: &[f64]) -> Result<StateScore>
where
    F: FnOnce(&[f64]) -> std::result::Result<Vec<f64>, CallbackError>,
{
    let cfg = env.config();
    let obs = augment_observation(s, 0, cfg.horizon, 0.0, cfg.reward_interval);
    let action = policy_fn(&obs).map_err(|source| Error::Callback {
        state: s.to_vec(),
        source,
    })?;
    if action.iter().any(|v| v.is_nan()) {
        return Err(Error::Callback {
            state: s.to_vec(),
            source: "policy returned NaN".into(),
        });
    }
    let (clipped, clip_fraction) = clip_action(&action);
    let a_star = env.policy().optimal_action(s, false)?;
    let rewards = step_reward(&clipped, &a_star, 0.0)?;
    Ok(StateScore {
        tilde_r: rewards.tilde_r,
        regret: 1.0 - rewards.hat_r,
        clip_fraction,
    })
}

fn sample_all(
    env: &Environment,
    partition: &ShellPartition,
    n_per_category: usize,
    stream: &mut RandomStream,
) -> Result<Vec<(Category, Vec<Vec<f64>>)>> {
    if n_per_category == 0 {
        return Err(Error::InvalidArgument("n_per_category must be ≥ 1".into()));
    }
    partition
        .categories()
        .into_iter()
        .map(|c| {
            let states = sample_shell(stream, c.eps_low, c.eps_high, env.config().n_state, n_per_category)?;
            Ok((c, states))
        })
        .collect()
}

fn assemble(
    env: &Environment,
    partition: &ShellPartition,
    n_per_category: usize,
    stream_id: u64,
    scored: Vec<(Category, Vec<StateScore>)>,
) -> EvalReport {
    let categories: Vec<CategoryStats> = scored
        .into_iter()
        .map(|(c, scores)| {
            let tilde: RunningStats = scores.iter().map(|s| s.tilde_r).collect();
            let regret: RunningStats = scores.iter().map(|s| s.regret).collect();
            let clip: RunningStats = scores.iter().map(|s| s.clip_fraction).collect();
            CategoryStats {
                category_label: c.label,
                eps_low: c.eps_low,
                eps_high: c.eps_high,
                n: tilde.count(),
                mean_tilde_r: tilde.mean(),
                std_tilde_r: tilde.std_dev(),
                mean_regret: regret.mean(),
                clip_fraction: clip.mean(),
            }
        })
        .collect();
    EvalReport {
        metadata: EvalMetadata {
            config: *env.config(),
            expansions: partition.expansions().to_vec(),
            n_per_category,
            n_states: n_per_category * categories.len(),
            stream_id,
        },
        categories,
    }
}

/// Evaluate a stateless policy, scoring states in parallel.
///
/// `policy_fn` receives the augmented observation `[s, 0, 0]`; the optimal
/// policy is queried on the raw, unclipped state. Results are identical to
/// [`evaluate_policy_sequential`] for the same inputs.
pub fn evaluate_policy<F>(
    policy_fn: F,
    env: &Environment,
    partition: &ShellPartition,
    n_per_category: usize,
    stream: &mut RandomStream,
) -> Result<EvalReport>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, CallbackError> + Sync,
{
    let sampled = sample_all(env, partition, n_per_category, stream)?;
    let scored = sampled
        .into_iter()
        .map(|(c, states)| {
            let scores = states
                .par_iter()
                .map(|s| score_state(&policy_fn, env, s))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(env, partition, n_per_category, stream.stream_id(), scored))
}

/// Evaluate a stateful policy one state at a time, in sampling order.
pub fn evaluate_policy_sequential<F>(
    mut policy_fn: F,
    env: &Environment,
    partition: &ShellPartition,
    n_per_category: usize,
    stream: &mut RandomStream,
) -> Result<EvalReport>
where
    F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, CallbackError>,
{
    let sampled = sample_all(env, partition, n_per_category, stream)?;
    let scored = sampled
        .into_iter()
        .map(|(c, states)| {
            let scores = states
                .iter()
                .map(|s| score_state(&mut policy_fn, env, s))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(env, partition, n_per_category, stream.stream_id(), scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;

    #[test]
    fn expansion_level_examples() {
        assert_eq!(expansion_level(&[0.5; 4]), -1.0);
        assert_eq!(expansion_level(&[1.0; 4]), 0.0);
        let e = expansion_level(&[1.05, 0.3]);
        assert!((e - 0.1).abs() < 1e-12);
        assert_eq!(ShellPartition::default().categorize(&[1.05, 0.3]), Some(1));
        assert_eq!(ShellPartition::default().categorize(&[0.0, 1.0]), Some(0));
        assert_eq!(ShellPartition::default().categorize(&[-0.6, 0.5]), None);
    }

    #[test]
    fn partition_validation_and_labels() {
        assert!(ShellPartition::new(vec![0.1, 0.2]).is_err());
        assert!(ShellPartition::new(vec![0.0, 0.2, 0.2]).is_err());
        assert!(ShellPartition::parse("0, 0.5 ,x").is_err());
        let p = ShellPartition::parse("0,0.2,0.4,0.6,0.8,1.0").unwrap();
        assert_eq!(p, ShellPartition::default());
        let labels: Vec<String> = p.categories().into_iter().map(|c| c.label).collect();
        assert_eq!(
            labels,
            ["WD", "(0,0.2]", "(0.2,0.4]", "(0.4,0.6]", "(0.6,0.8]", "(0.8,1]"]
        );
    }

    #[test]
    fn wd_samples_stay_in_unit_cube() {
        let mut s = RandomStream::derive(1, StreamId::Evaluation);
        for state in sample_shell(&mut s, 0.0, 0.0, 8, 1000).unwrap() {
            assert!(state.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(expansion_level(&state) <= 0.0);
        }
    }

    #[test]
    fn shell_samples_land_in_shell() {
        let mut s = RandomStream::derive(1, StreamId::Evaluation);
        for state in sample_shell(&mut s, 0.2, 0.4, 8, 5000).unwrap() {
            let e = expansion_level(&state);
            assert!(e > 0.2 && e <= 0.4, "{e}");
        }
    }

    #[test]
    fn sampler_rejects_bad_bounds_and_gives_up_loudly() {
        let mut s = RandomStream::derive(1, StreamId::Evaluation);
        assert!(sample_shell(&mut s, 0.4, 0.2, 2, 1).is_err());
        assert!(sample_shell(&mut s, -0.1, 0.2, 2, 1).is_err());
        // A shell of relative volume ~1e-13 in one dimension is unreachable.
        let err = sample_shell(&mut s, 0.5, 0.5 + 1e-13, 1, 1).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { .. }));
    }

    #[test]
    fn optimal_policy_scores_one_everywhere() {
        let env = Environment::new(EnvConfig::with_seed(9)).unwrap();
        let policy = env.shared_policy();
        let report = evaluate_policy(
            |obs: &[f64]| Ok(policy.optimal_action(&obs[..8], false)?),
            &env,
            &ShellPartition::default(),
            500,
            &mut RandomStream::derive(9, StreamId::Evaluation),
        )
        .unwrap();
        assert_eq!(report.categories.len(), 6);
        for c in &report.categories {
            assert_eq!(c.n, 500);
            assert!((c.mean_tilde_r - 1.0).abs() < 1e-12);
            assert!(c.mean_regret.abs() < 1e-12);
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with(EVAL_CSV_HEADER));
        assert!(csv.lines().nth(2).unwrap().starts_with("\"(0,0.2]\",0,0.2,500,"));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let env = Environment::new(EnvConfig::with_seed(3)).unwrap();
        let center = |_: &[f64]| -> std::result::Result<Vec<f64>, CallbackError> { Ok(vec![0.5; 4]) };
        let a = evaluate_policy(
            center,
            &env,
            &ShellPartition::default(),
            300,
            &mut RandomStream::derive(3, StreamId::Evaluation),
        )
        .unwrap();
        let b = evaluate_policy_sequential(
            center,
            &env,
            &ShellPartition::default(),
            300,
            &mut RandomStream::derive(3, StreamId::Evaluation),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn callback_errors_carry_state() {
        let env = Environment::new(EnvConfig::with_seed(3)).unwrap();
        let err = evaluate_policy(
            |_: &[f64]| Err::<Vec<f64>, CallbackError>("nope".into()),
            &env,
            &ShellPartition::default(),
            3,
            &mut RandomStream::derive(3, StreamId::Evaluation),
        )
        .unwrap_err();
        match err {
            Error::Callback { state, .. } => assert_eq!(state.len(), 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clipping_is_reported() {
        let env = Environment::new(EnvConfig::with_seed(3)).unwrap();
        let report = evaluate_policy(
            |_: &[f64]| Ok(vec![1.5, 0.5, -1.0, 0.5]),
            &env,
            &ShellPartition::default(),
            10,
            &mut RandomStream::derive(3, StreamId::Evaluation),
        )
        .unwrap();
        for c in &report.categories {
            assert_eq!(c.clip_fraction, 0.5);
        }
    }
}
