//! Statistical self-checks of an environment instance.
//!
//! Six checks cover the kernel (uniform-measure preservation, action mass,
//! variance bounds, Lipschitz constant) and the optimal policy (output
//! uniformity, non-collapse). Failures are reported, never raised.
//! [`Corruption`] hooks exist so the suite can be shown to fail on broken
//! instances.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::Environment;
use crate::error::Result;
use crate::kernel::{triangle_wave_unchecked, TransitionKernel};
use crate::linalg::{spectral_norm, Matrix};
use crate::policy::{DunPolicy, UniformLayer};
use crate::rng::{RandomStream, StreamId};
use crate::stats::{ks_critical_value, RunningStats};

pub use crate::stats::ks_statistic;

/// Family-wise significance level of the uniformity check.
pub const UNIFORMITY_ALPHA: f64 = 0.01;
pub const ACTION_MASS_TOL: f64 = 1e-10;
pub const LIPSCHITZ_SLACK: f64 = 1e-9;
pub const POLICY_KS_THRESHOLD: f64 = 0.02;
/// Smallest state dimension at which policy-output uniformity is expected.
pub const POLICY_KS_MIN_STATE: usize = 8;
pub const MIN_ACTION_STD: f64 = 0.2;
pub const SPECTRAL_NORM_TOL: f64 = 1e-10;

// Stream ids used by the suite; disjoint from the environment's own ids.
const SUITE_STREAM_BASE: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub statistic: f64,
    /// Upper bound (or lower bound for `non_collapse`) the statistic is
    /// compared against.
    pub threshold: f64,
    /// Lower bound, for two-sided checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_threshold: Option<f64>,
    pub passed: bool,
    pub sample_size: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyBudget {
    pub transition_states: usize,
    pub mass_actions: usize,
    pub lipschitz_pairs: usize,
    pub policy_states: usize,
    pub collapse_states: usize,
    pub collapse_n_state: Vec<usize>,
    pub collapse_depth: Vec<usize>,
    pub suite_seed: u64,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        Self {
            transition_states: 100_000,
            mass_actions: 10_000,
            lipschitz_pairs: 100_000,
            policy_states: 100_000,
            collapse_states: 10_000,
            collapse_n_state: vec![1, 2, 4, 8, 16],
            collapse_depth: vec![1, 5, 10, 50],
            suite_seed: 0,
        }
    }
}

/// Deliberate defects used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// First kernel row scaled by 1.5, so it no longer sums to one.
    NonStochasticRow,
    /// Logistic sigmoid in place of the triangle wave.
    SigmoidActivation,
    /// Last policy layer zeroed, so every action is 0.5.
    CollapsedPolicy,
}

impl std::str::FromStr for Corruption {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "non-stochastic-row" => Ok(Self::NonStochasticRow),
            "sigmoid" => Ok(Self::SigmoidActivation),
            "collapsed-policy" => Ok(Self::CollapsedPolicy),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown corruption '{other}' (expected none, non-stochastic-row, sigmoid, collapsed-policy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: EnvConfig,
    pub budget: VerifyBudget,
    pub corruption: Corruption,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn n_passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Fixed-width text table, one row per check.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>14} {:>24} {:>10} {:>6}  note",
            "check", "statistic", "threshold", "n", "result"
        );
        for c in &self.checks {
            let threshold = match c.lower_threshold {
                Some(lo) => format!("[{lo:.6e}, {:.6e}]", c.threshold),
                None if c.name == "non_collapse" => format!("> {:.6}", c.threshold),
                None => format!("<= {:.6e}", c.threshold),
            };
            let _ = writeln!(
                out,
                "{:<22} {:>14.6e} {:>24} {:>10} {:>6}  {}",
                c.name,
                c.statistic,
                threshold,
                c.sample_size,
                if c.passed { "PASS" } else { "FAIL" },
                c.note
            );
        }
        let _ = writeln!(out, "{}/{} checks passed", self.n_passed(), self.checks.len());
        out
    }
}

/// Build the environment for `cfg` and run every check on it.
pub fn verify_environment(cfg: &EnvConfig, budget: &VerifyBudget) -> Result<VerifyReport> {
    let env = Environment::new(*cfg)?;
    Ok(verify(&env, budget, Corruption::None))
}

/// Run every check on an existing environment, optionally corrupted first.
pub fn verify(env: &Environment, budget: &VerifyBudget, corruption: Corruption) -> VerifyReport {
    verify_parts(env.config(), env.kernel(), env.policy(), budget, corruption)
}

/// Run every check on explicit (possibly hand-built) parts.
pub fn verify_parts(
    cfg: &EnvConfig,
    kernel: &TransitionKernel,
    policy: &DunPolicy,
    budget: &VerifyBudget,
    corruption: Corruption,
) -> VerifyReport {
    let kernel = match corruption {
        Corruption::NonStochasticRow => scale_first_row(kernel, 1.5),
        _ => kernel.clone(),
    };
    let collapse = corruption == Corruption::CollapsedPolicy;
    let policy = if collapse {
        collapse_policy(policy)
    } else {
        policy.clone()
    };
    let activation: fn(f64) -> f64 = match corruption {
        Corruption::SigmoidActivation => logistic,
        _ => triangle_wave_unchecked,
    };
    let seed = budget.suite_seed;

    // The checks are independent; run them side by side.
    let jobs: Vec<Box<dyn Fn() -> CheckResult + Sync + Send + '_>> = vec![
        Box::new(|| check_transition_uniformity(&kernel, activation, budget.transition_states, seed)),
        Box::new(|| check_action_mass(&kernel, budget.mass_actions, seed)),
        Box::new(|| check_variance_bounds(&kernel, seed)),
        Box::new(|| check_lipschitz(&kernel, budget.lipschitz_pairs, seed)),
        Box::new(|| check_policy_uniformity(&policy, budget.policy_states, seed)),
        Box::new(|| {
            check_non_collapse(
                cfg.master_seed,
                cfg.n_action,
                &budget.collapse_n_state,
                &budget.collapse_depth,
                budget.collapse_states,
                seed,
                collapse,
            )
        }),
    ];
    let checks = jobs.par_iter().map(|job| job()).collect();
    VerifyReport {
        config: *cfg,
        budget: budget.clone(),
        corruption,
        checks,
    }
}

fn suite_stream(seed: u64, check: u64) -> RandomStream {
    RandomStream::derive(seed, SUITE_STREAM_BASE + check)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn scale_first_row(kernel: &TransitionKernel, factor: f64) -> TransitionKernel {
    let mut w = kernel.weights().clone();
    w.row_mut(0).iter_mut().for_each(|x| *x *= factor);
    TransitionKernel::from_parts(w, kernel.bias().to_vec())
        .expect("scaling a finite kernel keeps it finite")
}

fn collapse_policy(policy: &DunPolicy) -> DunPolicy {
    let mut layers = policy.layers().to_vec();
    let last = layers.last_mut().expect("policies have at least one layer");
    *last = UniformLayer::from_weights(Matrix::zeros(last.n_out(), last.n_in()));
    DunPolicy::from_layers(layers).expect("same widths as the original")
}

fn max_ks_per_dim(columns: &[Vec<f64>]) -> (f64, usize) {
    columns
        .iter()
        .map(|c| ks_statistic(c))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, d)| if d > best { (d, i) } else { (best, bi) })
}

/// (1) Push uniform states through the kernel under one fixed random action
/// and test each output coordinate against `U(0,1)`, Bonferroni-corrected
/// across dimensions.
pub fn check_transition_uniformity(
    kernel: &TransitionKernel,
    activation: fn(f64) -> f64,
    n: usize,
    seed: u64,
) -> CheckResult {
    let (n_s, n_a) = (kernel.n_state(), kernel.n_action());
    let mut rng = suite_stream(seed, 1);
    let action = rng.uniform_vec(n_a);
    let shift: Vec<f64> = kernel
        .weights()
        .vec_mul(&action)
        .iter()
        .zip(kernel.bias())
        .map(|(p, b)| p + b)
        .collect();
    let mut columns = vec![Vec::with_capacity(n); n_s];
    for _ in 0..n {
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(activation(rng.uniform() + shift[j]));
        }
    }
    let (stat, dim) = max_ks_per_dim(&columns);
    let threshold = ks_critical_value(UNIFORMITY_ALPHA / n_s as f64, n);
    CheckResult {
        name: "transition_uniformity".into(),
        statistic: stat,
        threshold,
        lower_threshold: None,
        passed: stat < threshold,
        sample_size: n as u64,
        seed,
        note: format!("max KS over {n_s} dims at dim {dim}; alpha {UNIFORMITY_ALPHA}/{n_s}"),
    }
}

/// (2) `‖aW‖₁ = ‖a‖₁` for non-negative actions.
pub fn check_action_mass(kernel: &TransitionKernel, n: usize, seed: u64) -> CheckResult {
    let mut rng = suite_stream(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let a = rng.uniform_vec(kernel.n_action());
        let projected: f64 = kernel.weights().vec_mul(&a).iter().map(|x| x.abs()).sum();
        let mass: f64 = a.iter().sum();
        worst = worst.max((projected - mass).abs());
    }
    CheckResult {
        name: "action_mass".into(),
        statistic: worst,
        threshold: ACTION_MASS_TOL,
        lower_threshold: None,
        passed: worst <= ACTION_MASS_TOL,
        sample_size: n as u64,
        seed,
        note: "max |‖aW‖₁ − ‖a‖₁|".into(),
    }
}

/// `(1/12)‖W‖_F²` together with its bounds `[N_a/(12 N_s), N_a/12]`.
pub fn injected_variance(kernel: &TransitionKernel) -> (f64, f64, f64) {
    let (n_s, n_a) = (kernel.n_state() as f64, kernel.n_action() as f64);
    (
        kernel.weights().frobenius_sq() / 12.0,
        n_a / (12.0 * n_s),
        n_a / 12.0,
    )
}

/// (3) Total variance injected by a uniform action lies within its bounds.
pub fn check_variance_bounds(kernel: &TransitionKernel, seed: u64) -> CheckResult {
    let (v, lo, hi) = injected_variance(kernel);
    let tol = 1e-12 * hi.max(1.0);
    CheckResult {
        name: "variance_bounds".into(),
        statistic: v,
        threshold: hi,
        lower_threshold: Some(lo),
        passed: v >= lo - tol && v <= hi + tol,
        sample_size: 1,
        seed,
        note: "(1/12)‖W‖_F² (analytic)".into(),
    }
}

/// Largest observed `‖T(s,a) − T(s',a')‖₂ / (‖s−s'‖₂ + ‖a−a'‖₂)`.
///
/// Half of the pairs are independent uniform draws; the other half are
/// small perturbations, which probe the local slope of the kernel.
pub fn lipschitz_ratio(kernel: &TransitionKernel, n_pairs: usize, rng: &mut RandomStream) -> f64 {
    let (n_s, n_a) = (kernel.n_state(), kernel.n_action());
    let mut worst: f64 = 0.0;
    for i in 0..n_pairs {
        let s1 = rng.uniform_vec(n_s);
        let a1 = rng.uniform_vec(n_a);
        let (s2, a2) = if i % 2 == 0 {
            (rng.uniform_vec(n_s), rng.uniform_vec(n_a))
        } else {
            let h = 1e-3;
            let s2 = s1.iter().map(|x| x + h * (rng.uniform() - 0.5)).collect();
            let a2 = a1.iter().map(|x| x + h * (rng.uniform() - 0.5)).collect();
            (s2, a2)
        };
        let t1 = kernel.step(&s1, &a1).expect("finite inputs");
        let t2 = kernel.step(&s2, &a2).expect("finite inputs");
        let num = dist(&t1, &t2);
        let den = dist(&s1, &s2) + dist(&a1, &a2);
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    worst
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// (4) Empirical Lipschitz ratio against `2·max(1, ‖W‖₂)`, with distances
/// measured as `‖Δs‖₂ + ‖Δa‖₂` on the input side.
pub fn check_lipschitz(kernel: &TransitionKernel, n_pairs: usize, seed: u64) -> CheckResult {
    let mut rng = suite_stream(seed, 4);
    let ratio = lipschitz_ratio(kernel, n_pairs, &mut rng);
    let w_norm = spectral_norm(kernel.weights(), SPECTRAL_NORM_TOL);
    let threshold = 2.0 * w_norm.max(1.0) + LIPSCHITZ_SLACK;
    CheckResult {
        name: "lipschitz".into(),
        statistic: ratio,
        threshold,
        lower_threshold: None,
        passed: ratio <= threshold,
        sample_size: n_pairs as u64,
        seed,
        note: format!("‖W‖₂ = {w_norm:.6}"),
    }
}

/// (5) Marginals of `π★(s)` under uniform `s` are close to `U(0,1)`.
/// Only meaningful for `N_s ≥ 8`; smaller inputs pass as not applicable.
pub fn check_policy_uniformity(policy: &DunPolicy, n: usize, seed: u64) -> CheckResult {
    let n_s = policy.input_dim();
    let mut result = CheckResult {
        name: "policy_uniformity".into(),
        statistic: 0.0,
        threshold: POLICY_KS_THRESHOLD,
        lower_threshold: None,
        passed: true,
        sample_size: 0,
        seed,
        note: String::new(),
    };
    if n_s < POLICY_KS_MIN_STATE {
        result.note = format!("not applicable: N_s = {n_s} < {POLICY_KS_MIN_STATE}");
        return result;
    }
    let mut rng = suite_stream(seed, 5);
    let states: Vec<Vec<f64>> = (0..n).map(|_| rng.uniform_vec(n_s)).collect();
    let actions: Vec<Vec<f64>> = states
        .par_iter()
        .map(|s| policy.optimal_action(s, false).expect("valid state"))
        .collect();
    let mut columns = vec![Vec::with_capacity(n); policy.output_dim()];
    for a in &actions {
        for (col, &x) in columns.iter_mut().zip(a) {
            col.push(x);
        }
    }
    let (stat, dim) = max_ks_per_dim(&columns);
    result.statistic = stat;
    result.passed = stat < POLICY_KS_THRESHOLD;
    result.sample_size = n as u64;
    result.note = format!("max KS over {} action dims at dim {dim}", columns.len());
    result
}

/// Smallest per-dimension action standard deviation of `policy` over `n`
/// uniform states.
pub fn min_action_std(policy: &DunPolicy, n: usize, rng: &mut RandomStream) -> f64 {
    let mut stats = vec![RunningStats::default(); policy.output_dim()];
    for _ in 0..n {
        let s = rng.uniform_vec(policy.input_dim());
        let a = policy.optimal_action(&s, false).expect("valid state");
        stats.iter_mut().zip(&a).for_each(|(st, &x)| st.push(x));
    }
    stats.iter().map(RunningStats::std_dev).fold(f64::INFINITY, f64::min)
}

/// (6) Policies across a grid of state dimensions and depths keep a
/// per-dimension action spread above [`MIN_ACTION_STD`]. Each grid policy is
/// the one an environment with `master_seed` and that shape would build.
pub fn check_non_collapse(
    master_seed: u64,
    n_action: usize,
    n_states: &[usize],
    depths: &[usize],
    n: usize,
    seed: u64,
    collapse: bool,
) -> CheckResult {
    let cells: Vec<(usize, usize)> = n_states
        .iter()
        .flat_map(|&ns| depths.iter().map(move |&d| (ns, d)))
        .collect();
    let stds: Vec<f64> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(ns, depth))| {
            let mut ps = RandomStream::derive(master_seed, StreamId::PolicyWeights);
            let mut policy = DunPolicy::build_with(ns, n_action, depth, &mut ps);
            if collapse {
                policy = collapse_policy(&policy);
            }
            let mut rng = RandomStream::derive(seed ^ ((i as u64) << 32), SUITE_STREAM_BASE + 6);
            min_action_std(&policy, n, &mut rng)
        })
        .collect();
    let (worst, cell) = stds
        .iter()
        .zip(&cells)
        .fold((f64::INFINITY, (0, 0)), |(w, c), (&s, &cell)| if s < w { (s, cell) } else { (w, c) });
    CheckResult {
        name: "non_collapse".into(),
        statistic: worst,
        threshold: MIN_ACTION_STD,
        lower_threshold: None,
        passed: !cells.is_empty() && worst > MIN_ACTION_STD,
        sample_size: (n * cells.len()) as u64,
        seed,
        note: format!(
            "min std over {} cells at N_s = {}, depth = {}",
            cells.len(),
            cell.0,
            cell.1
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_budget() -> VerifyBudget {
        VerifyBudget {
            transition_states: 20_000,
            mass_actions: 2_000,
            lipschitz_pairs: 20_000,
            policy_states: 20_000,
            collapse_states: 2_000,
            collapse_n_state: vec![1, 8],
            collapse_depth: vec![1, 5],
            suite_seed: 7,
        }
    }

    #[test]
    fn default_config_passes_small_budget() {
        let report = verify_environment(&EnvConfig::default(), &small_budget()).unwrap();
        assert_eq!(report.checks.len(), 6);
        assert!(report.all_passed(), "{}", report.to_table());
    }

    #[test]
    fn negative_controls_fail_their_check() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let b = small_budget();
        let failing = |c: Corruption| {
            verify(&env, &b, c)
                .checks
                .into_iter()
                .filter(|r| !r.passed)
                .map(|r| r.name)
                .collect::<Vec<_>>()
        };
        assert!(failing(Corruption::NonStochasticRow).contains(&"action_mass".to_string()));
        assert_eq!(failing(Corruption::SigmoidActivation), vec!["transition_uniformity"]);
        let collapsed = failing(Corruption::CollapsedPolicy);
        assert!(collapsed.contains(&"non_collapse".to_string()));
        assert!(collapsed.contains(&"policy_uniformity".to_string()));
    }

    #[test]
    fn deterministic_given_seed() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let a = verify(&env, &small_budget(), Corruption::None);
        let b = verify(&env, &small_budget(), Corruption::None);
        assert_eq!(a, b);
    }

    #[test]
    fn policy_check_not_applicable_below_eight_states() {
        let cfg = EnvConfig {
            n_state: 4,
            ..EnvConfig::default()
        };
        let env = Environment::new(cfg).unwrap();
        let r = check_policy_uniformity(env.policy(), 1000, 0);
        assert!(r.passed);
        assert_eq!(r.sample_size, 0);
        assert!(r.note.starts_with("not applicable"));
    }

    #[test]
    fn variance_extremes_hit_bounds() {
        // Uniform rows reach the lower bound, one-hot rows the upper one.
        let flat = TransitionKernel::from_parts(Matrix::from_row_major(2, 4, vec![0.25; 8]), vec![0.0; 4]).unwrap();
        let (v, lo, _) = injected_variance(&flat);
        assert!((v - lo).abs() < 1e-15);
        let mut w = Matrix::zeros(2, 4);
        w[(0, 1)] = 1.0;
        w[(1, 3)] = 1.0;
        let onehot = TransitionKernel::from_parts(w, vec![0.0; 4]).unwrap();
        let (v, _, hi) = injected_variance(&onehot);
        assert!((v - hi).abs() < 1e-15);
        assert!(check_variance_bounds(&onehot, 0).passed);
    }

    #[test]
    fn corruption_names_parse() {
        assert_eq!("sigmoid".parse::<Corruption>().unwrap(), Corruption::SigmoidActivation);
        assert!("bogus".parse::<Corruption>().is_err());
    }

    #[test]
    fn report_round_trips_json() {
        let report = verify_environment(&EnvConfig::default(), &small_budget()).unwrap();
        let back: VerifyReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        assert!(report.to_table().contains("6/6 checks passed"));
    }
}
