//! Step rewards, interval payouts, termination, and observation augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};

/// Baseline similarity level reached by any state-independent centre guess.
pub const TRIVIAL_SIMILARITY: f64 = 0.75;

/// Rewards for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    /// `1 − MAE(a, a★)`.
    pub tilde_r: f64,
    /// `max(0, 4(tilde_r − 0.75))`.
    pub hat_r: f64,
    /// `hat_r` gated by the minimum-reward threshold.
    pub r: f64,
}

/// Full per-step result as seen by the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub tilde_r: f64,
    pub hat_r: f64,
    pub r: f64,
    /// Distributed payout.
    pub payout: f64,
    pub terminated: bool,
    pub truncated: bool,
}

pub fn mean_abs_error(a: &[f64], a_star: &[f64]) -> Result<f64> {
    ensure_len("action", a_star.len(), a.len())?;
    let l1: f64 = a.iter().zip(a_star).map(|(x, y)| (x - y).abs()).sum();
    Ok(l1 / a.len() as f64)
}

pub fn step_reward(a: &[f64], a_star: &[f64], min_reward: f64) -> Result<StepReward> {
    let tilde_r = 1.0 - mean_abs_error(a, a_star)?;
    let hat_r = (4.0 * (tilde_r - TRIVIAL_SIMILARITY)).max(0.0);
    let r = if hat_r > min_reward { hat_r } else { 0.0 };
    Ok(StepReward { tilde_r, hat_r, r })
}

/// Instantaneous regret `(1 − tilde_r, 1 − hat_r)`; the optimal step value
/// is 1 under both measures.
pub fn compute_regret(a: &[f64], a_star: &[f64]) -> Result<(f64, f64)> {
    let StepReward { tilde_r, hat_r, .. } = step_reward(a, a_star, 0.0)?;
    Ok((1.0 - tilde_r, 1.0 - hat_r))
}

/// Strict `r < D`, so `D = 0` never terminates.
pub fn check_termination(r: f64, survival_difficulty: f64) -> bool {
    r < survival_difficulty
}

/// Running reward accumulator for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    /// Undistributed reward `r_cum`.
    pub cumulative: f64,
    /// Index of the last completed step; 0 before the first step.
    pub step_index: usize,
    /// Pay out accrued reward when the episode terminates early.
    pub payout_on_termination: bool,
}

impl Default for RewardLedger {
    fn default() -> Self {
        Self::new(true)
    }
}

impl RewardLedger {
    pub fn new(payout_on_termination: bool) -> Self {
        Self {
            cumulative: 0.0,
            step_index: 0,
            payout_on_termination,
        }
    }

    /// Record step reward `r` as step `step_index + 1` and return the payout.
    ///
    /// A payout happens on every `k`-th step and whenever `episode_ending`
    /// is set; the accumulator is cleared afterwards.
    pub fn accumulate_and_payout(&mut self, r: f64, k: usize, episode_ending: bool) -> f64 {
        self.step_index += 1;
        self.cumulative += r;
        if self.step_index.is_multiple_of(k) || episode_ending {
            std::mem::take(&mut self.cumulative)
        } else {
            0.0
        }
    }
}

/// `[s, t/T, r_cum/k]`.
pub fn augment_observation(
    s: &[f64],
    t: usize,
    horizon: usize,
    r_cum: f64,
    k: usize,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(s.len() + 2);
    obs.extend_from_slice(s);
    obs.push(t as f64 / horizon as f64);
    obs.push(r_cum / k as f64);
    obs
}
