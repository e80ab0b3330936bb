//! The full environment: kernel, optimal policy, and reward engine wired
//! into a reset/step episode loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Fnv1a64};
use crate::config::{EnvConfig, RawConfig};
use crate::error::{ensure_finite, ensure_len, CallbackError, Error, Result};
use crate::kernel::TransitionKernel;
use crate::linalg::Matrix;
use crate::policy::{DunPolicy, UniformLayer};
use crate::reward::{augment_observation, check_termination, step_reward, RewardLedger};
use crate::rng::{RandomStream, StreamId};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub s: Vec<f64>,
    pub ledger: RewardLedger,
    pub terminated: bool,
    pub truncated: bool,
}

impl EpisodeState {
    pub fn is_done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Diagnostics attached to every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// 1-based index of the step just taken.
    pub step_index: usize,
    /// State the action was applied to.
    pub state: Vec<f64>,
    /// Executed (clipped) action.
    pub action: Vec<f64>,
    pub a_star: Vec<f64>,
    pub tilde_r: f64,
    pub hat_r: f64,
    pub r: f64,
    pub regret_tilde: f64,
    pub regret_hat: f64,
    /// Fraction of action components that had to be clipped into `[0, 1]`.
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Clip into `[0, 1]`, returning the clipped vector and the clipped fraction.
pub fn clip_action(a: &[f64]) -> (Vec<f64>, f64) {
    let mut clipped = 0usize;
    let out = a
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clipped += 1;
            }
            c
        })
        .collect();
    let frac = if a.is_empty() {
        0.0
    } else {
        clipped as f64 / a.len() as f64
    };
    (out, frac)
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    kernel: Arc<TransitionKernel>,
    policy: Arc<DunPolicy>,
    payout_on_termination: bool,
    init_stream: RandomStream,
    episode: Option<EpisodeState>,
}

impl Environment {
    /// Derive kernel (streams 0/1) and policy (stream 2) from the config.
    pub fn new(config: EnvConfig) -> Result<Self> {
        let config = config.validated()?;
        let seed = config.master_seed;
        let kernel = TransitionKernel::init(
            &config,
            &mut RandomStream::derive(seed, StreamId::KernelWeights),
            &mut RandomStream::derive(seed, StreamId::KernelBias),
        );
        let policy = DunPolicy::build(&config, &mut RandomStream::derive(seed, StreamId::PolicyWeights));
        Self::from_parts(config, kernel, policy)
    }

    /// Assemble from explicit parts, checking that shapes agree with the
    /// config. Kernel stochasticity is not enforced here.
    pub fn from_parts(config: EnvConfig, kernel: TransitionKernel, policy: DunPolicy) -> Result<Self> {
        let config = config.validated()?;
        ensure_len("kernel state dim", config.n_state, kernel.n_state())?;
        ensure_len("kernel action dim", config.n_action, kernel.n_action())?;
        ensure_len("policy input dim", config.n_state, policy.input_dim())?;
        ensure_len("policy output dim", config.n_action, policy.output_dim())?;
        ensure_len("policy depth", config.policy_complexity, policy.depth())?;
        Ok(Self {
            init_stream: RandomStream::derive(config.master_seed, StreamId::InitialStates),
            config,
            kernel: Arc::new(kernel),
            policy: Arc::new(policy),
            payout_on_termination: true,
            episode: None,
        })
    }

    pub fn with_payout_on_termination(mut self, enabled: bool) -> Self {
        self.payout_on_termination = enabled;
        self
    }

    pub fn payout_on_termination(&self) -> bool {
        self.payout_on_termination
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn policy(&self) -> &DunPolicy {
        &self.policy
    }

    pub fn shared_policy(&self) -> Arc<DunPolicy> {
        Arc::clone(&self.policy)
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    pub fn observation_dim(&self) -> usize {
        self.config.observation_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.config.n_action
    }

    /// Start a new episode with `s₀ ~ U(0,1)^N_s`.
    ///
    /// Passing `episode_seed` reseeds the initial-state stream; later resets
    /// without a seed continue from it.
    pub fn reset(&mut self, episode_seed: Option<u64>) -> Vec<f64> {
        if let Some(seed) = episode_seed {
            self.init_stream = RandomStream::derive(seed, StreamId::InitialStates);
        }
        let s = self.init_stream.uniform_vec(self.config.n_state);
        let obs = augment_observation(&s, 0, self.config.horizon, 0.0, self.config.reward_interval);
        self.episode = Some(EpisodeState {
            s,
            ledger: RewardLedger::new(self.payout_on_termination),
            terminated: false,
            truncated: false,
        });
        obs
    }

    /// Current augmented observation.
    pub fn observation(&self) -> Result<Vec<f64>> {
        let ep = self.episode.as_ref().ok_or(Error::NoEpisode)?;
        Ok(augment_observation(
            &ep.s,
            ep.ledger.step_index,
            self.config.horizon,
            ep.ledger.cumulative,
            self.config.reward_interval,
        ))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let cfg = self.config;
        let ep = self.episode.as_mut().ok_or(Error::NoEpisode)?;
        if ep.is_done() {
            return Err(Error::EpisodeFinished);
        }
        ensure_len("action", cfg.n_action, action.len())?;
        ensure_finite("action", action)?;

        let (clipped, clip_fraction) = clip_action(action);
        let a_star = self.policy.act(&ep.s)?;
        let rewards = step_reward(&clipped, &a_star, cfg.min_reward)?;
        let step_index = ep.ledger.step_index + 1;
        let terminated = check_termination(rewards.r, cfg.survival_difficulty);
        let truncated = step_index == cfg.horizon;
        let ending = truncated || (terminated && ep.ledger.payout_on_termination);
        let payout = ep
            .ledger
            .accumulate_and_payout(rewards.r, cfg.reward_interval, ending);
        let next = self.kernel.step(&ep.s, &clipped)?;
        let state = std::mem::replace(&mut ep.s, next);
        ep.terminated = terminated;
        ep.truncated = truncated;

        let observation = augment_observation(
            &ep.s,
            step_index,
            cfg.horizon,
            ep.ledger.cumulative,
            cfg.reward_interval,
        );
        Ok(StepResult {
            observation,
            reward: payout,
            terminated,
            truncated,
            info: StepInfo {
                step_index,
                state,
                action: clipped,
                a_star,
                tilde_r: rewards.tilde_r,
                hat_r: rewards.hat_r,
                r: rewards.r,
                regret_tilde: 1.0 - rewards.tilde_r,
                regret_hat: 1.0 - rewards.hat_r,
                clip_fraction,
            },
        })
    }

    /// Run `n_episodes` full episodes with `policy_fn` choosing actions from
    /// augmented observations.
    pub fn rollout<F>(&mut self, policy_fn: F, n_episodes: usize) -> Result<RolloutSummary>
    where
        F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, CallbackError>,
    {
        self.rollout_observed(policy_fn, n_episodes, |_, _| {})
    }

    /// [`Environment::rollout`] that also hands every step, with its episode
    /// index, to `on_step`.
    pub fn rollout_observed<F, O>(
        &mut self,
        mut policy_fn: F,
        n_episodes: usize,
        mut on_step: O,
    ) -> Result<RolloutSummary>
    where
        F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, CallbackError>,
        O: FnMut(usize, &StepResult),
    {
        if n_episodes == 0 {
            return Err(Error::InvalidArgument("n_episodes must be ≥ 1".into()));
        }
        let mut episodes = Vec::with_capacity(n_episodes);
        for episode in 0..n_episodes {
            let mut obs = self.reset(None);
            let mut summary = EpisodeSummary {
                episode,
                total_return: 0.0,
                length: 0,
                mean_tilde_r: 0.0,
                mean_step_reward: 0.0,
                terminated: false,
            };
            loop {
                let action = policy_fn(&obs).map_err(|source| Error::Callback {
                    state: obs.clone(),
                    source,
                })?;
                let step = self.step(&action)?;
                on_step(episode, &step);
                summary.total_return += step.reward;
                summary.length += 1;
                summary.mean_tilde_r += step.info.tilde_r;
                summary.mean_step_reward += step.info.r;
                obs = step.observation;
                if step.terminated || step.truncated {
                    summary.terminated = step.terminated;
                    break;
                }
            }
            summary.mean_tilde_r /= summary.length as f64;
            summary.mean_step_reward /= summary.length as f64;
            episodes.push(summary);
        }
        Ok(RolloutSummary::from_episodes(episodes))
    }

    /// Serialize to a manifest document; `embed_weights` also stores the
    /// exact kernel and policy parameters.
    pub fn save_manifest(&self, embed_weights: bool) -> Result<String> {
        let manifest = EnvironmentManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            config: self.config,
            payout_on_termination: self.payout_on_termination,
            checksums: Checksums::of(&self.kernel, &self.policy),
            weights: embed_weights.then(|| EmbeddedWeights::of(&self.kernel, &self.policy)),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        Ok(text)
    }

    /// Rebuild an environment from a manifest, verifying every checksum.
    pub fn load_manifest(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Manifest("missing format_version".into()))?;
        if found != u64::from(MANIFEST_FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: MANIFEST_FORMAT_VERSION,
                found: found as u32,
            });
        }
        let manifest: EnvironmentManifest = serde_json::from_value(value)?;
        let config = RawConfig::from(manifest.config).validate()?;

        let env = match &manifest.weights {
            Some(w) => {
                let (kernel, policy) = w.decode(&config)?;
                Self::from_parts(config, kernel, policy)?
            }
            None => Self::new(config)?,
        };
        manifest
            .checksums
            .verify(&Checksums::of(&env.kernel, &env.policy))?;
        Ok(env.with_payout_on_termination(manifest.payout_on_termination))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub length: usize,
    pub mean_tilde_r: f64,
    pub mean_step_reward: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub episodes: Vec<EpisodeSummary>,
    pub mean_return: f64,
    pub mean_length: f64,
    /// Step-weighted mean of `tilde_r` over all steps.
    pub mean_tilde_r: f64,
    /// Step-weighted mean of the gated step reward over all steps.
    pub mean_step_reward: f64,
}

impl RolloutSummary {
    fn from_episodes(episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len() as f64;
        let steps: usize = episodes.iter().map(|e| e.length).sum();
        let weighted = |f: fn(&EpisodeSummary) -> f64| {
            episodes.iter().map(|e| f(e) * e.length as f64).sum::<f64>() / steps as f64
        };
        Self {
            mean_return: episodes.iter().map(|e| e.total_return).sum::<f64>() / n,
            mean_length: steps as f64 / n,
            mean_tilde_r: weighted(|e| e.mean_tilde_r),
            mean_step_reward: weighted(|e| e.mean_step_reward),
            episodes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvironmentManifest {
    format_version: u32,
    #[serde(flatten)]
    config: EnvConfig,
    #[serde(default = "default_true")]
    payout_on_termination: bool,
    checksums: Checksums,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<EmbeddedWeights>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checksums {
    kernel_weights: String,
    kernel_bias: String,
    policy: String,
}

impl Checksums {
    fn of(kernel: &TransitionKernel, policy: &DunPolicy) -> Self {
        let mut policy_hash = Fnv1a64::default();
        for layer in policy.layers() {
            policy_hash.update(&codec::f64s_to_le_bytes(layer.weights().as_slice()));
            policy_hash.update(&codec::f64s_to_le_bytes(layer.bias()));
        }
        Self {
            kernel_weights: codec::format_checksum(codec::checksum_f64s(kernel.weights().as_slice())),
            kernel_bias: codec::format_checksum(codec::checksum_f64s(kernel.bias())),
            policy: codec::format_checksum(policy_hash.finish()),
        }
    }

    fn verify(&self, computed: &Checksums) -> Result<()> {
        for (block, stored, actual) in [
            ("kernel_weights", &self.kernel_weights, &computed.kernel_weights),
            ("kernel_bias", &self.kernel_bias, &computed.kernel_bias),
            ("policy", &self.policy, &computed.policy),
        ] {
            if !stored.eq_ignore_ascii_case(actual) {
                return Err(Error::ChecksumMismatch {
                    block: block.to_string(),
                    stored: stored.clone(),
                    computed: actual.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddedLayer {
    n_in: usize,
    n_out: usize,
    weights: String,
    bias: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddedWeights {
    kernel_weights: String,
    kernel_bias: String,
    policy_layers: Vec<EmbeddedLayer>,
}

impl EmbeddedWeights {
    fn of(kernel: &TransitionKernel, policy: &DunPolicy) -> Self {
        Self {
            kernel_weights: codec::encode_f64s(kernel.weights().as_slice()),
            kernel_bias: codec::encode_f64s(kernel.bias()),
            policy_layers: policy
                .layers()
                .iter()
                .map(|l| EmbeddedLayer {
                    n_in: l.n_in(),
                    n_out: l.n_out(),
                    weights: codec::encode_f64s(l.weights().as_slice()),
                    bias: codec::encode_f64s(l.bias()),
                })
                .collect(),
        }
    }

    fn decode(&self, config: &EnvConfig) -> Result<(TransitionKernel, DunPolicy)> {
        let w = codec::decode_f64s(&self.kernel_weights)?;
        ensure_len("embedded kernel weights", config.n_action * config.n_state, w.len())?;
        let kernel = TransitionKernel::from_parts(
            Matrix::from_row_major(config.n_action, config.n_state, w),
            codec::decode_f64s(&self.kernel_bias)?,
        )?;
        let layers = self
            .policy_layers
            .iter()
            .map(|l| {
                let w = codec::decode_f64s(&l.weights)?;
                ensure_len("embedded layer weights", l.n_in * l.n_out, w.len())?;
                UniformLayer::from_parts(
                    Matrix::from_row_major(l.n_out, l.n_in, w),
                    codec::decode_f64s(&l.bias)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((kernel, DunPolicy::from_layers(layers)?))
    }
}
