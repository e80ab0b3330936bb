//! Reference agents: the optimal policy, the constant-0.5 "center" policy,
//! and the noisy behavior policy used for offline data.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::env::Environment;
use crate::error::{CallbackError, Error, Result};
use crate::offline::BehaviorPolicy;
use crate::policy::DunPolicy;

/// Parsed agent name: `optimal`, `center`, or `noise:ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentKind {
    Optimal,
    Center,
    Noise(f64),
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "center" => Ok(Self::Center),
            _ => {
                let nu = s
                    .strip_prefix("noise:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown policy '{s}' (expected optimal, center or noise:<nu>)"
                        ))
                    })?;
                if !(0.0..=1.0).contains(&nu) {
                    return Err(Error::InvalidArgument(format!("noise level must lie in [0,1], got {nu}")));
                }
                Ok(Self::Noise(nu))
            }
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Optimal => write!(f, "optimal"),
            Self::Center => write!(f, "center"),
            Self::Noise(nu) => write!(f, "noise:{nu}"),
        }
    }
}

/// An agent bound to an environment. Acts on augmented observations
/// `[s, t/T, r_cum/k]`, using only the state part.
#[derive(Debug, Clone)]
pub enum ReferenceAgent {
    Optimal { policy: Arc<DunPolicy> },
    Center { n_state: usize, n_action: usize },
    Noise { n_state: usize, policy: Box<BehaviorPolicy> },
}

impl ReferenceAgent {
    pub fn new(kind: AgentKind, env: &Environment) -> Result<Self> {
        let n_state = env.config().n_state;
        Ok(match kind {
            AgentKind::Optimal => Self::Optimal {
                policy: env.shared_policy(),
            },
            AgentKind::Center => Self::Center {
                n_state,
                n_action: env.config().n_action,
            },
            AgentKind::Noise(nu) => Self::Noise {
                n_state,
                policy: Box::new(BehaviorPolicy::new(env, nu)?),
            },
        })
    }

    /// True when actions do not depend on internal random state, so the
    /// agent may be queried from several threads.
    pub fn is_stateless(&self) -> bool {
        !matches!(self, Self::Noise { .. })
    }

    /// Action for a stateless agent; `None` for the noise agent.
    pub fn act_stateless(&self, obs: &[f64]) -> Option<Result<Vec<f64>>> {
        match self {
            Self::Optimal { policy } => Some(policy.act(&obs[..policy.input_dim()])),
            Self::Center { n_state, n_action } => Some(if obs.len() < *n_state {
                Err(Error::DimensionMismatch {
                    what: "observation",
                    expected: *n_state,
                    actual: obs.len(),
                })
            } else {
                Ok(vec![0.5; *n_action])
            }),
            Self::Noise { .. } => None,
        }
    }

    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        if let Self::Noise { n_state, policy } = self {
            if obs.len() < *n_state {
                return Err(Error::DimensionMismatch {
                    what: "observation",
                    expected: *n_state,
                    actual: obs.len(),
                });
            }
            return policy.behavior_action(&obs[..*n_state]);
        }
        self.act_stateless(obs).expect("stateless agent")
    }

    /// Adapter for the callback-style APIs of [`Environment::rollout`] and
    /// the evaluation functions.
    pub fn callback(&mut self) -> impl FnMut(&[f64]) -> std::result::Result<Vec<f64>, CallbackError> + '_ {
        move |obs| self.act(obs).map_err(CallbackError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;

    #[test]
    fn parse_and_display() {
        assert_eq!("optimal".parse::<AgentKind>().unwrap(), AgentKind::Optimal);
        assert_eq!("noise:0.25".parse::<AgentKind>().unwrap(), AgentKind::Noise(0.25));
        assert_eq!(AgentKind::Noise(1.0).to_string(), "noise:1");
        assert!("noise:1.5".parse::<AgentKind>().is_err());
        assert!("noise:".parse::<AgentKind>().is_err());
        assert!("random".parse::<AgentKind>().is_err());
    }

    #[test]
    fn optimal_agent_earns_full_return() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        let mut agent = ReferenceAgent::new(AgentKind::Optimal, &env).unwrap();
        let summary = env.rollout(agent.callback(), 3).unwrap();
        assert_eq!(summary.mean_return, 100.0);
    }

    #[test]
    fn noise_zero_matches_optimal() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let mut noisy = ReferenceAgent::new(AgentKind::Noise(0.0), &env).unwrap();
        let optimal = ReferenceAgent::new(AgentKind::Optimal, &env).unwrap();
        let obs = [0.3, 0.1, 0.9, 0.5, 0.2, 0.7, 0.4, 0.6, 0.0, 0.0];
        assert_eq!(noisy.act(&obs).unwrap(), optimal.act_stateless(&obs).unwrap().unwrap());
        assert!(!noisy.is_stateless());
    }
}
