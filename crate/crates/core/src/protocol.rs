//! The agent-side contract shared by both protocols.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AgentOverride, EngineError};
use crate::rng::AgentRng;

/// Opinion bit, `0` or `1`.
pub type Bit = u8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("noise level {delta} must lie in [0, {limit})")]
    DeltaOutOfRange { delta: f64, limit: f64 },
    #[error("bias s = |s1 - s0| must be at least 1")]
    ZeroBias,
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("scale constant c1 must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Whether an agent is a source, and with which preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source { preference: Bit },
    NonSource,
}

impl Role {
    pub fn is_source(self) -> bool {
        matches!(self, Role::Source { .. })
    }
}

/// Base of the logarithm used in the parameter formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" => Ok(LogBase::Natural),
            "2" => Ok(LogBase::Two),
            other => Err(format!("unsupported log base `{other}` (expected `e` or `2`)")),
        }
    }
}

/// Ceiling that ignores floating-point noise just above an integer.
#[inline]
pub(crate) fn ceil_tol(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// `1` if `count1 > count0`, `0` if `count0 > count1`, a fair coin otherwise.
/// The coin is only drawn on a tie.
#[inline]
pub fn majority_bit<R: Rng + ?Sized>(count0: u64, count1: u64, rng: &mut R) -> Bit {
    match count1.cmp(&count0) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => rng.random_bool(0.5) as Bit,
    }
}

/// Per-agent behaviour plugged into the round engine.
///
/// Agents only ever see anonymous message lists; indices exist for the
/// engine's bookkeeping.
pub trait Protocol: Sync {
    type Agent: Clone + Send + Sync + std::fmt::Debug;

    fn name(&self) -> &'static str;

    fn alphabet_size(&self) -> usize;

    /// Clean start state. `rng` is the agent's initialization stream.
    fn new_agent(&self, role: Role, rng: &mut AgentRng) -> Self::Agent;

    fn role(&self, agent: &Self::Agent) -> Role;

    fn display(&self, agent: &Self::Agent) -> u8;

    /// Delivers one round of `h` observations. Returns `true` when the agent
    /// recomputed its opinion this round.
    fn receive(&self, agent: &mut Self::Agent, messages: &[u8], rng: &mut AgentRng) -> bool;

    fn opinion(&self, agent: &Self::Agent) -> Option<Bit>;

    fn weak_opinion(&self, agent: &Self::Agent) -> Option<Bit>;

    /// An inert agent no longer reacts to messages.
    fn is_inert(&self, _agent: &Self::Agent) -> bool {
        false
    }

    /// Total number of rounds when the protocol runs on a fixed global
    /// schedule; `None` for protocols that run forever.
    fn fixed_schedule(&self) -> Option<usize> {
        None
    }

    /// Whether adversarial initialization is part of the protocol's contract.
    fn self_stabilizing(&self) -> bool;

    fn apply_override(&self, agent: &mut Self::Agent, o: &AgentOverride) -> Result<(), EngineError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn majority_bit_strict_cases() {
        let mut rng = AgentRng::seed_from_u64(0);
        assert_eq!(majority_bit(3, 5, &mut rng), 1);
        assert_eq!(majority_bit(5, 3, &mut rng), 0);
    }

    #[test]
    fn majority_bit_tie_is_fair() {
        let mut rng = AgentRng::seed_from_u64(5);
        let trials = 100_000;
        let ones: u64 = (0..trials).map(|_| majority_bit(4, 4, &mut rng) as u64).sum();
        let freq = ones as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }
}
