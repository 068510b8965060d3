//! Source Filter: two symmetric listening phases followed by majority
//! boosting, for synchronously started agents over the binary alphabet.
//!
//! Phase 0 (T rounds): non-sources display 0, sources their preference;
//! every agent counts observed 1s. Phase 1 (T rounds): non-sources display
//! 1; every agent counts observed 0s. The weak opinion compares the two
//! counters. Boosting then runs `L` short sub-phases of `w` messages and one
//! long sub-phase of `m` messages, each ending with a majority vote.

use serde::{Deserialize, Serialize};

use crate::engine::{AgentOverride, EngineError};
use crate::protocol::{ceil_tol, majority_bit, Bit, LogBase, ParamError, Protocol, Role};
use crate::rng::AgentRng;

/// Which phase-0/1 messages feed the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// Every message received during the phase (`T·h ≥ m` of them).
    #[default]
    All,
    /// Only the first `m` messages of each phase.
    StrictM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfParams {
    /// Messages per listening phase.
    pub m: usize,
    pub h: usize,
    /// Phase duration `⌈m/h⌉`.
    pub phase_rounds: usize,
    /// Short sub-phase message budget `⌈100/(1−2δ)²⌉`.
    pub subphase_budget: usize,
    /// Number of short sub-phases `⌈10·log n⌉`.
    pub short_subphases: usize,
    pub c1: f64,
    pub delta: f64,
    pub log_base: LogBase,
    pub counting: Counting,
}

/// Message budget `m` for Source Filter, before the ceiling.
pub fn sf_message_budget(n: f64, h: usize, delta: f64, s0: usize, s1: usize, c1: f64, log_base: LogBase) -> f64 {
    let s = s1.abs_diff(s0) as f64;
    let log_n = log_base.log(n);
    let one_minus = 1.0 - 2.0 * delta;
    let noise = n * delta * log_n / ((s * s).min(n) * one_minus * one_minus);
    let spread = n.sqrt() * log_n / s;
    let sources = (s0 + s1) as f64 * log_n / (s * s);
    c1 * (noise + spread + sources + h as f64 * log_n)
}

impl SfParams {
    /// Derives `m` from the population parameters.
    pub fn derive(
        n: f64,
        h: usize,
        delta: f64,
        s0: usize,
        s1: usize,
        c1: f64,
        log_base: LogBase,
    ) -> Result<Self, ParamError> {
        check_inputs(h, delta, c1)?;
        if s1 == s0 {
            return Err(ParamError::ZeroBias);
        }
        let m = ceil_tol(sf_message_budget(n, h, delta, s0, s1, c1, log_base)).max(1);
        Self::with_m(m, n, h, delta, c1, log_base)
    }

    /// Uses an explicit `m`, bypassing the formula.
    pub fn with_m(m: usize, n: f64, h: usize, delta: f64, c1: f64, log_base: LogBase) -> Result<Self, ParamError> {
        check_inputs(h, delta, c1)?;
        if m == 0 {
            return Err(ParamError::Zero("m"));
        }
        let one_minus = 1.0 - 2.0 * delta;
        Ok(Self {
            m,
            h,
            phase_rounds: m.div_ceil(h),
            subphase_budget: ceil_tol(100.0 / (one_minus * one_minus)),
            short_subphases: ceil_tol(10.0 * log_base.log(n).max(0.0)),
            c1,
            delta,
            log_base,
            counting: Counting::All,
        })
    }

    pub fn with_counting(mut self, counting: Counting) -> Self {
        self.counting = counting;
        self
    }

    /// Rounds spent in majority boosting: `L·⌈w/h⌉ + ⌈m/h⌉`.
    pub fn boosting_rounds(&self) -> usize {
        self.short_subphases * self.subphase_budget.div_ceil(self.h) + self.m.div_ceil(self.h)
    }

    /// Full schedule: `2T + L·⌈w/h⌉ + ⌈m/h⌉`.
    pub fn total_rounds(&self) -> usize {
        2 * self.phase_rounds + self.boosting_rounds()
    }
}

fn check_inputs(h: usize, delta: f64, c1: f64) -> Result<(), ParamError> {
    if h == 0 {
        return Err(ParamError::Zero("h"));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(ParamError::DeltaOutOfRange { delta, limit: 0.5 });
    }
    if !(c1.is_finite() && c1 > 0.0) {
        return Err(ParamError::BadScale(c1));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfPhase {
    Phase0,
    Phase1,
    Boost,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SfAgent {
    pub role: Role,
    pub phase: SfPhase,
    /// Rounds elapsed in the current listening phase.
    pub phase_round: usize,
    /// Messages seen in the current listening phase.
    pub phase_seen: usize,
    pub counter0: u64,
    pub counter1: u64,
    /// Boosting memory as a multiset of bits.
    pub boost0: u64,
    pub boost1: u64,
    /// 1-based sub-phase index; `L + 1` is the long sub-phase.
    pub subphase: usize,
    pub weak_opinion: Option<Bit>,
    pub opinion: Option<Bit>,
}

impl SfAgent {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            phase: SfPhase::Phase0,
            phase_round: 0,
            phase_seen: 0,
            counter0: 0,
            counter1: 0,
            boost0: 0,
            boost1: 0,
            subphase: 1,
            weak_opinion: None,
            opinion: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceFilter {
    pub params: SfParams,
}

impl SourceFilter {
    pub fn new(params: SfParams) -> Self {
        Self { params }
    }

    fn counts(&self, agent: &mut SfAgent) -> bool {
        match self.params.counting {
            Counting::All => true,
            Counting::StrictM => {
                if agent.phase_seen < self.params.m {
                    agent.phase_seen += 1;
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Display rule: listening phases show the preference (sources) or the
/// phase's constant; boosting shows the current opinion.
pub fn sf_display(agent: &SfAgent) -> Bit {
    match (agent.phase, agent.role) {
        (SfPhase::Phase0 | SfPhase::Phase1, Role::Source { preference }) => preference,
        (SfPhase::Phase0, Role::NonSource) => 0,
        (SfPhase::Phase1, Role::NonSource) => 1,
        (SfPhase::Boost | SfPhase::Done, _) => agent.opinion.unwrap_or(0),
    }
}

impl Protocol for SourceFilter {
    type Agent = SfAgent;

    fn name(&self) -> &'static str {
        "sf"
    }

    fn alphabet_size(&self) -> usize {
        2
    }

    fn new_agent(&self, role: Role, _rng: &mut AgentRng) -> SfAgent {
        SfAgent::new(role)
    }

    fn role(&self, agent: &SfAgent) -> Role {
        agent.role
    }

    fn display(&self, agent: &SfAgent) -> u8 {
        sf_display(agent)
    }

    fn receive(&self, agent: &mut SfAgent, messages: &[u8], rng: &mut AgentRng) -> bool {
        let p = &self.params;
        match agent.phase {
            SfPhase::Phase0 => {
                for &msg in messages {
                    if self.counts(agent) && msg == 1 {
                        agent.counter1 += 1;
                    }
                }
                agent.phase_round += 1;
                if agent.phase_round >= p.phase_rounds {
                    agent.phase = SfPhase::Phase1;
                    agent.phase_round = 0;
                    agent.phase_seen = 0;
                }
                false
            }
            SfPhase::Phase1 => {
                for &msg in messages {
                    if self.counts(agent) && msg == 0 {
                        agent.counter0 += 1;
                    }
                }
                agent.phase_round += 1;
                if agent.phase_round < p.phase_rounds {
                    return false;
                }
                let weak = majority_bit(agent.counter0, agent.counter1, rng);
                agent.weak_opinion = Some(weak);
                agent.opinion = Some(weak);
                agent.phase = SfPhase::Boost;
                agent.subphase = 1;
                agent.boost0 = 0;
                agent.boost1 = 0;
                true
            }
            SfPhase::Boost => {
                for &msg in messages {
                    if msg == 1 {
                        agent.boost1 += 1;
                    } else {
                        agent.boost0 += 1;
                    }
                }
                let budget = if agent.subphase <= p.short_subphases { p.subphase_budget } else { p.m };
                if ((agent.boost0 + agent.boost1) as usize) < budget {
                    return false;
                }
                agent.opinion = Some(majority_bit(agent.boost0, agent.boost1, rng));
                agent.boost0 = 0;
                agent.boost1 = 0;
                agent.subphase += 1;
                if agent.subphase > p.short_subphases + 1 {
                    agent.phase = SfPhase::Done;
                }
                true
            }
            SfPhase::Done => false,
        }
    }

    fn opinion(&self, agent: &SfAgent) -> Option<Bit> {
        agent.opinion
    }

    fn weak_opinion(&self, agent: &SfAgent) -> Option<Bit> {
        agent.weak_opinion
    }

    fn is_inert(&self, agent: &SfAgent) -> bool {
        agent.phase == SfPhase::Done
    }

    fn fixed_schedule(&self) -> Option<usize> {
        Some(self.params.total_rounds())
    }

    fn self_stabilizing(&self) -> bool {
        false
    }

    fn apply_override(&self, agent: &mut SfAgent, o: &AgentOverride) -> Result<(), EngineError> {
        if let Some(op) = o.opinion {
            agent.opinion = Some(op);
        }
        if let Some(w) = o.weak_opinion {
            agent.weak_opinion = Some(w);
        }
        if let Some(mem) = &o.memory {
            if mem.len() != 2 {
                return Err(EngineError::InvalidOverride(format!(
                    "source filter boosting memory has 2 counts, got {}",
                    mem.len()
                )));
            }
            agent.boost0 = mem[0] as u64;
            agent.boost1 = mem[1] as u64;
        }
        Ok(())
    }
}
