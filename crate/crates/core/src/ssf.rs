//! Self-stabilizing Source Filter over the alphabet `{0,1}²`.
//!
//! Messages carry a source tag and a value bit. Agents accumulate observed
//! messages; once memory holds at least `m` of them, the weak opinion becomes
//! the majority value among source-tagged messages, the opinion the majority
//! value among all messages, and memory is flushed. No clock is needed, so
//! any initial memory content is eventually washed out.

use serde::{Deserialize, Serialize};

use crate::engine::{AgentOverride, EngineError};
use crate::protocol::{ceil_tol, majority_bit, Bit, LogBase, ParamError, Protocol, Role};
use crate::rng::AgentRng;

/// A two-bit message. Alphabet index is `2·source_bit + value_bit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symbol2 {
    pub source_bit: Bit,
    pub value_bit: Bit,
}

impl Symbol2 {
    pub const fn new(source_bit: Bit, value_bit: Bit) -> Self {
        Self { source_bit, value_bit }
    }

    #[inline]
    pub const fn index(self) -> u8 {
        2 * self.source_bit + self.value_bit
    }

    #[inline]
    pub const fn from_index(index: u8) -> Self {
        Self { source_bit: (index >> 1) & 1, value_bit: index & 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsfParams {
    /// Memory size that triggers an update.
    pub m: usize,
    pub c1: f64,
    pub delta: f64,
    pub log_base: LogBase,
}

/// `c1·(δ·n·log n/(1−4δ)² + n)`, before the ceiling.
pub fn ssf_memory_budget(n: f64, delta: f64, c1: f64, log_base: LogBase) -> f64 {
    let one_minus = 1.0 - 4.0 * delta;
    c1 * (delta * n * log_base.log(n) / (one_minus * one_minus) + n)
}

impl SsfParams {
    pub fn derive(n: f64, h: usize, delta: f64, c1: f64, log_base: LogBase) -> Result<Self, ParamError> {
        check_inputs(h, delta, c1)?;
        let m = ceil_tol(ssf_memory_budget(n, delta, c1, log_base)).max(1);
        Ok(Self { m, c1, delta, log_base })
    }

    pub fn with_m(m: usize, h: usize, delta: f64, c1: f64, log_base: LogBase) -> Result<Self, ParamError> {
        check_inputs(h, delta, c1)?;
        if m == 0 {
            return Err(ParamError::Zero("m"));
        }
        Ok(Self { m, c1, delta, log_base })
    }

    /// Rounds between two updates of an agent with clean memory.
    pub fn update_period(&self, h: usize) -> usize {
        self.m.div_ceil(h)
    }
}

fn check_inputs(h: usize, delta: f64, c1: f64) -> Result<(), ParamError> {
    if h == 0 {
        return Err(ParamError::Zero("h"));
    }
    if !(0.0..0.25).contains(&delta) {
        return Err(ParamError::DeltaOutOfRange { delta, limit: 0.25 });
    }
    if !(c1.is_finite() && c1 > 0.0) {
        return Err(ParamError::BadScale(c1));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsfAgent {
    pub role: Role,
    /// Multiset of messages as counts per alphabet index.
    pub memory: [u64; 4],
    pub weak_opinion: Bit,
    pub opinion: Bit,
    /// How many messages in `memory` were planted at initialization rather
    /// than delivered by the engine.
    pub planted: u64,
    pub updates: u64,
}

impl SsfAgent {
    pub fn memory_len(&self) -> u64 {
        self.memory.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct SelfStabilizingSourceFilter {
    pub params: SsfParams,
}

impl SelfStabilizingSourceFilter {
    pub fn new(params: SsfParams) -> Self {
        Self { params }
    }
}

pub fn ssf_display(agent: &SsfAgent) -> Symbol2 {
    match agent.role {
        Role::Source { preference } => Symbol2::new(1, preference),
        Role::NonSource => Symbol2::new(0, agent.weak_opinion),
    }
}

impl Protocol for SelfStabilizingSourceFilter {
    type Agent = SsfAgent;

    fn name(&self) -> &'static str {
        "ssf"
    }

    fn alphabet_size(&self) -> usize {
        4
    }

    fn new_agent(&self, role: Role, rng: &mut AgentRng) -> SsfAgent {
        use rand::Rng;
        SsfAgent {
            role,
            memory: [0; 4],
            weak_opinion: rng.random_bool(0.5) as Bit,
            opinion: rng.random_bool(0.5) as Bit,
            planted: 0,
            updates: 0,
        }
    }

    fn role(&self, agent: &SsfAgent) -> Role {
        agent.role
    }

    fn display(&self, agent: &SsfAgent) -> u8 {
        ssf_display(agent).index()
    }

    fn receive(&self, agent: &mut SsfAgent, messages: &[u8], rng: &mut AgentRng) -> bool {
        for &msg in messages {
            agent.memory[msg as usize] += 1;
        }
        if (agent.memory_len() as usize) < self.params.m {
            return false;
        }
        let [m00, m01, m10, m11] = agent.memory;
        // Weak opinion first: its coin position in the stream must not
        // depend on whether the opinion vote ties.
        agent.weak_opinion = majority_bit(m10, m11, rng);
        agent.opinion = majority_bit(m00 + m10, m01 + m11, rng);
        agent.memory = [0; 4];
        agent.planted = 0;
        agent.updates += 1;
        true
    }

    fn opinion(&self, agent: &SsfAgent) -> Option<Bit> {
        Some(agent.opinion)
    }

    fn weak_opinion(&self, agent: &SsfAgent) -> Option<Bit> {
        Some(agent.weak_opinion)
    }

    fn self_stabilizing(&self) -> bool {
        true
    }

    fn apply_override(&self, agent: &mut SsfAgent, o: &AgentOverride) -> Result<(), EngineError> {
        if let Some(op) = o.opinion {
            agent.opinion = op;
        }
        if let Some(w) = o.weak_opinion {
            agent.weak_opinion = w;
        }
        if let Some(mem) = &o.memory {
            if mem.len() != 4 {
                return Err(EngineError::InvalidOverride(format!(
                    "memory must be a count vector of length 4, got {}",
                    mem.len()
                )));
            }
            for (slot, &c) in agent.memory.iter_mut().zip(mem) {
                *slot = c as u64;
            }
            agent.planted = agent.memory_len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn agent(role: Role) -> SsfAgent {
        SsfAgent { role, memory: [0; 4], weak_opinion: 0, opinion: 0, planted: 0, updates: 0 }
    }

    #[test]
    fn symbol_encoding_is_bijective() {
        for idx in 0..4u8 {
            assert_eq!(Symbol2::from_index(idx).index(), idx);
        }
        assert_eq!(Symbol2::new(1, 0).index(), 2);
        assert_eq!(Symbol2::new(0, 1).index(), 1);
    }

    #[test]
    fn memory_budget_examples() {
        assert_eq!(SsfParams::derive(100.0, 1, 0.0, 1.0, LogBase::Natural).unwrap().m, 100);
        assert_eq!(SsfParams::derive(100.0, 1, 0.1, 1.0, LogBase::Natural).unwrap().m, 228);
        assert!(matches!(
            SsfParams::derive(100.0, 1, 0.25, 1.0, LogBase::Natural),
            Err(ParamError::DeltaOutOfRange { .. })
        ));
    }

    #[test]
    fn display_rules() {
        assert_eq!(ssf_display(&agent(Role::Source { preference: 0 })), Symbol2::new(1, 0));
        let mut a = agent(Role::NonSource);
        a.weak_opinion = 1;
        assert_eq!(ssf_display(&a), Symbol2::new(0, 1));
        a.weak_opinion = 0;
        assert_eq!(ssf_display(&a), Symbol2::new(0, 0));
    }

    #[test]
    fn update_counts_tagged_and_all_values() {
        let proto = SelfStabilizingSourceFilter::new(SsfParams::with_m(5, 5, 0.0, 1.0, LogBase::Natural).unwrap());
        let mut rng = AgentRng::seed_from_u64(0);
        let mut a = agent(Role::NonSource);
        let msgs = [Symbol2::new(1, 1), Symbol2::new(1, 1), Symbol2::new(1, 0), Symbol2::new(0, 0), Symbol2::new(0, 0)]
            .map(Symbol2::index);
        assert!(proto.receive(&mut a, &msgs, &mut rng));
        assert_eq!(a.weak_opinion, 1);
        assert_eq!(a.opinion, 0);
        assert_eq!(a.memory_len(), 0);
    }

    #[test]
    fn no_update_below_capacity() {
        let proto = SelfStabilizingSourceFilter::new(SsfParams::with_m(10, 3, 0.0, 1.0, LogBase::Natural).unwrap());
        let mut rng = AgentRng::seed_from_u64(0);
        let mut a = agent(Role::NonSource);
        a.weak_opinion = 1;
        assert!(!proto.receive(&mut a, &[2, 2, 2], &mut rng));
        assert_eq!(a.weak_opinion, 1);
        assert_eq!(a.memory, [0, 0, 3, 0]);
    }

    #[test]
    fn untagged_memory_gives_fair_weak_opinion() {
        let proto = SelfStabilizingSourceFilter::new(SsfParams::with_m(4, 4, 0.0, 1.0, LogBase::Natural).unwrap());
        let trials = 20_000u64;
        let mut ones = 0;
        for t in 0..trials {
            let mut rng = AgentRng::seed_from_u64(t);
            let mut a = agent(Role::NonSource);
            proto.receive(&mut a, &[1, 1, 1, 0], &mut rng);
            assert_eq!(a.opinion, 1);
            ones += a.weak_opinion as u64;
        }
        let freq = ones as f64 / trials as f64;
        // 3σ band for a fair coin over 20k draws.
        assert!((freq - 0.5).abs() < 3.0 * (0.25 / trials as f64).sqrt(), "freq {freq}");
    }

    #[test]
    fn h_equal_m_updates_every_round() {
        let proto = SelfStabilizingSourceFilter::new(SsfParams::with_m(3, 3, 0.0, 1.0, LogBase::Natural).unwrap());
        let mut rng = AgentRng::seed_from_u64(0);
        let mut a = agent(Role::NonSource);
        for _ in 0..10 {
            assert!(proto.receive(&mut a, &[3, 1, 0], &mut rng));
        }
        assert_eq!(a.updates, 10);
    }

    #[test]
    fn planted_memory_is_flushed_on_update() {
        let proto = SelfStabilizingSourceFilter::new(SsfParams::with_m(6, 2, 0.0, 1.0, LogBase::Natural).unwrap());
        let mut rng = AgentRng::seed_from_u64(0);
        let mut a = agent(Role::NonSource);
        let o = AgentOverride { memory: Some(vec![5, 0, 0, 0]), ..Default::default() };
        proto.apply_override(&mut a, &o).unwrap();
        assert_eq!(a.planted, 5);
        assert!(proto.receive(&mut a, &[3, 3], &mut rng));
        assert_eq!(a.planted, 0);
        let bad = AgentOverride { memory: Some(vec![1, 2]), ..Default::default() };
        assert!(proto.apply_override(&mut a, &bad).is_err());
    }
}
