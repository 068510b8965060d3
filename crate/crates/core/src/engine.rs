//! The noisy PULL(h) round loop.
//!
//! Each round: every agent's display is snapshotted; every agent samples `h`
//! agents uniformly with replacement (itself included), each observation
//! passes independently through the channel noise (and the receiver's
//! artificial noise, when configured); then every agent updates once.
//! Updates never feed back into observations of the same round.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{NoiseError, NoiseMatrix};
use crate::protocol::{Bit, ParamError, Protocol, Role};
use crate::rng::{self, AgentRng, INIT_ROUND};
use crate::sf::{SfParams, SourceFilter};
use crate::ssf::{SelfStabilizingSourceFilter, SsfParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid population config: {0}")]
    InvalidConfig(String),
    #[error("invalid adversary override: {0}")]
    InvalidOverride(String),
    #[error("adversary may not change source membership or preferences")]
    ForbiddenOverride,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum ProtocolParams {
    Sf(SfParams),
    Ssf(SsfParams),
}

impl ProtocolParams {
    pub fn m(&self) -> usize {
        match self {
            ProtocolParams::Sf(p) => p.m,
            ProtocolParams::Ssf(p) => p.m,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match self {
            ProtocolParams::Sf(_) => 2,
            ProtocolParams::Ssf(_) => 4,
        }
    }
}

/// Fully resolved description of one population run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n: usize,
    pub h: usize,
    pub s0: usize,
    pub s1: usize,
    /// Channel noise.
    pub noise: NoiseMatrix,
    /// Receiver-side noise applied after the channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artificial_noise: Option<NoiseMatrix>,
    /// Uniform noise level the protocol parameters were computed for.
    pub effective_delta: f64,
    pub protocol: ProtocolParams,
    pub seed: u64,
    pub max_rounds: usize,
    pub convergence_window: usize,
    /// Lifts the source-count checks and allows adversarial starts of
    /// protocols that assume a synchronous wake-up.
    #[serde(default)]
    pub exploratory: bool,
}

impl PopulationConfig {
    /// Strict majority preference among sources.
    pub fn correct_opinion(&self) -> Bit {
        (self.s1 > self.s0) as Bit
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.h == 0 {
            return bad("h must be at least 1".into());
        }
        if self.s0 + self.s1 > self.n {
            return bad(format!("s0 + s1 = {} exceeds n = {}", self.s0 + self.s1, self.n));
        }
        if !self.exploratory {
            if self.s0 == self.s1 {
                return bad("bias s = |s1 - s0| must be at least 1".into());
            }
            if 4 * self.s0.max(self.s1) > self.n {
                return bad(format!("s0 = {} and s1 = {} must both be at most n/4", self.s0, self.s1));
            }
        }
        let d = self.protocol.alphabet_size();
        if self.noise.d() != d {
            return bad(format!("noise matrix has alphabet size {}, protocol needs {d}", self.noise.d()));
        }
        if let Some(p) = &self.artificial_noise {
            if p.d() != d {
                return bad(format!("artificial noise has alphabet size {}, protocol needs {d}", p.d()));
            }
        }
        Ok(())
    }

    /// Source roles by index: the first `s1` agents prefer 1, the next `s0`
    /// prefer 0.
    pub fn roles(&self) -> Vec<Role> {
        (0..self.n)
            .map(|i| {
                if i < self.s1 {
                    Role::Source { preference: 1 }
                } else if i < self.s1 + self.s0 {
                    Role::Source { preference: 0 }
                } else {
                    Role::NonSource
                }
            })
            .collect()
    }
}

/// Per-agent initial-state overrides. Fields left `None` keep the clean
/// start value. `is_source` and `preference` exist only so that attempts to
/// set them can be rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinion: Option<Bit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_opinion: Option<Bit>,
    /// Memory multiset as a count vector indexed by alphabet symbol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_source: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Bit>,
}

/// Initial corruption chosen by the adversary. `all` applies to every agent,
/// then `agents` entries apply to their indexed agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all: Option<AgentOverride>,
    #[serde(default)]
    pub agents: Vec<AgentOverride>,
}

impl AdversarySpec {
    /// Every opinion and weak opinion set to the wrong bit; agent `i` starts
    /// with `⌊i·m/n⌋` copies of the untagged wrong message `(0, wrong)`, so
    /// first updates are spread over the whole update period.
    pub fn worst_case_ssf(n: usize, m: usize, correct: Bit) -> Self {
        let wrong = 1 - correct;
        let agents = (0..n)
            .map(|i| {
                let mut memory = vec![0u32; 4];
                memory[wrong as usize] = ((i as u64 * m as u64) / n as u64) as u32;
                AgentOverride { agent: Some(i), memory: Some(memory), ..Default::default() }
            })
            .collect();
        AdversarySpec {
            all: Some(AgentOverride { opinion: Some(wrong), weak_opinion: Some(wrong), ..Default::default() }),
            agents,
        }
    }

    fn validate(&self, n: usize) -> Result<(), EngineError> {
        let check = |o: &AgentOverride| -> Result<(), EngineError> {
            if o.is_source.is_some() || o.preference.is_some() {
                return Err(EngineError::ForbiddenOverride);
            }
            for bit in [o.opinion, o.weak_opinion].into_iter().flatten() {
                if bit > 1 {
                    return Err(EngineError::InvalidOverride(format!("opinion bit {bit} is not 0 or 1")));
                }
            }
            Ok(())
        };
        if let Some(all) = &self.all {
            if all.agent.is_some() {
                return Err(EngineError::InvalidOverride("`all` override must not name an agent".into()));
            }
            check(all)?;
        }
        for o in &self.agents {
            match o.agent {
                Some(i) if i < n => check(o)?,
                Some(i) => return Err(EngineError::InvalidOverride(format!("agent {i} out of range for n = {n}"))),
                None => return Err(EngineError::InvalidOverride("indexed override without `agent`".into())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState<A> {
    /// Completed rounds.
    pub round: usize,
    pub agents: Vec<A>,
    /// Messages displayed in the last executed round.
    pub displays: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub opinion_ones: usize,
    pub weak_ones: usize,
    pub updates_performed: usize,
    /// Agents that do not hold an opinion yet.
    #[serde(default)]
    pub undecided: usize,
}

impl RoundStats {
    pub fn all_hold(&self, n: usize, opinion: Bit) -> bool {
        self.undecided == 0 && self.opinion_ones == if opinion == 1 { n } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub per_round: Vec<RoundStats>,
    pub converged_at: Option<usize>,
    pub correct_opinion: Bit,
    pub n: usize,
    pub convergence_window: usize,
    /// The protocol finished its fixed schedule; opinions are frozen from the
    /// last recorded round on.
    pub schedule_completed: bool,
}

impl Trace {
    pub fn rounds(&self) -> usize {
        self.per_round.len()
    }

    pub fn final_all_correct(&self) -> bool {
        self.per_round.last().is_some_and(|s| s.all_hold(self.n, self.correct_opinion))
    }
}

/// First round from which every opinion equals `correct` for `window`
/// consecutive rounds. With `frozen_tail`, the last recorded state is taken
/// to persist indefinitely.
pub fn find_convergence(
    stats: &[RoundStats],
    n: usize,
    correct: Bit,
    window: usize,
    frozen_tail: bool,
) -> Option<usize> {
    let window = window.max(1);
    let mut start: Option<usize> = None;
    for (k, s) in stats.iter().enumerate() {
        if s.all_hold(n, correct) {
            let first = *start.get_or_insert(k);
            if k + 1 - first >= window {
                return Some(stats[first].round);
            }
        } else {
            start = None;
        }
    }
    match (start, frozen_tail) {
        (Some(first), true) => Some(stats[first].round),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

/// Round engine for one protocol over one population.
#[derive(Debug, Clone)]
pub struct Engine<P: Protocol> {
    protocol: P,
    config: PopulationConfig,
    stream_keys: Option<Vec<u64>>,
    execution: Execution,
}

impl<P: Protocol> Engine<P> {
    pub fn new(config: &PopulationConfig, protocol: P) -> Result<Self, EngineError> {
        config.validate()?;
        if protocol.alphabet_size() != config.noise.d() {
            return Err(EngineError::InvalidConfig("protocol alphabet does not match the noise matrix".into()));
        }
        Ok(Self { protocol, config: config.clone(), stream_keys: None, execution: Execution::Serial })
    }

    /// Reassigns random streams: agent `i` draws from the stream keyed by
    /// `keys[i]`. `keys` must be a permutation of `0..n`.
    pub fn with_stream_keys(mut self, keys: Vec<u64>) -> Result<Self, EngineError> {
        let n = self.config.n;
        let mut seen = vec![false; n];
        if keys.len() != n {
            return Err(EngineError::InvalidConfig("stream key list must have n entries".into()));
        }
        for &k in &keys {
            match seen.get_mut(k as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(EngineError::InvalidConfig("stream keys must be a permutation of 0..n".into())),
            }
        }
        self.stream_keys = Some(keys);
        Ok(self)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn protocol(&self) -> &P {
        &self.protocol
    }

    pub fn config(&self) -> &PopulationConfig {
        &self.config
    }

    #[inline]
    fn key(&self, i: usize) -> u64 {
        self.stream_keys.as_ref().map_or(i as u64, |k| k[i])
    }

    pub fn init_population(&self) -> PopulationState<P::Agent> {
        let agents: Vec<P::Agent> = self
            .config
            .roles()
            .into_iter()
            .enumerate()
            .map(|(i, role)| {
                let mut init_rng = rng::stream(self.config.seed, self.key(i), INIT_ROUND);
                self.protocol.new_agent(role, &mut init_rng)
            })
            .collect();
        let displays = agents.iter().map(|a| self.protocol.display(a)).collect();
        PopulationState { round: 0, agents, displays }
    }

    pub fn adversarial_init(&self, adversary: &AdversarySpec) -> Result<PopulationState<P::Agent>, EngineError> {
        if !self.protocol.self_stabilizing() && !self.config.exploratory {
            return Err(EngineError::InvalidConfig(format!(
                "adversarial initialization of `{}` is out of contract; set `exploratory` to run it anyway",
                self.protocol.name()
            )));
        }
        adversary.validate(self.config.n)?;
        let mut state = self.init_population();
        if let Some(all) = &adversary.all {
            for agent in &mut state.agents {
                self.protocol.apply_override(agent, all)?;
            }
        }
        for o in &adversary.agents {
            let i = o.agent.expect("validated");
            self.protocol.apply_override(&mut state.agents[i], o)?;
        }
        state.displays = state.agents.iter().map(|a| self.protocol.display(a)).collect();
        Ok(state)
    }

    /// Draws agent `agent`'s observations for `round` into `out`, reporting
    /// each sampled index to `on_sample`. Returns the stream positioned after
    /// the observations, for the agent's own coins.
    #[inline]
    pub fn observe(
        &self,
        agent: usize,
        round: usize,
        displays: &[u8],
        out: &mut Vec<u8>,
        mut on_sample: impl FnMut(usize),
    ) -> AgentRng {
        use rand::Rng;
        let mut rng = rng::stream(self.config.seed, self.key(agent), round as u64);
        out.clear();
        let n = self.config.n;
        for _ in 0..self.config.h {
            let j = rng.random_range(0..n);
            on_sample(j);
            let mut seen = self.config.noise.apply_noise(displays[j] as usize, &mut rng);
            if let Some(p) = &self.config.artificial_noise {
                seen = p.apply_noise(seen, &mut rng);
            }
            out.push(seen as u8);
        }
        rng
    }

    #[inline]
    fn deliver(&self, i: usize, agent: &mut P::Agent, displays: &[u8], round: usize, buf: &mut Vec<u8>) -> bool {
        if self.protocol.is_inert(agent) {
            return false;
        }
        let mut rng = self.observe(i, round, displays, buf, |_| {});
        self.protocol.receive(agent, buf, &mut rng)
    }

    pub fn stats(&self, state: &PopulationState<P::Agent>, updates_performed: usize) -> RoundStats {
        let mut s = RoundStats { round: state.round, opinion_ones: 0, weak_ones: 0, updates_performed, undecided: 0 };
        for a in &state.agents {
            match self.protocol.opinion(a) {
                Some(1) => s.opinion_ones += 1,
                Some(_) => {}
                None => s.undecided += 1,
            }
            if self.protocol.weak_opinion(a) == Some(1) {
                s.weak_ones += 1;
            }
        }
        s
    }

    pub fn step_round(&self, state: &mut PopulationState<P::Agent>) -> RoundStats {
        let round = state.round;
        let h = self.config.h;
        let mut displays = std::mem::take(&mut state.displays);
        displays.clear();
        displays.extend(state.agents.iter().map(|a| self.protocol.display(a)));
        let updates = match self.execution {
            Execution::Serial => {
                let mut buf = Vec::with_capacity(h);
                let mut updates = 0;
                for (i, agent) in state.agents.iter_mut().enumerate() {
                    updates += self.deliver(i, agent, &displays, round, &mut buf) as usize;
                }
                updates
            }
            Execution::Parallel => state
                .agents
                .par_iter_mut()
                .enumerate()
                .map_init(
                    || Vec::with_capacity(h),
                    |buf, (i, agent)| self.deliver(i, agent, &displays, round, buf) as usize,
                )
                .sum(),
        };
        state.displays = displays;
        state.round += 1;
        self.stats(state, updates)
    }

    pub fn run_rounds(&self, state: &mut PopulationState<P::Agent>, rounds: usize) -> Vec<RoundStats> {
        (0..rounds).map(|_| self.step_round(state)).collect()
    }

    /// Runs until convergence is confirmed, the protocol's fixed schedule
    /// ends, or `max_rounds` rounds have been executed.
    pub fn run_until(&self, state: &mut PopulationState<P::Agent>) -> Trace {
        let n = self.config.n;
        let correct = self.config.correct_opinion();
        let window = self.config.convergence_window.max(1);
        let schedule = self.protocol.fixed_schedule();
        let limit = match schedule {
            Some(total) => total.saturating_sub(state.round).min(self.config.max_rounds),
            None => self.config.max_rounds,
        };
        let mut per_round = Vec::new();
        let mut streak = 0usize;
        for _ in 0..limit {
            let s = self.step_round(state);
            per_round.push(s);
            if schedule.is_none() {
                streak = if s.all_hold(n, correct) { streak + 1 } else { 0 };
                if streak >= window {
                    break;
                }
            }
        }
        let schedule_completed = schedule.is_some_and(|total| state.round >= total);
        Trace {
            converged_at: find_convergence(&per_round, n, correct, window, schedule_completed),
            per_round,
            correct_opinion: correct,
            n,
            convergence_window: window,
            schedule_completed,
        }
    }
}

/// Builds the engine for `config`'s protocol and runs it to completion.
pub fn run_population(
    config: &PopulationConfig,
    adversary: Option<&AdversarySpec>,
    execution: Execution,
) -> Result<Trace, EngineError> {
    fn go<P: Protocol>(
        engine: Engine<P>,
        adversary: Option<&AdversarySpec>,
        execution: Execution,
    ) -> Result<Trace, EngineError> {
        let engine = engine.with_execution(execution);
        let mut state = match adversary {
            Some(adv) => engine.adversarial_init(adv)?,
            None => engine.init_population(),
        };
        Ok(engine.run_until(&mut state))
    }
    match &config.protocol {
        ProtocolParams::Sf(p) => go(Engine::new(config, SourceFilter::new(p.clone()))?, adversary, execution),
        ProtocolParams::Ssf(p) => {
            go(Engine::new(config, SelfStabilizingSourceFilter::new(p.clone()))?, adversary, execution)
        }
    }
}

/// Weak opinions of every agent after `rounds` rounds from a clean start.
pub fn weak_opinions_after(config: &PopulationConfig, rounds: usize) -> Result<Vec<Option<Bit>>, EngineError> {
    fn go<P: Protocol>(engine: Engine<P>, rounds: usize) -> Vec<Option<Bit>> {
        let mut state = engine.init_population();
        engine.run_rounds(&mut state, rounds);
        state.agents.iter().map(|a| engine.protocol().weak_opinion(a)).collect()
    }
    Ok(match &config.protocol {
        ProtocolParams::Sf(p) => go(Engine::new(config, SourceFilter::new(p.clone()))?, rounds),
        ProtocolParams::Ssf(p) => go(Engine::new(config, SelfStabilizingSourceFilter::new(p.clone()))?, rounds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::LogBase;

    pub(crate) fn sf_config(n: usize, h: usize, s1: usize, s0: usize, delta: f64, m: usize) -> PopulationConfig {
        let params = SfParams::with_m(m, n as f64, h, delta, 1.0, LogBase::Natural).unwrap();
        PopulationConfig {
            n,
            h,
            s0,
            s1,
            noise: NoiseMatrix::uniform(2, delta).unwrap(),
            artificial_noise: None,
            effective_delta: delta,
            protocol: ProtocolParams::Sf(params),
            seed: 1,
            max_rounds: 1_000_000,
            convergence_window: 1,
            exploratory: false,
        }
    }

    fn ssf_config(n: usize, h: usize, s1: usize, s0: usize, delta: f64, m: usize) -> PopulationConfig {
        PopulationConfig {
            noise: NoiseMatrix::uniform(4, delta).unwrap(),
            protocol: ProtocolParams::Ssf(SsfParams::with_m(m, h, delta, 1.0, LogBase::Natural).unwrap()),
            convergence_window: 10 * m.div_ceil(h),
            ..sf_config(n, h, s1, s0, 0.0, 1)
        }
    }

    #[test]
    fn roles_and_correct_opinion() {
        let c = sf_config(4, 1, 1, 0, 0.0, 4);
        let roles = c.roles();
        assert_eq!(roles[0], Role::Source { preference: 1 });
        assert!(roles[1..].iter().all(|r| *r == Role::NonSource));

        let mut c = sf_config(10, 1, 3, 2, 0.0, 4);
        assert!(c.validate().is_err());
        c.exploratory = true;
        c.validate().unwrap();
        assert_eq!(c.correct_opinion(), 1);
        assert_eq!(c.roles().iter().filter(|r| **r == Role::Source { preference: 0 }).count(), 2);
    }

    #[test]
    fn rejects_zero_bias_and_too_many_sources() {
        let c = sf_config(4, 1, 1, 1, 0.0, 4);
        assert!(matches!(c.validate(), Err(EngineError::InvalidConfig(_))));
        let c = sf_config(8, 1, 3, 0, 0.0, 4);
        assert!(c.validate().is_err());
        let c = sf_config(8, 1, 2, 0, 0.0, 4);
        c.validate().unwrap();
    }

    #[test]
    fn single_agent_observes_itself() {
        let mut c = ssf_config(1, 3, 1, 0, 0.0, 100);
        c.exploratory = true;
        let engine = Engine::new(
            &c,
            SelfStabilizingSourceFilter::new(match &c.protocol {
                ProtocolParams::Ssf(p) => p.clone(),
                _ => unreachable!(),
            }),
        )
        .unwrap();
        let state = engine.init_population();
        let mut buf = Vec::new();
        let mut sampled = Vec::new();
        engine.observe(0, 0, &state.displays, &mut buf, |j| sampled.push(j));
        assert_eq!(sampled, vec![0, 0, 0]);
        assert_eq!(buf, vec![3, 3, 3]);
    }

    #[test]
    fn noiseless_delivery_is_exact() {
        let c = sf_config(20, 4, 1, 0, 0.0, 8);
        let engine = Engine::new(
            &c,
            SourceFilter::new(match &c.protocol {
                ProtocolParams::Sf(p) => p.clone(),
                _ => unreachable!(),
            }),
        )
        .unwrap();
        let displays = vec![1u8; 20];
        let mut buf = Vec::new();
        for round in 0..50 {
            engine.observe(round % 20, round, &displays, &mut buf, |_| {});
            assert!(buf.iter().all(|&b| b == 1));
        }
    }

    #[test]
    fn sampling_is_uniform() {
        // n = 1000, h = 1, 10^5 rounds: every agent's sample count sits near
        // 10^5, and the histogram passes chi-square at significance 0.001.
        let c = sf_config(1000, 1, 1, 0, 0.0, 1000);
        let engine = Engine::new(
            &c,
            SourceFilter::new(match &c.protocol {
                ProtocolParams::Sf(p) => p.clone(),
                _ => unreachable!(),
            }),
        )
        .unwrap();
        let displays = vec![0u8; 1000];
        let mut counts = vec![0u64; 1000];
        let mut buf = Vec::new();
        let rounds = 100_000;
        for round in 0..rounds {
            for i in 0..1000 {
                engine.observe(i, round, &displays, &mut buf, |j| counts[j] += 1);
            }
        }
        let expected = rounds as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Upper 0.001 critical value of chi-square with 999 degrees of freedom.
        assert!(chi2 < 1143.9, "chi2 {chi2}");
        let sd = (expected * (1.0 - 1e-3)).sqrt();
        let worst = counts.iter().map(|&c| ((c as f64 - expected) / sd).abs()).fold(0.0, f64::max);
        // Bonferroni over 1000 agents.
        assert!(worst < 4.5, "max |z| {worst}");
    }

    #[test]
    fn convergence_window_rule() {
        let mk = |r: usize, ones: usize| RoundStats {
            round: r,
            opinion_ones: ones,
            weak_ones: 0,
            updates_performed: 0,
            undecided: 0,
        };
        let stats: Vec<_> = [3, 5, 5, 4, 5, 5, 5].iter().enumerate().map(|(k, &o)| mk(k + 1, o)).collect();
        assert_eq!(find_convergence(&stats, 5, 1, 3, false), Some(5));
        assert_eq!(find_convergence(&stats, 5, 1, 4, false), None);
        assert_eq!(find_convergence(&stats, 5, 1, 4, true), Some(5));
        assert_eq!(find_convergence(&stats, 5, 0, 1, true), None);
        let mut undecided = mk(1, 0);
        undecided.undecided = 5;
        assert_eq!(find_convergence(&[undecided], 5, 0, 1, true), None);
    }

    #[test]
    fn max_rounds_zero_gives_empty_trace() {
        let mut c = ssf_config(20, 2, 2, 1, 0.0, 10);
        c.max_rounds = 0;
        let t = run_population(&c, None, Execution::Serial).unwrap();
        assert!(t.per_round.is_empty());
        assert_eq!(t.converged_at, None);
    }

    #[test]
    fn noiseless_sf_converges() {
        let c = sf_config(100, 100, 1, 0, 0.0, 1000);
        let t = run_population(&c, None, Execution::Serial).unwrap();
        let ProtocolParams::Sf(p) = &c.protocol else { unreachable!() };
        assert_eq!(t.rounds(), p.total_rounds());
        assert!(t.schedule_completed);
        assert!(t.final_all_correct());
        assert!(t.converged_at.is_some());
    }

    #[test]
    fn parallel_matches_serial() {
        for mut c in [sf_config(200, 3, 3, 1, 0.1, 60), ssf_config(200, 3, 3, 1, 0.05, 60)] {
            c.max_rounds = 600;
            let a = run_population(&c, None, Execution::Serial).unwrap();
            let b = run_population(&c, None, Execution::Parallel).unwrap();
            assert_eq!(a, b);
            let again = run_population(&c, None, Execution::Serial).unwrap();
            assert_eq!(a, again);
        }
    }

    #[test]
    fn adversary_cannot_touch_sources() {
        let c = ssf_config(20, 2, 2, 1, 0.0, 10);
        let ProtocolParams::Ssf(p) = &c.protocol else { unreachable!() };
        let engine = Engine::new(&c, SelfStabilizingSourceFilter::new(p.clone())).unwrap();
        let adv = AdversarySpec {
            agents: vec![AgentOverride { agent: Some(0), preference: Some(0), ..Default::default() }],
            ..Default::default()
        };
        assert_eq!(engine.adversarial_init(&adv), Err(EngineError::ForbiddenOverride));
        let adv = AdversarySpec {
            all: Some(AgentOverride { is_source: Some(false), ..Default::default() }),
            ..Default::default()
        };
        assert_eq!(engine.adversarial_init(&adv), Err(EngineError::ForbiddenOverride));
        let adv = AdversarySpec {
            agents: vec![AgentOverride { agent: Some(99), opinion: Some(1), ..Default::default() }],
            ..Default::default()
        };
        assert!(matches!(engine.adversarial_init(&adv), Err(EngineError::InvalidOverride(_))));
    }

    #[test]
    fn sf_adversarial_init_needs_exploratory() {
        let mut c = sf_config(20, 2, 2, 1, 0.0, 10);
        let adv = AdversarySpec::default();
        assert!(run_population(&c, Some(&adv), Execution::Serial).is_err());
        c.exploratory = true;
        run_population(&c, Some(&adv), Execution::Serial).unwrap();
    }

    #[test]
    fn worst_case_start_is_valid_and_staggers_updates() {
        let (n, h, m) = (40, 2, 20);
        let c = ssf_config(n, h, 2, 1, 0.0, m);
        let ProtocolParams::Ssf(p) = &c.protocol else { unreachable!() };
        let engine = Engine::new(&c, SelfStabilizingSourceFilter::new(p.clone())).unwrap();
        let adv = AdversarySpec::worst_case_ssf(n, m, 1);
        let mut state = engine.adversarial_init(&adv).unwrap();
        for (i, a) in state.agents.iter().enumerate() {
            assert_eq!(a.opinion, 0);
            assert_eq!(a.weak_opinion, 0);
            assert_eq!(a.memory_len() as usize, i * m / n);
            assert_eq!(a.role, c.roles()[i]);
        }
        // First update of agent i lands at round ⌈(m − size_i)/h⌉.
        let mut first_update = vec![None; n];
        for r in 1..=m.div_ceil(h) {
            engine.step_round(&mut state);
            for (i, a) in state.agents.iter().enumerate() {
                if a.updates == 1 && first_update[i].is_none() {
                    first_update[i] = Some(r);
                }
            }
        }
        for (i, f) in first_update.iter().enumerate() {
            let size = i * m / n;
            assert_eq!(*f, Some((m - size).div_ceil(h)), "agent {i}");
        }
        let distinct: std::collections::BTreeSet<_> = first_update.iter().collect();
        assert!(distinct.len() > 5);
    }

    #[test]
    fn stream_keys_must_be_permutation() {
        let c = sf_config(4, 1, 1, 0, 0.0, 4);
        let ProtocolParams::Sf(p) = &c.protocol else { unreachable!() };
        let e = Engine::new(&c, SourceFilter::new(p.clone())).unwrap();
        assert!(e.clone().with_stream_keys(vec![0, 1, 1, 3]).is_err());
        assert!(e.clone().with_stream_keys(vec![0, 1, 2]).is_err());
        e.with_stream_keys(vec![3, 2, 1, 0]).unwrap();
    }
}
