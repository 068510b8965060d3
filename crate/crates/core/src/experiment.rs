//! Config-driven experiments: single runs, sweeps, noise reports, lemma
//! tables and weak-opinion bias estimates.
//!
//! Trial `k` of an experiment with master seed `s` runs with seed `s + k`.
//! All CSV outputs start with a `# noisy-pull v1` line followed by a
//! `# config: …` line echoing the resolved configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    run_population, weak_opinions_after, AdversarySpec, EngineError, Execution, PopulationConfig, ProtocolParams, Trace,
};
use crate::noise::{f_delta, inverse_norm_bound, uniformize, NoiseClass, NoiseError, NoiseMatrix, Uniformization};
use crate::oracle::{self, LemmaCheck};
use crate::protocol::{LogBase, ParamError};
use crate::sf::{Counting, SfParams};
use crate::ssf::SsfParams;

pub const FORMAT_TAG: &str = "noisy-pull v1";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Contract(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io { path: path.to_path_buf(), source }
    }
}

impl From<NoiseError> for ExperimentError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Singular | NoiseError::IllConditioned { .. } | NoiseError::NegativeArtificialNoise { .. } => {
                ExperimentError::Contract(e.to_string())
            }
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

impl From<EngineError> for ExperimentError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::ForbiddenOverride => ExperimentError::Contract(e.to_string()),
            EngineError::Noise(n) => n.into(),
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

impl From<ParamError> for ExperimentError {
    fn from(e: ParamError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Sweep,
    VerifyNoise,
    VerifyLemmas,
    EstimateBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Sf,
    Ssf,
}

impl ProtocolKind {
    pub fn alphabet_size(self) -> usize {
        match self {
            ProtocolKind::Sf => 2,
            ProtocolKind::Ssf => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryPreset {
    /// Every opinion wrong, memories stuffed with the wrong untagged message
    /// at staggered sizes.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdversaryChoice {
    Preset(AdversaryPreset),
    Custom(AdversarySpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSettings {
    /// Minimum number of non-source agents to sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    /// Round at which weak opinions are read; defaults to `2⌈m/h⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
}

fn default_c1() -> f64 {
    1.0
}

fn default_trials() -> usize {
    1
}

/// User-facing experiment description (the config JSON file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    pub protocol: ProtocolKind,
    pub n: usize,
    pub h: usize,
    #[serde(default)]
    pub s0: usize,
    #[serde(default)]
    pub s1: usize,
    /// Noise level. Without `noise`, the δ-uniform matrix is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Channel matrix. When given, receivers apply artificial noise so the
    /// composite channel is uniform at the reduced level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMatrix>,
    /// Explicit message budget; otherwise derived from the formula.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default)]
    pub log_base: LogBase,
    #[serde(default)]
    pub counting: Counting,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_window: Option<usize>,
    #[serde(default)]
    pub exploratory: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Also write one JSON trace per trial.
    #[serde(default)]
    pub trace_json: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasSettings>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_json(&text)
    }

    /// A minimal config with δ-uniform noise and formula-derived `m`.
    pub fn new(protocol: ProtocolKind, n: usize, h: usize, s0: usize, s1: usize, delta: f64) -> Self {
        Self {
            mode: Mode::Simulate,
            protocol,
            n,
            h,
            s0,
            s1,
            delta: Some(delta),
            noise: None,
            m: None,
            c1: 1.0,
            log_base: LogBase::Natural,
            counting: Counting::All,
            seed: 0,
            trials: 1,
            max_rounds: None,
            convergence_window: None,
            exploratory: false,
            adversary: None,
            output_path: None,
            trace_json: false,
            sweep: None,
            bias: None,
        }
    }

    /// Resolves noise, protocol parameters and defaults into a runnable
    /// population.
    pub fn resolve(&self) -> Result<Resolved, ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        let d = self.protocol.alphabet_size();
        let (noise, declared_delta, artificial, uniformization, effective_delta) = match &self.noise {
            None => {
                let delta = self
                    .delta
                    .ok_or_else(|| ExperimentError::Config("either `delta` or `noise` must be given".into()))?;
                (NoiseMatrix::uniform(d, delta)?, delta, None, None, delta)
            }
            Some(noise) => {
                if noise.d() != d {
                    return Err(ExperimentError::Config(format!(
                        "noise matrix has alphabet size {}, protocol `{:?}` needs {d}",
                        noise.d(),
                        self.protocol
                    )));
                }
                let delta = self.delta.unwrap_or_else(|| noise.max_off_diagonal());
                let class: NoiseClass = noise.classify(delta)?;
                if !class.upper_bounded {
                    return Err(ExperimentError::Config(format!("noise matrix is not {delta}-upper bounded")));
                }
                let u = uniformize(noise, delta)?;
                let artificial = (!u.artificial_noise.is_identity()).then(|| u.artificial_noise.clone());
                let eff = u.delta_prime;
                (noise.clone(), delta, artificial, Some(u), eff)
            }
        };
        let nf = self.n as f64;
        let protocol = match self.protocol {
            ProtocolKind::Sf => {
                let p = match self.m {
                    Some(m) => SfParams::with_m(m, nf, self.h, effective_delta, self.c1, self.log_base)?,
                    None => SfParams::derive(nf, self.h, effective_delta, self.s0, self.s1, self.c1, self.log_base)?,
                };
                ProtocolParams::Sf(p.with_counting(self.counting))
            }
            ProtocolKind::Ssf => ProtocolParams::Ssf(match self.m {
                Some(m) => SsfParams::with_m(m, self.h, effective_delta, self.c1, self.log_base)?,
                None => SsfParams::derive(nf, self.h, effective_delta, self.c1, self.log_base)?,
            }),
        };
        let period = protocol.m().div_ceil(self.h.max(1));
        let convergence_window = self.convergence_window.unwrap_or(10 * period);
        let max_rounds = self.max_rounds.unwrap_or(match &protocol {
            ProtocolParams::Sf(p) => p.total_rounds(),
            ProtocolParams::Ssf(_) => 10 * period + convergence_window,
        });
        let population = PopulationConfig {
            n: self.n,
            h: self.h,
            s0: self.s0,
            s1: self.s1,
            noise,
            artificial_noise: artificial,
            effective_delta,
            protocol,
            seed: self.seed,
            max_rounds,
            convergence_window,
            exploratory: self.exploratory,
        };
        population.validate()?;
        let adversary = match &self.adversary {
            None => None,
            Some(AdversaryChoice::Custom(spec)) => Some(spec.clone()),
            Some(AdversaryChoice::Preset(AdversaryPreset::WorstCase)) => {
                Some(AdversarySpec::worst_case_ssf(self.n, population.protocol.m(), population.correct_opinion()))
            }
        };
        Ok(Resolved { population, adversary, uniformization, declared_delta, trials: self.trials })
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub population: PopulationConfig,
    pub adversary: Option<AdversarySpec>,
    pub uniformization: Option<Uniformization>,
    pub declared_delta: f64,
    pub trials: usize,
}

impl Resolved {
    pub fn trial_config(&self, trial: usize) -> PopulationConfig {
        PopulationConfig { seed: self.population.seed.wrapping_add(trial as u64), ..self.population.clone() }
    }

    /// Runs every trial; results are ordered by trial index.
    pub fn run_trials(&self, execution: Execution) -> Result<Vec<Trace>, ExperimentError> {
        (0..self.trials)
            .into_par_iter()
            .map(|k| run_population(&self.trial_config(k), self.adversary.as_ref(), execution).map_err(Into::into))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundSummary {
    pub min: usize,
    pub median: f64,
    pub p95: usize,
}

/// Min, median and nearest-rank 95th percentile.
pub fn summarize_rounds(rounds: &[usize]) -> Option<RoundSummary> {
    if rounds.is_empty() {
        return None;
    }
    let mut r = rounds.to_vec();
    r.sort_unstable();
    let k = r.len();
    let median = if k % 2 == 1 { r[k / 2] as f64 } else { (r[k / 2 - 1] + r[k / 2]) as f64 / 2.0 };
    let rank = ((0.95 * k as f64).ceil() as usize).clamp(1, k);
    Some(RoundSummary { min: r[0], median, p95: r[rank - 1] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub format: &'static str,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub convergence_rounds: Option<RoundSummary>,
    pub effective_delta: f64,
    pub uniformized: bool,
    pub seed: u64,
    pub config: PopulationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversarySpec>,
}

pub fn summarize(resolved: &Resolved, traces: &[Trace]) -> Summary {
    let rounds: Vec<usize> = traces.iter().filter_map(|t| t.converged_at).collect();
    Summary {
        format: FORMAT_TAG,
        trials: traces.len(),
        successes: rounds.len(),
        success_rate: rounds.len() as f64 / traces.len().max(1) as f64,
        convergence_rounds: summarize_rounds(&rounds),
        effective_delta: resolved.population.effective_delta,
        uniformized: resolved.uniformization.is_some(),
        seed: resolved.population.seed,
        config: resolved.population.clone(),
        adversary: resolved.adversary.clone(),
    }
}

fn header_lines(config_json: &str) -> String {
    format!("# {FORMAT_TAG}\n# config: {config_json}\n")
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// Trace CSV with the versioned header and config echo.
pub fn trace_csv(config: &PopulationConfig, trace: &Trace) -> String {
    let mut out = header_lines(&to_json(config));
    out.push_str(&format!("# seed: {}\n", config.seed));
    out.push_str("round,opinion_ones,weak_ones,updates_performed\n");
    for s in &trace.per_round {
        out.push_str(&format!("{},{},{},{}\n", s.round, s.opinion_ones, s.weak_ones, s.updates_performed));
    }
    out
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    format: &'static str,
    seed: u64,
    converged_at: Option<usize>,
    config: &'a PopulationConfig,
    trace: &'a Trace,
}

pub fn trace_json(config: &PopulationConfig, trace: &Trace) -> String {
    serde_json::to_string_pretty(&TraceRecord {
        format: FORMAT_TAG,
        seed: config.seed,
        converged_at: trace.converged_at,
        config,
        trace,
    })
    .expect("serializable")
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

fn output_dir(cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    cfg.output_path.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

/// Runs `trials` seeded runs and writes `trial_NNNN.csv` files plus
/// `summary.json` into the output directory.
pub fn simulate(cfg: &ExperimentConfig, execution: Execution) -> Result<Summary, ExperimentError> {
    let resolved = cfg.resolve()?;
    let traces = resolved.run_trials(execution)?;
    let dir = output_dir(cfg, "noisy-pull-out");
    ensure_dir(&dir)?;
    for (k, trace) in traces.iter().enumerate() {
        let config = resolved.trial_config(k);
        write_file(&dir.join(format!("trial_{k:04}.csv")), &trace_csv(&config, trace))?;
        if cfg.trace_json {
            write_file(&dir.join(format!("trial_{k:04}.json")), &trace_json(&config, trace))?;
        }
    }
    let summary = summarize(&resolved, &traces);
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("serializable"))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub n: usize,
    pub h: usize,
    pub delta: Option<f64>,
    pub s1: usize,
    pub s0: usize,
    pub m: Option<usize>,
    pub trials: usize,
    pub successes: Option<usize>,
    pub success_rate: Option<f64>,
    pub median_convergence_round: Option<f64>,
    pub error: Option<String>,
}

/// Cartesian product of the grid over the base config, in the order
/// `n, h, delta, s1, s0, m` (last varies fastest).
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<ExperimentConfig>, ExperimentError> {
    let grid = cfg.sweep.as_ref().ok_or_else(|| ExperimentError::Config("sweep mode needs a `sweep` grid".into()))?;
    fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>) -> Result<Vec<Option<T>>, ExperimentError> {
        match values {
            None => Ok(vec![None]),
            Some(v) if v.is_empty() => Err(ExperimentError::Config(format!("sweep grid `{name}` is empty"))),
            Some(v) => Ok(v.iter().cloned().map(Some).collect()),
        }
    }
    let ns = axis("n", &grid.n)?;
    let hs = axis("h", &grid.h)?;
    let deltas = axis("delta", &grid.delta)?;
    let s1s = axis("s1", &grid.s1)?;
    let s0s = axis("s0", &grid.s0)?;
    let ms = axis("m", &grid.m)?;
    let mut cells = Vec::new();
    for n in &ns {
        for h in &hs {
            for delta in &deltas {
                for s1 in &s1s {
                    for s0 in &s0s {
                        for m in &ms {
                            let mut c = cfg.clone();
                            c.mode = Mode::Simulate;
                            c.sweep = None;
                            if let Some(v) = n {
                                c.n = *v;
                            }
                            if let Some(v) = h {
                                c.h = *v;
                            }
                            if let Some(v) = delta {
                                c.delta = Some(*v);
                                c.noise = None;
                            }
                            if let Some(v) = s1 {
                                c.s1 = *v;
                            }
                            if let Some(v) = s0 {
                                c.s0 = *v;
                            }
                            if let Some(v) = m {
                                c.m = Some(*v);
                            }
                            cells.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Runs every sweep cell. Cells that fail to resolve become error rows.
pub fn sweep_rows(cfg: &ExperimentConfig, execution: Execution) -> Result<Vec<SweepRow>, ExperimentError> {
    let cells = sweep_cells(cfg)?;
    cells
        .par_iter()
        .enumerate()
        .map(|(cell, c)| {
            let mut row = SweepRow {
                cell,
                n: c.n,
                h: c.h,
                delta: c.delta,
                s1: c.s1,
                s0: c.s0,
                m: c.m,
                trials: c.trials,
                successes: None,
                success_rate: None,
                median_convergence_round: None,
                error: None,
            };
            match c.resolve() {
                Err(e) => row.error = Some(e.to_string()),
                Ok(resolved) => {
                    row.delta = Some(resolved.declared_delta);
                    row.m = Some(resolved.population.protocol.m());
                    let traces = resolved.run_trials(execution)?;
                    let summary = summarize(&resolved, &traces);
                    row.successes = Some(summary.successes);
                    row.success_rate = Some(summary.success_rate);
                    row.median_convergence_round = summary.convergence_rounds.map(|r| r.median);
                }
            }
            Ok(row)
        })
        .collect()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn sweep_csv(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<String, ExperimentError> {
    let mut buf = header_lines(&to_json(cfg)).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let header = [
            "cell",
            "n",
            "h",
            "delta",
            "s1",
            "s0",
            "m",
            "trials",
            "successes",
            "success_rate",
            "median_convergence_round",
            "error",
        ];
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record([
                r.cell.to_string(),
                r.n.to_string(),
                r.h.to_string(),
                opt(&r.delta),
                r.s1.to_string(),
                r.s0.to_string(),
                opt(&r.m),
                r.trials.to_string(),
                opt(&r.successes),
                opt(&r.success_rate),
                opt(&r.median_convergence_round),
                opt(&r.error),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> ExperimentError {
    ExperimentError::Config(format!("csv: {e}"))
}

/// Runs a sweep and writes `sweep.csv` into the output directory.
pub fn sweep(cfg: &ExperimentConfig, execution: Execution) -> Result<Vec<SweepRow>, ExperimentError> {
    let rows = sweep_rows(cfg, execution)?;
    let dir = output_dir(cfg, "noisy-pull-out");
    ensure_dir(&dir)?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(cfg, &rows)?)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub format: &'static str,
    pub d: usize,
    pub delta: f64,
    pub classification: NoiseClass,
    pub f_delta: f64,
    pub inverse_norm_bound: f64,
    pub uniformization: Uniformization,
    pub inverse_norm_within_bound: bool,
    pub artificial_noise_stochastic: bool,
}

/// Classifies `noise` at `delta` (default: its largest off-diagonal entry)
/// and reports the uniformization.
pub fn verify_noise(noise: &NoiseMatrix, delta: Option<f64>) -> Result<NoiseReport, ExperimentError> {
    let d = noise.d();
    let delta = delta.unwrap_or_else(|| noise.max_off_diagonal());
    let classification = noise.classify(delta)?;
    if !classification.upper_bounded {
        return Err(ExperimentError::Config(format!("noise matrix is not {delta}-upper bounded")));
    }
    let u = uniformize(noise, delta)?;
    let bound = inverse_norm_bound(delta, d);
    let stochastic = (0..d).all(|i| {
        let row = u.artificial_noise.matrix().row(i);
        row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= crate::noise::STOCH_TOL
    });
    if !stochastic || u.composition_error > crate::noise::STOCH_TOL {
        return Err(ExperimentError::Contract("artificial noise is not stochastic".into()));
    }
    Ok(NoiseReport {
        format: FORMAT_TAG,
        d,
        delta,
        classification,
        f_delta: f_delta(delta, d)?,
        inverse_norm_bound: bound,
        inverse_norm_within_bound: u.inverse_norm <= bound + crate::noise::INVERSION_TOL,
        artificial_noise_stochastic: stochastic,
        uniformization: u,
    })
}

/// Reads a noise matrix from either a bare `{"d", "entries"}` document or an
/// experiment config carrying `noise` (and optionally `delta`).
pub fn load_noise(text: &str) -> Result<(NoiseMatrix, Option<f64>), ExperimentError> {
    let matrix_err = match serde_json::from_str::<NoiseMatrix>(text) {
        Ok(m) => return Ok((m, None)),
        Err(e) => e,
    };
    let cfg = ExperimentConfig::from_json(text)
        .map_err(|_| ExperimentError::Config(format!("not a noise matrix: {matrix_err}")))?;
    match cfg.noise {
        Some(n) => Ok((n, cfg.delta)),
        None => Ok((
            NoiseMatrix::uniform(
                cfg.protocol.alphabet_size(),
                cfg.delta.ok_or_else(|| ExperimentError::Config("config has neither `noise` nor `delta`".into()))?,
            )?,
            cfg.delta,
        )),
    }
}

/// All lemma checks: exact grids first, then first-phase rows.
pub fn lemma_checks(log_base: LogBase) -> Vec<LemmaCheck> {
    let mut rows = oracle::majority_boosting_grid();
    rows.extend(oracle::binomial_single_hit_grid());
    rows.extend(oracle::first_phase_grid(log_base));
    rows
}

/// Whether a lemma row belongs to an exact (non-asymptotic) statement.
pub fn is_exact_lemma(lemma: &str) -> bool {
    matches!(lemma, "majority_boosting" | "binomial_single_hit")
}

pub fn lemma_csv(rows: &[LemmaCheck]) -> Result<String, ExperimentError> {
    let mut buf = format!("# {FORMAT_TAG}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["lemma", "parameters", "lhs", "rhs", "pass"]).map_err(csv_err)?;
        for r in rows {
            w.write_record([
                r.lemma.to_string(),
                r.parameters.clone(),
                r.lhs.to_string(),
                r.rhs.to_string(),
                r.pass.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasEstimate {
    pub format: &'static str,
    pub protocol: ProtocolKind,
    pub n: usize,
    pub h: usize,
    pub s0: usize,
    pub s1: usize,
    pub m: usize,
    pub effective_delta: f64,
    pub counting: Option<Counting>,
    pub round: usize,
    pub trials: usize,
    pub agents: usize,
    pub correct: usize,
    pub frequency: f64,
    /// Correct-weak-opinion probability from the exact oracle, when `m` is
    /// within the DP limit.
    pub oracle: Option<f64>,
    /// Whether the simulated weak opinion uses exactly `m` messages, as the
    /// oracle assumes.
    pub oracle_comparable: bool,
    /// Binomial standard deviation of the frequency under the oracle value.
    pub sigma: Option<f64>,
    pub z_score: Option<f64>,
    pub within_3_sigma: Option<bool>,
    /// `½ + 4√(log n / n)`.
    pub target: f64,
    pub frequency_clears_target: bool,
    pub oracle_clears_target: Option<bool>,
    pub seed: u64,
}

/// Monte-Carlo weak-opinion correctness over non-source agents, compared to
/// the exact oracle.
pub fn estimate_bias(cfg: &ExperimentConfig) -> Result<BiasEstimate, ExperimentError> {
    let resolved = cfg.resolve()?;
    let pop = &resolved.population;
    let non_sources = pop.n - pop.s0 - pop.s1;
    if non_sources == 0 {
        return Err(ExperimentError::Config("population has no non-source agents".into()));
    }
    let settings = cfg.bias.clone().unwrap_or_default();
    let wanted = settings.agents.unwrap_or(non_sources * cfg.trials);
    let trials = wanted.div_ceil(non_sources).max(1);
    let m = pop.protocol.m();
    let period = m.div_ceil(pop.h);
    let round = settings.round.unwrap_or(2 * period);
    let correct_bit = pop.correct_opinion();
    let first = pop.s0 + pop.s1;
    let per_trial: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let config = resolved.trial_config(k);
            let weak = weak_opinions_after(&config, round)?;
            Ok(weak[first..].iter().filter(|w| **w == Some(correct_bit)).count())
        })
        .collect::<Result<_, ExperimentError>>()?;
    let correct: usize = per_trial.iter().sum();
    let agents = trials * non_sources;
    let frequency = correct as f64 / agents as f64;

    // The oracles report Pr(weak = 1); mirror for a 0-majority population.
    let (lo, hi) = if pop.s1 >= pop.s0 { (pop.s0, pop.s1) } else { (pop.s1, pop.s0) };
    let (n64, lo, hi) = (pop.n as u64, lo as u64, hi as u64);
    let (oracle_value, comparable, counting) = match &pop.protocol {
        ProtocolParams::Sf(p) => (
            oracle::sf_weak_opinion_exact(n64, pop.effective_delta, lo, hi, m).ok(),
            p.counting == Counting::StrictM || m % pop.h == 0,
            Some(p.counting),
        ),
        ProtocolParams::Ssf(_) => {
            (oracle::ssf_weak_opinion_exact(n64, pop.effective_delta, lo, hi, m).ok(), m % pop.h == 0, None)
        }
    };
    let sigma = oracle_value.map(|p| (p * (1.0 - p) / agents as f64).sqrt());
    let z_score = oracle_value.zip(sigma).map(|(p, s)| {
        if s > 0.0 {
            (frequency - p) / s
        } else if frequency == p {
            0.0
        } else {
            f64::INFINITY
        }
    });
    let target = oracle::first_phase_target(pop.n as u64, cfg.log_base);
    let margin = 3.0 * (frequency * (1.0 - frequency) / agents as f64).sqrt();
    Ok(BiasEstimate {
        format: FORMAT_TAG,
        protocol: cfg.protocol,
        n: pop.n,
        h: pop.h,
        s0: pop.s0,
        s1: pop.s1,
        m,
        effective_delta: pop.effective_delta,
        counting,
        round,
        trials,
        agents,
        correct,
        frequency,
        oracle: oracle_value,
        oracle_comparable: comparable,
        sigma,
        z_score,
        within_3_sigma: z_score.map(|z| z.abs() <= 3.0),
        target,
        frequency_clears_target: frequency >= target - margin,
        oracle_clears_target: oracle_value.map(|p| p >= target),
        seed: pop.seed,
    })
}

/// Writes `contents` to `out` (a file path) or to standard output.
pub fn emit(out: Option<&Path>, contents: &str) -> Result<(), ExperimentError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            write_file(path, contents)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes()).map_err(|e| ExperimentError::io(Path::new("<stdout>"), e))
        }
    }
}
