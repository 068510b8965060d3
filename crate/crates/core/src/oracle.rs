//! Exact probability computations used as ground truth for simulations.
//!
//! Sums of `{−1, 0, +1}` variables are evaluated by a convolution DP carried
//! out in double-double arithmetic; Rademacher advantages use the paired
//! binomial form, which is exactly zero at `θ = 0`.

use serde::Serialize;
use thiserror::Error;

use crate::protocol::LogBase;

/// Largest trial count accepted by the DP.
pub const MAX_DP_TRIALS: usize = 10_000;

const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("m = {m} exceeds the exact-oracle limit of {limit}")]
    TooLarge { m: usize, limit: usize },
    #[error("{0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, OracleError> {
    Err(OracleError::Domain(msg.into()))
}

// Double-double arithmetic (unevaluated sum hi + lo).

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline(always)]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline(always)]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline(always)]
fn split(a: f64) -> (f64, f64) {
    const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1
    let t = SPLITTER * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

#[inline(always)]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline(always)]
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline(always)]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(s, e + (self.lo + o.lo));
        Dd { hi, lo }
    }

    #[inline(always)]
    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// `m` i.i.d. variables equal to `+1` w.p. `p_plus`, `−1` w.p. `p_minus`, `0`
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrinomialSpec {
    pub m: usize,
    pub p_plus: f64,
    pub p_minus: f64,
}

impl TrinomialSpec {
    pub fn new(m: usize, p_plus: f64, p_minus: f64) -> Result<Self, OracleError> {
        if !(p_plus >= 0.0 && p_minus >= 0.0 && p_plus + p_minus <= 1.0 + MASS_TOL) {
            return domain(format!("invalid trinomial probabilities p+ = {p_plus}, p- = {p_minus}"));
        }
        Ok(Self { m, p_plus, p_minus })
    }

    pub fn p_zero(&self) -> f64 {
        (1.0 - self.p_plus - self.p_minus).max(0.0)
    }

    /// `Pr(X_k = +1 | X_k ≠ 0)`.
    pub fn conditional_plus(&self) -> Option<f64> {
        let nz = self.p_plus + self.p_minus;
        (nz > 0.0).then(|| self.p_plus / nz)
    }
}

/// Probability vector over `offset..offset + probs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactDistribution {
    pub offset: i64,
    pub probs: Vec<f64>,
    positive: f64,
    negative: f64,
    zero: f64,
    advantage: f64,
}

impl ExactDistribution {
    pub fn prob(&self, k: i64) -> f64 {
        usize::try_from(k - self.offset).ok().and_then(|i| self.probs.get(i)).copied().unwrap_or(0.0)
    }

    pub fn pr_positive(&self) -> f64 {
        self.positive
    }

    pub fn pr_negative(&self) -> f64 {
        self.negative
    }

    pub fn pr_zero(&self) -> f64 {
        self.zero
    }

    pub fn total(&self) -> f64 {
        self.positive + self.negative + self.zero
    }

    /// `Pr(X > 0) + ½·Pr(X = 0)`: the chance a majority vote with a fair
    /// tie-breaking coin picks `+1`.
    pub fn pr_majority_plus(&self) -> f64 {
        0.5 + 0.5 * self.advantage
    }

    /// `Pr(X > 0) − Pr(X < 0)`.
    pub fn advantage(&self) -> f64 {
        self.advantage
    }
}

/// Exact distribution of `Σ X_k` for a trinomial spec.
pub fn exact_sum_distribution(spec: &TrinomialSpec) -> Result<ExactDistribution, OracleError> {
    let m = spec.m;
    if m > MAX_DP_TRIALS {
        return Err(OracleError::TooLarge { m, limit: MAX_DP_TRIALS });
    }
    let (pp, pm, p0) = (spec.p_plus, spec.p_minus, spec.p_zero());
    // Index i holds value i − m.
    let width = 2 * m + 1;
    let mut cur = vec![Dd::ZERO; width];
    let mut next = vec![Dd::ZERO; width];
    cur[m] = Dd::from(1.0);
    for step in 0..m {
        // Support after `step` trials is m−step ..= m+step.
        let lo = m - step - 1;
        let hi = m + step + 1;
        for i in lo..=hi {
            // The ±1 pair is summed first so that a symmetric law yields an
            // exactly mirrored vector.
            let down = if i + 1 < width { cur[i + 1].mul_f64(pm) } else { Dd::ZERO };
            let up = if i >= 1 { cur[i - 1].mul_f64(pp) } else { Dd::ZERO };
            next[i] = down.add(up).add(cur[i].mul_f64(p0));
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let mut positive = Dd::ZERO;
    let mut negative = Dd::ZERO;
    for k in 1..=m {
        positive = positive.add(cur[m + k]);
        negative = negative.add(cur[m - k]);
    }
    Ok(ExactDistribution {
        offset: -(m as i64),
        probs: cur.iter().map(|d| d.to_f64()).collect(),
        positive: positive.to_f64(),
        negative: negative.to_f64(),
        zero: cur[m].to_f64(),
        advantage: positive.add(Dd { hi: -negative.hi, lo: -negative.lo }).to_f64(),
    })
}

fn check_theta(m: usize, theta: f64) -> Result<(), OracleError> {
    if m == 0 {
        return domain("m must be at least 1");
    }
    if m > MAX_DP_TRIALS {
        return Err(OracleError::TooLarge { m, limit: MAX_DP_TRIALS });
    }
    if !(0.0..=0.5).contains(&theta) {
        return domain(format!("bias θ = {theta} must lie in [0, 1/2]"));
    }
    Ok(())
}

/// `Pr(X > 0) − Pr(X < 0)` for `X` a sum of `m` independent `±1` variables
/// with `Pr(+1) = ½ + θ`.
pub fn rademacher_advantage(m: usize, theta: f64) -> Result<f64, OracleError> {
    check_theta(m, theta)?;
    let p = 0.5 + theta;
    let q = 0.5 - theta;
    if q == 0.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p.ln(), q.ln());
    let log_ratio = lq - lp;
    // Σ_{k > m/2} C(m,k)·(p^k q^{m−k} − q^k p^{m−k}), each term factored as
    // C(m,k) p^k q^{m−k} · (1 − (q/p)^{2k−m}).
    let mut log_binom = 0.0;
    let mut sum = Dd::ZERO;
    for k in 0..=m {
        if 2 * k > m {
            let base = (log_binom + k as f64 * lp + (m - k) as f64 * lq).exp();
            let factor = -((2 * k - m) as f64 * log_ratio).exp_m1();
            sum = sum.add(Dd::from(base * factor));
        }
        if k < m {
            log_binom += ((m - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    Ok(sum.to_f64())
}

/// `√(2/(πe))`.
pub fn boosting_constant() -> f64 {
    (2.0 / (std::f64::consts::PI * std::f64::consts::E)).sqrt()
}

/// `√(2/(πe))·min{√m·θ, 1}`.
pub fn boosting_lower_bound(m: usize, theta: f64) -> f64 {
    boosting_constant() * ((m as f64).sqrt() * theta).min(1.0)
}

/// Two-branch `g(θ, m)`; `√(2m/π)·g(θ, m)` lower-bounds the Rademacher
/// advantage for `θ > 0`.
pub fn g_function(theta: f64, m: usize) -> f64 {
    let mf = m as f64;
    let exponent = (mf - 1.0) / 2.0;
    if theta < 1.0 / mf.sqrt() {
        theta * (1.0 - theta * theta).powf(exponent)
    } else {
        (1.0 / mf.sqrt()) * (1.0 - 1.0 / mf).powf(exponent)
    }
}

/// `Pr(Binomial(n, p) = 1) = n·p·(1−p)^{n−1}`, for `n·p ≤ 1`.
pub fn binomial_single_hit(n: u64, p: f64) -> Result<f64, OracleError> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("p = {p} is not a probability"));
    }
    let np = n as f64 * p;
    if np > 1.0 + MASS_TOL {
        return domain(format!("n·p = {np} exceeds 1"));
    }
    Ok(np * (1.0 - p).powf((n - 1) as f64))
}

fn check_population(n: u64, s0: u64, s1: u64, delta: f64, limit: f64) -> Result<(), OracleError> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    if s0 + s1 > n {
        return domain(format!("s0 + s1 = {} exceeds n = {n}", s0 + s1));
    }
    if !(delta >= 0.0 && delta < limit) {
        return domain(format!("noise level {delta} must lie in [0, {limit})"));
    }
    Ok(())
}

/// Per-sample trinomial law of one strict-m first-phase vote in SF.
pub fn sf_weak_opinion_spec(n: u64, delta: f64, s0: u64, s1: u64, m: usize) -> Result<TrinomialSpec, OracleError> {
    check_population(n, s0, s1, delta, 0.5)?;
    let (nf, f1, f0) = (n as f64, s1 as f64, s0 as f64);
    // A: observation in phase 0 (non-sources display 0).
    let a1 = (f1 / nf) * (1.0 - delta) + (1.0 - f1 / nf) * delta;
    // B: observation in phase 1 (non-sources display 1).
    let b1 = (f0 / nf) * delta + (1.0 - f0 / nf) * (1.0 - delta);
    let a0 = (f1 / nf) * delta + (1.0 - f1 / nf) * (1.0 - delta);
    let b0 = (f0 / nf) * (1.0 - delta) + (1.0 - f0 / nf) * delta;
    TrinomialSpec::new(m, a1 * b1, a0 * b0)
}

/// `Pr(Ỹ = 1)` for an SF agent counting exactly `m` messages per phase.
pub fn sf_weak_opinion_exact(n: u64, delta: f64, s0: u64, s1: u64, m: usize) -> Result<f64, OracleError> {
    Ok(exact_sum_distribution(&sf_weak_opinion_spec(n, delta, s0, s1, m)?)?.pr_majority_plus())
}

/// Per-sample trinomial law of one source-tagged vote in SSF.
pub fn ssf_weak_opinion_spec(n: u64, delta: f64, s0: u64, s1: u64, m: usize) -> Result<TrinomialSpec, OracleError> {
    check_population(n, s0, s1, delta, 0.25)?;
    let nf = n as f64;
    let tagged = |s: u64| (s as f64 / nf) * (1.0 - 3.0 * delta) + (1.0 - s as f64 / nf) * delta;
    TrinomialSpec::new(m, tagged(s1), tagged(s0))
}

/// `Pr(Ỹ = 1)` for an SSF agent updating from `m` stored messages.
pub fn ssf_weak_opinion_exact(n: u64, delta: f64, s0: u64, s1: u64, m: usize) -> Result<f64, OracleError> {
    Ok(exact_sum_distribution(&ssf_weak_opinion_spec(n, delta, s0, s1, m)?)?.pr_majority_plus())
}

/// `½ + 4·√(log n / n)`.
pub fn first_phase_target(n: u64, log_base: LogBase) -> f64 {
    let nf = n as f64;
    0.5 + 4.0 * (log_base.log(nf) / nf).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    /// `δ ≥ (s0+s1)/(2n)·(1−dδ)`.
    HighNoise,
    LowNoise,
}

/// Term-by-term evaluation of the message-budget condition at `c1 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MConditionReport {
    pub m: usize,
    pub noise_term: f64,
    pub spread_term: f64,
    pub sources_term: f64,
    pub log_term: f64,
    /// Extra `h·log n` term of the SF budget.
    pub sample_term: f64,
    /// Sum of the four generic terms.
    pub lemma_requirement: f64,
    pub sf_requirement: f64,
    /// `δ·n·log n/(1−4δ)² + n`, infinite when `δ ≥ 1/4`.
    pub ssf_requirement: f64,
    pub covers_lemma: bool,
    pub covers_sf: bool,
    pub covers_ssf: bool,
    pub regime_threshold: f64,
    pub regime: NoiseRegime,
    /// Implied lower bound on `Pr(X_k = 1 | X_k ≠ 0)`.
    pub p_bound: f64,
    /// Implied lower bound on `Pr(X_k ≠ 0)`.
    pub nonzero_bound: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn check_m_condition(
    n: u64,
    h: usize,
    delta: f64,
    s0: u64,
    s1: u64,
    d: usize,
    m: usize,
    log_base: LogBase,
) -> MConditionReport {
    let nf = n as f64;
    let s = s1.abs_diff(s0) as f64;
    let total = (s0 + s1) as f64;
    let log_n = log_base.log(nf);
    let one_minus = 1.0 - d as f64 * delta;
    let noise_term = nf * delta * log_n / ((s * s).min(nf) * one_minus * one_minus);
    let spread_term = nf.sqrt() * log_n / s;
    let sources_term = total * log_n / (s * s);
    let log_term = log_n;
    let sample_term = h as f64 * log_n;
    let lemma_requirement = noise_term + spread_term + sources_term + log_term;
    let sf_requirement = lemma_requirement + sample_term;
    let ssf_requirement = if delta < 0.25 {
        let om = 1.0 - 4.0 * delta;
        delta * nf * log_n / (om * om) + nf
    } else {
        f64::INFINITY
    };
    let regime_threshold = total / (2.0 * nf) * one_minus;
    let (regime, p_bound) = if delta >= regime_threshold {
        (NoiseRegime::HighNoise, 0.5 + (s / nf) * one_minus / (8.0 * delta))
    } else {
        (NoiseRegime::LowNoise, 0.5 + s / (4.0 * total))
    };
    let mf = m as f64;
    MConditionReport {
        m,
        noise_term,
        spread_term,
        sources_term,
        log_term,
        sample_term,
        lemma_requirement,
        sf_requirement,
        ssf_requirement,
        covers_lemma: mf >= lemma_requirement,
        covers_sf: mf >= sf_requirement,
        covers_ssf: mf >= ssf_requirement,
        regime_threshold,
        regime,
        p_bound,
        nonzero_bound: one_minus * one_minus * total / (2.0 * nf) + delta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailBound {
    /// `Pr(X ≥ (1+δ)μ) ≤ exp(−δ²μ/2)`.
    MultiplicativeChernoff { delta: f64, mu: f64 },
    /// `Pr(X − E X ≥ δ) ≤ exp(−2δ² / Σ(b_i − a_i)²)`.
    Hoeffding { delta: f64, ranges: Vec<(f64, f64)> },
    /// Hoeffding for `n` variables in `[0, 1]`.
    HoeffdingBinary { n: u64, delta: f64 },
}

pub fn tail_bound(kind: &TailBound) -> Result<f64, OracleError> {
    match kind {
        TailBound::MultiplicativeChernoff { delta, mu } => {
            if !(0.0..=1.0).contains(delta) {
                return domain(format!("Chernoff deviation δ = {delta} must lie in [0, 1]"));
            }
            if !(*mu >= 0.0 && mu.is_finite()) {
                return domain(format!("mean μ = {mu} must be non-negative"));
            }
            Ok((-delta * delta * mu / 2.0).exp())
        }
        TailBound::Hoeffding { delta, ranges } => {
            if !(*delta >= 0.0 && delta.is_finite()) {
                return domain(format!("deviation {delta} must be non-negative"));
            }
            let mut width2 = 0.0;
            for &(a, b) in ranges {
                if a.is_nan() || b.is_nan() || a > b {
                    return domain(format!("range [{a}, {b}] is empty"));
                }
                width2 += (b - a) * (b - a);
            }
            if *delta == 0.0 {
                return Ok(1.0);
            }
            if width2 == 0.0 {
                return domain("Hoeffding bound needs at least one non-degenerate range");
            }
            Ok((-2.0 * delta * delta / width2).exp())
        }
        TailBound::HoeffdingBinary { n, delta } => {
            if *n == 0 {
                return domain("n must be at least 1");
            }
            tail_bound(&TailBound::Hoeffding { delta: *delta, ranges: vec![(0.0, 1.0); *n as usize] })
        }
    }
}

/// One row of a lemma verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lemma: &'static str,
    pub parameters: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Rademacher advantage against its lower bound on `m ∈ 1..=200`,
/// `θ ∈ {0, 0.01, …, 0.49}`.
pub fn majority_boosting_grid() -> Vec<LemmaCheck> {
    let mut rows = Vec::with_capacity(200 * 50);
    for m in 1..=200 {
        for k in 0..50 {
            let theta = k as f64 / 100.0;
            let lhs = rademacher_advantage(m, theta).expect("grid is in domain");
            let rhs = boosting_lower_bound(m, theta);
            rows.push(LemmaCheck {
                lemma: "majority_boosting",
                parameters: format!("m={m};theta={theta}"),
                lhs,
                rhs,
                pass: lhs >= rhs,
            });
        }
    }
    rows
}

/// `n·p·(1−p)^{n−1} ≥ n·p/e` on `n ∈ 1..=100`, `p = k/(100n)`.
pub fn binomial_single_hit_grid() -> Vec<LemmaCheck> {
    let mut rows = Vec::with_capacity(100 * 100);
    for n in 1..=100u64 {
        for k in 1..=100u64 {
            let p = k as f64 / (100 * n) as f64;
            let lhs = binomial_single_hit(n, p).expect("grid is in domain");
            let rhs = n as f64 * p / std::f64::consts::E;
            rows.push(LemmaCheck {
                lemma: "binomial_single_hit",
                parameters: format!("n={n};p={p}"),
                lhs,
                rhs,
                pass: lhs >= rhs,
            });
        }
    }
    rows
}

/// Which protocol's weak opinion a first-phase check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakOpinionModel {
    Sf,
    Ssf,
}

/// Exact weak-opinion correctness against `½ + 4√(log n/n)` at the smallest
/// `m` that satisfies the budget condition at `c1 = 1`. Tuples whose `m`
/// exceeds the DP limit are skipped.
pub fn first_phase_check(
    model: WeakOpinionModel,
    n: u64,
    h: usize,
    delta: f64,
    s0: u64,
    s1: u64,
    log_base: LogBase,
) -> Result<Option<LemmaCheck>, OracleError> {
    let (d, lemma) = match model {
        WeakOpinionModel::Sf => (2, "first_phase_sf"),
        WeakOpinionModel::Ssf => (4, "first_phase_ssf"),
    };
    let report = check_m_condition(n, h, delta, s0, s1, d, 0, log_base);
    let need = match model {
        WeakOpinionModel::Sf => report.sf_requirement,
        WeakOpinionModel::Ssf => report.lemma_requirement.max(report.ssf_requirement),
    };
    if !need.is_finite() || need > MAX_DP_TRIALS as f64 {
        return Ok(None);
    }
    let m = (need.ceil() as usize).max(1);
    // Correct opinion is the majority preference; mirror the oracle when 0.
    let (lo, hi) = if s1 >= s0 { (s0, s1) } else { (s1, s0) };
    let lhs = match model {
        WeakOpinionModel::Sf => sf_weak_opinion_exact(n, delta, lo, hi, m)?,
        WeakOpinionModel::Ssf => ssf_weak_opinion_exact(n, delta, lo, hi, m)?,
    };
    let rhs = first_phase_target(n, log_base);
    Ok(Some(LemmaCheck {
        lemma,
        parameters: format!("n={n};h={h};delta={delta};s0={s0};s1={s1};m={m}"),
        lhs,
        rhs,
        pass: lhs >= rhs,
    }))
}

/// First-phase checks over a fixed grid of small populations.
pub fn first_phase_grid(log_base: LogBase) -> Vec<LemmaCheck> {
    let mut rows = Vec::new();
    for n in [100u64, 200, 500, 1000] {
        for (s1, s0) in [(1u64, 0u64), (2, 1), (n / 10, 0), (n / 4, n / 8)] {
            for model in [WeakOpinionModel::Sf, WeakOpinionModel::Ssf] {
                for delta in [0.0, 0.01, 0.05, 0.1, 0.2] {
                    if let Ok(Some(row)) = first_phase_check(model, n, 1, delta, s0, s1, log_base) {
                        rows.push(row);
                    }
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Full enumeration of all 3^m outcome sequences.
    fn brute_force(spec: &TrinomialSpec) -> Vec<f64> {
        let m = spec.m;
        let mut out = vec![0.0; 2 * m + 1];
        let probs = [spec.p_minus, spec.p_zero(), spec.p_plus];
        for code in 0..3usize.pow(m as u32) {
            let (mut c, mut value, mut p) = (code, 0i64, 1.0);
            for _ in 0..m {
                let digit = c % 3;
                c /= 3;
                value += digit as i64 - 1;
                p *= probs[digit];
            }
            out[(value + m as i64) as usize] += p;
        }
        out
    }

    #[test]
    fn dp_examples() {
        let d = exact_sum_distribution(&TrinomialSpec::new(1, 0.5, 0.5).unwrap()).unwrap();
        assert_eq!(d.prob(-1), 0.5);
        assert_eq!(d.prob(1), 0.5);
        assert_eq!(d.prob(0), 0.0);
        let d = exact_sum_distribution(&TrinomialSpec::new(2, 0.25, 0.25).unwrap()).unwrap();
        assert!(close(d.pr_zero(), 0.375, 1e-15));
        let d = exact_sum_distribution(&TrinomialSpec::new(3, 1.0, 0.0).unwrap()).unwrap();
        assert_eq!(d.prob(3), 1.0);
        assert_eq!(d.pr_positive(), 1.0);
        assert!(matches!(
            exact_sum_distribution(&TrinomialSpec::new(10_001, 0.1, 0.1).unwrap()),
            Err(OracleError::TooLarge { .. })
        ));
        assert!(TrinomialSpec::new(3, 0.7, 0.4).is_err());
        assert!(TrinomialSpec::new(3, -0.1, 0.4).is_err());
    }

    #[test]
    fn dp_matches_brute_force() {
        let specs = [(0.2, 0.3), (0.5, 0.5), (0.0, 0.4), (0.9, 0.05), (1.0 / 3.0, 1.0 / 3.0), (0.01, 0.002)];
        for m in 0..=12 {
            for &(pp, pm) in &specs {
                let spec = TrinomialSpec::new(m, pp, pm).unwrap();
                let d = exact_sum_distribution(&spec).unwrap();
                let b = brute_force(&spec);
                for (k, &want) in b.iter().enumerate() {
                    assert!(close(d.probs[k], want, 1e-12), "m={m} k={k}");
                }
            }
        }
    }

    #[test]
    fn dp_mass_is_conserved_at_the_size_limit() {
        let d = exact_sum_distribution(&TrinomialSpec::new(MAX_DP_TRIALS, 0.3, 0.25).unwrap()).unwrap();
        assert!(close(d.total(), 1.0, 1e-12), "total {}", d.total());
        assert!(d.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn rademacher_examples() {
        assert!(close(rademacher_advantage(1, 0.3).unwrap(), 0.6, 1e-15));
        assert!(close(rademacher_advantage(2, 0.25).unwrap(), 0.5, 1e-15));
        assert_eq!(rademacher_advantage(3, 0.5).unwrap(), 1.0);
        assert_eq!(rademacher_advantage(7, 0.0).unwrap(), 0.0);
        assert!(rademacher_advantage(0, 0.1).is_err());
        assert!(rademacher_advantage(3, 0.6).is_err());
    }

    #[test]
    fn rademacher_matches_dp() {
        for m in [1, 2, 5, 10, 57, 200, 1000] {
            for theta in [0.0, 0.01, 0.1, 0.25, 0.49] {
                let spec = TrinomialSpec::new(m, 0.5 + theta, 0.5 - theta).unwrap();
                let d = exact_sum_distribution(&spec).unwrap();
                let via_dp = d.pr_positive() - d.pr_negative();
                assert!(close(rademacher_advantage(m, theta).unwrap(), via_dp, 1e-12), "m={m} θ={theta}");
            }
        }
    }

    #[test]
    fn boosting_bound_examples() {
        assert!(close(boosting_lower_bound(4, 0.9), 0.48394, 1e-5));
        assert_eq!(boosting_lower_bound(17, 0.0), 0.0);
        assert!(close(boosting_lower_bound(100, 0.05), 0.24197, 1e-5));
    }

    #[test]
    fn g_function_branches() {
        // θ < 1/√m
        assert!(close(g_function(0.1, 4), 0.1 * 0.99f64.powf(1.5), 1e-15));
        // θ ≥ 1/√m
        assert!(close(g_function(0.5, 4), 0.5 * 0.75f64.powf(1.5), 1e-15));
        assert!(close(g_function(0.3, 1), 0.3, 1e-15));
        assert!(close(g_function(1.0, 1), 1.0, 1e-15));
    }

    #[test]
    fn majority_boosting_chain_holds_on_grid() {
        for m in 1..=200usize {
            for k in 1..50 {
                let theta = k as f64 / 100.0;
                let adv = rademacher_advantage(m, theta).unwrap();
                let mid = (2.0 * m as f64 / std::f64::consts::PI).sqrt() * g_function(theta, m);
                assert!(adv >= mid - 1e-12, "m={m} θ={theta}: {adv} < {mid}");
                assert!(mid >= boosting_lower_bound(m, theta) - 1e-12, "m={m} θ={theta}");
            }
        }
        assert!(majority_boosting_grid().iter().all(|r| r.pass));
    }

    #[test]
    fn binomial_examples_and_grid() {
        assert_eq!(binomial_single_hit(1, 1.0).unwrap(), 1.0);
        assert!(close(binomial_single_hit(2, 0.5).unwrap(), 0.5, 1e-15));
        assert!(close(binomial_single_hit(10, 0.1).unwrap(), 0.9f64.powi(9), 1e-15));
        assert!(binomial_single_hit(10, 0.2).is_err());
        let grid = binomial_single_hit_grid();
        assert_eq!(grid.len(), 10_000);
        assert!(grid.iter().all(|r| r.pass));
    }

    #[test]
    fn sf_oracle_examples() {
        let spec = sf_weak_opinion_spec(4, 0.1, 0, 1, 1).unwrap();
        assert!(close(spec.p_plus, 0.27, 1e-15));
        assert!(close(spec.p_minus, 0.07, 1e-15));
        for m in [1, 2, 7, 50] {
            assert!(sf_weak_opinion_exact(100, 0.0, 0, 3, m).unwrap() >= 0.5);
            assert_eq!(sf_weak_opinion_exact(100, 0.2, 4, 4, m).unwrap(), 0.5);
        }
        assert!(sf_weak_opinion_exact(100, 0.5, 0, 1, 3).is_err());
    }

    #[test]
    fn ssf_oracle_examples() {
        assert!(close(ssf_weak_opinion_exact(10, 0.0, 0, 1, 1).unwrap(), 0.55, 1e-15));
        assert!(close(ssf_weak_opinion_exact(10, 0.1, 1, 2, 1).unwrap(), 0.53, 1e-15));
        for m in [1, 4, 31] {
            assert_eq!(ssf_weak_opinion_exact(100, 0.1, 3, 3, m).unwrap(), 0.5);
        }
        assert!(ssf_weak_opinion_exact(10, 0.25, 0, 1, 1).is_err());
    }

    #[test]
    fn m_condition_examples() {
        let r = check_m_condition(100, 1, 0.0, 0, 3, 2, 1000, LogBase::Natural);
        assert_eq!(r.noise_term, 0.0);
        assert_eq!(r.regime, NoiseRegime::LowNoise);
        assert!(close(r.p_bound, 0.5 + 3.0 / 12.0, 1e-15));

        let r = check_m_condition(100, 1, 0.1, 0, 1, 2, 1000, LogBase::Natural);
        assert!(close(r.regime_threshold, 0.004, 1e-15));
        assert_eq!(r.regime, NoiseRegime::HighNoise);
        assert!(close(r.p_bound, 0.51, 1e-12));
        let ln = 100f64.ln();
        assert!(close(r.noise_term, 100.0 * 0.1 * ln / (1.0 * 0.64), 1e-9));
        assert!(close(r.spread_term, 10.0 * ln, 1e-9));
        assert!(close(r.sources_term, ln, 1e-12));
        assert!(close(r.sf_requirement, r.lemma_requirement + ln, 1e-9));
        assert!(r.covers_sf);
        let r = check_m_condition(100, 1, 0.1, 0, 1, 2, 10, LogBase::Natural);
        assert!(!r.covers_lemma);
    }

    #[test]
    fn closed_forms_meet_their_claimed_bounds() {
        // The per-sample laws satisfy the nonzero and conditional-plus bounds
        // the budget condition relies on.
        for n in [100u64, 1000] {
            for (s0, s1) in [(0u64, 1u64), (1, 2), (0, n / 4), (n / 8, n / 4)] {
                for delta in [0.0, 0.01, 0.05, 0.1, 0.2] {
                    for (d, spec) in [
                        (2, sf_weak_opinion_spec(n, delta, s0, s1, 1).unwrap()),
                        (4, ssf_weak_opinion_spec(n, delta, s0, s1, 1).unwrap()),
                    ] {
                        let r = check_m_condition(n, 1, delta, s0, s1, d, 1, LogBase::Natural);
                        let nz = spec.p_plus + spec.p_minus;
                        assert!(nz >= r.nonzero_bound - 1e-12, "n={n} δ={delta} d={d} s=({s0},{s1})");
                        let p = spec.conditional_plus().unwrap();
                        assert!(p >= r.p_bound - 1e-12, "n={n} δ={delta} d={d}: {p} < {}", r.p_bound);
                    }
                }
            }
        }
    }

    #[test]
    fn tail_bound_examples() {
        let chern = |delta, mu| tail_bound(&TailBound::MultiplicativeChernoff { delta, mu }).unwrap();
        assert!(close(chern(1.0, 8.0), (-4.0f64).exp(), 1e-15));
        assert_eq!(chern(0.0, 8.0), 1.0);
        let hoeff = |n, delta| tail_bound(&TailBound::HoeffdingBinary { n, delta }).unwrap();
        assert!(close(hoeff(100, 10.0), (-2.0f64).exp(), 1e-15));
        assert_eq!(hoeff(100, 0.0), 1.0);
        assert!(tail_bound(&TailBound::MultiplicativeChernoff { delta: 1.5, mu: 1.0 }).is_err());
        assert!(tail_bound(&TailBound::Hoeffding { delta: 1.0, ranges: vec![(1.0, 0.0)] }).is_err());
        let general = tail_bound(&TailBound::Hoeffding { delta: 2.0, ranges: vec![(-1.0, 1.0); 4] }).unwrap();
        assert!(close(general, (-0.5f64).exp(), 1e-15));
    }

    proptest! {
        #[test]
        fn dp_is_a_distribution(m in 0usize..300, pp in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let pm = (1.0 - pp) * frac;
            let d = exact_sum_distribution(&TrinomialSpec::new(m, pp, pm).unwrap()).unwrap();
            prop_assert!((d.total() - 1.0).abs() <= 1e-12);
            prop_assert!(d.probs.iter().all(|&p| p >= 0.0));
            let mean: f64 = d.probs.iter().enumerate().map(|(i, p)| (i as f64 - m as f64) * p).sum();
            prop_assert!((mean - m as f64 * (pp - pm)).abs() <= 1e-9 * (m as f64).max(1.0));
        }

        #[test]
        fn boosting_lemma_holds(m in 1usize..2000, theta in 0.0f64..0.5) {
            prop_assert!(rademacher_advantage(m, theta).unwrap() >= boosting_lower_bound(m, theta));
        }

        #[test]
        fn swapping_sources_mirrors_weak_opinion(n in 8u64..400, a in 0u64..3, b in 0u64..3, delta in 0.0f64..0.24, m in 1usize..200) {
            prop_assume!(a + b <= n);
            let sf = sf_weak_opinion_exact(n, delta, a, b, m).unwrap() + sf_weak_opinion_exact(n, delta, b, a, m).unwrap();
            prop_assert!((sf - 1.0).abs() < 1e-12);
            let ssf = ssf_weak_opinion_exact(n, delta, a, b, m).unwrap() + ssf_weak_opinion_exact(n, delta, b, a, m).unwrap();
            prop_assert!((ssf - 1.0).abs() < 1e-12);
        }
    }
}
