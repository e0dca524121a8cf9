//! Rank-based comparison of absolute-error distributions.
//!
//! Implements the one-sided Wilcoxon rank-sum test (exact permutation
//! distribution for small samples, a moment-corrected normal approximation
//! otherwise), Bonferroni alpha adjustment, and the Vargha-Delaney A12
//! effect size with the conventional negligible/small/medium/large labels.
//!
//! Ties are handled with midranks throughout. Exact p-values follow the
//! mid-p convention: the probability mass exactly at the observed rank sum
//! counts half. Under that convention two identical samples score exactly
//! 0.5, and the approximate path needs no continuity offset because the
//! continuous CDF evaluated at the observed sum already targets the
//! midpoint of the jump.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("each sample needs at least 2 values (got {0} and {1})")]
    SampleTooSmall(usize, usize),
    #[error("sample must be non-empty")]
    EmptySample,
    #[error("exact permutation test limited to {max} combined values, got {got}")]
    ExactTooLarge { max: usize, got: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("hypothesis count must be >= 1")]
    BadHypothesisCount,
    #[error("error vectors for {0} and {1} have different lengths ({2} vs {3})")]
    Misaligned(String, String, usize, usize),
    #[error("need at least 2 methods to compare")]
    TooFewMethods,
}

/// Effect-size strength bands for A12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    /// Band for a directional A12 value: below 0.6 is negligible, then
    /// small, medium from 0.7, large from 0.8.
    pub fn from_directional(a12: f64) -> Self {
        if a12 >= 0.8 {
            Magnitude::Large
        } else if a12 >= 0.7 {
            Magnitude::Medium
        } else if a12 >= 0.6 {
            Magnitude::Small
        } else {
            Magnitude::Negligible
        }
    }

    /// Band for the strength of either direction: the same thresholds
    /// applied to `max(a12, 1 - a12)`.
    pub fn from_symmetric(a12: f64) -> Self {
        Self::from_directional(a12.max(1.0 - a12))
    }

    /// Single-letter form used in results tables.
    pub fn letter(self) -> &'static str {
        match self {
            Magnitude::Negligible => "n",
            Magnitude::Small => "s",
            Magnitude::Medium => "m",
            Magnitude::Large => "l",
        }
    }
}

/// Which p-value route produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    /// Exact for combined sizes up to 20, approximate beyond.
    Auto,
    Exact,
    Approximate,
}

/// Combined size at and below which `Auto` uses the exact distribution.
pub const EXACT_CUTOVER: usize = 20;
/// Hard ceiling for the exact path; the subset-count table grows as
/// C(n, n/2) and turns from cheap to pointless past this.
pub const EXACT_MAX_COMBINED: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct StatConfig {
    pub alpha: f64,
    pub k_hypotheses: usize,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self { alpha: 0.05, k_hypotheses: 1 }
    }
}

impl StatConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::BadAlpha(self.alpha));
        }
        if self.k_hypotheses == 0 {
            return Err(StatsError::BadHypothesisCount);
        }
        Ok(())
    }
}

/// Outcome of one pairwise method comparison.
///
/// `p_value` tests "errors of `method_a` stochastically smaller than errors
/// of `method_b`"; `a12` is oriented so values above 0.5 read "`method_a`
/// better". `rank_sum_first`, `m`, and `n_obs` describe the first group of
/// that A12 computation (the errors of `method_b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub method_a: String,
    pub method_b: String,
    pub p_value: f64,
    pub a12: f64,
    pub magnitude: Magnitude,
    pub rank_sum_first: f64,
    pub m: usize,
    pub n_obs: usize,
    pub alpha: f64,
    pub alpha_used: f64,
    pub significant_raw: bool,
    pub significant: bool,
    pub method_used: WilcoxonMethod,
}

/// Midranks of `values` (average rank across each tie run), 1-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // average of 1-based positions i+1 ..= j
        let r = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = r;
        }
        i = j;
    }
    ranks
}

/// One-sided Wilcoxon rank-sum p-value for the alternative "values of `a`
/// stochastically smaller than values of `b`", route chosen by size.
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    Ok(wilcoxon_one_sided_with(a, b, WilcoxonMethod::Auto)?.0)
}

/// As [`wilcoxon_one_sided`], with the route forced and reported.
pub fn wilcoxon_one_sided_with(
    a: &[f64],
    b: &[f64],
    method: WilcoxonMethod,
) -> Result<(f64, WilcoxonMethod), StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::SampleTooSmall(a.len(), b.len()));
    }
    let combined_len = a.len() + b.len();
    let mut combined = Vec::with_capacity(combined_len);
    combined.extend_from_slice(a);
    combined.extend_from_slice(b);
    let ranks = midranks(&combined);
    let r_obs: f64 = ranks[..a.len()].iter().sum();

    let use_exact = match method {
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Approximate => false,
        WilcoxonMethod::Auto => combined_len <= EXACT_CUTOVER,
    };
    if use_exact {
        if combined_len > EXACT_MAX_COMBINED {
            return Err(StatsError::ExactTooLarge {
                max: EXACT_MAX_COMBINED,
                got: combined_len,
            });
        }
        Ok((exact_midp(&ranks, a.len(), r_obs), WilcoxonMethod::Exact))
    } else {
        Ok((
            edgeworth_left_tail(&ranks, a.len(), r_obs),
            WilcoxonMethod::Approximate,
        ))
    }
}

/// Exact mid-p left tail of the rank-sum permutation distribution:
/// `P(R < r_obs) + P(R = r_obs) / 2` over all m-subsets of the midranks.
fn exact_midp(ranks: &[f64], m: usize, r_obs: f64) -> f64 {
    // Midranks are integers or half-integers; doubling makes them exact
    // integers so subset sums can be counted without rounding.
    let ranks2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let r_obs2 = (2.0 * r_obs).round() as usize;
    let max_sum: usize = ranks2.iter().sum();

    // dp[j][s] = number of j-subsets with doubled-rank sum s
    let mut dp = vec![vec![0u128; max_sum + 1]; m + 1];
    dp[0][0] = 1;
    for &r in &ranks2 {
        for j in (1..=m).rev() {
            for s in (r..=max_sum).rev() {
                let from = dp[j - 1][s - r];
                if from != 0 {
                    dp[j][s] += from;
                }
            }
        }
    }
    let mut below = 0u128;
    for s in 0..r_obs2.min(max_sum + 1) {
        below += dp[m][s];
    }
    let at = if r_obs2 <= max_sum { dp[m][r_obs2] } else { 0 };
    let total: u128 = dp[m].iter().sum();
    (below as f64 + at as f64 / 2.0) / total as f64
}

/// Normal approximation to the mid-p left tail, corrected with the exact
/// third and fourth moments of the rank-sum distribution (Edgeworth
/// expansion). The midrank-based variance term is the classical tie
/// correction; the higher moments tighten the tails enough to track the
/// exact distribution to about 3e-4 for tie-free samples of 10 to 20.
fn edgeworth_left_tail(ranks: &[f64], m: usize, r_obs: f64) -> f64 {
    let n_total = ranks.len();
    let mean_rank: f64 = ranks.iter().sum::<f64>() / n_total as f64;
    let mu = m as f64 * mean_rank;
    let (mu2, mu3, mu4) = sum_sample_moments(ranks, m);
    if mu2 <= 0.0 {
        // all midranks equal: the statistic is constant
        return 0.5;
    }
    let sd = mu2.sqrt();
    let z = (r_obs - mu) / sd;
    let skew = mu3 / (mu2 * sd);
    let exkurt = mu4 / (mu2 * mu2) - 3.0;
    let he2 = z * z - 1.0;
    let he3 = z * z * z - 3.0 * z;
    let he5 = z.powi(5) - 10.0 * z.powi(3) + 15.0 * z;
    let p = normal_cdf(z)
        - normal_pdf(z) * (skew / 6.0 * he2 + exkurt / 24.0 * he3 + skew * skew / 72.0 * he5);
    p.clamp(0.0, 1.0)
}

/// Central moments (2nd..4th) of the sum of `m` values drawn without
/// replacement from `population`.
///
/// Writing the sum as `Σ c_i J_i` with centered values `c_i` and centered
/// inclusion indicators `J_i = I_i - m/N` reduces every moment to power
/// sums of `c` weighted by joint indicator moments, which are exact
/// functions of the drawing probabilities. Everything is O(N).
fn sum_sample_moments(population: &[f64], m: usize) -> (f64, f64, f64) {
    let n = population.len();
    let mean = population.iter().sum::<f64>() / n as f64;
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for &v in population {
        let c = v - mean;
        s2 += c * c;
        s3 += c * c * c;
        s4 += c * c * c * c;
    }
    let e = |exps: &[u32]| joint_indicator_moment(exps, m, n);

    let mu2 = e(&[2]) * s2 - e(&[1, 1]) * s2;
    let mu3 = e(&[3]) * s3 - 3.0 * e(&[2, 1]) * s3 + 2.0 * e(&[1, 1, 1]) * s3;
    let mu4 = e(&[4]) * s4 - 4.0 * e(&[3, 1]) * s4
        + 3.0 * e(&[2, 2]) * (s2 * s2 - s4)
        + 6.0 * e(&[2, 1, 1]) * (2.0 * s4 - s2 * s2)
        + e(&[1, 1, 1, 1]) * (3.0 * s2 * s2 - 6.0 * s4);
    (mu2, mu3, mu4)
}

/// `E[Π_j (I_j - m/N)^{a_j}]` over distinct indices, where `I_j` indicates
/// membership in a uniform m-subset of N items.
///
/// Each factor collapses to `α + β I` with `α = (-f)^a`, `β = (1-f)^a - α`
/// (powers of an indicator are the indicator), so the product's expectation
/// is a sum over factor subsets weighted by the joint inclusion probability
/// π_t = m(m-1)…(m-t+1) / N(N-1)…(N-t+1).
fn joint_indicator_moment(exps: &[u32], m: usize, n: usize) -> f64 {
    let f = m as f64 / n as f64;
    let k = exps.len();
    let alphas: Vec<f64> = exps.iter().map(|&a| (-f).powi(a as i32)).collect();
    let betas: Vec<f64> = exps
        .iter()
        .zip(&alphas)
        .map(|(&a, &alpha)| (1.0 - f).powi(a as i32) - alpha)
        .collect();
    let pi = |t: usize| -> f64 {
        let mut p = 1.0;
        for i in 0..t {
            p *= (m - i) as f64 / (n - i) as f64;
        }
        p
    };
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        let t = mask.count_ones() as usize;
        let mut prod = pi(t);
        for (j, (alpha, beta)) in alphas.iter().zip(&betas).enumerate() {
            prod *= if (mask >> j) & 1 == 1 { *beta } else { *alpha };
        }
        total += prod;
    }
    total
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Bonferroni-adjusted significance level `alpha / k`.
pub fn bonferroni(alpha: f64, k: usize) -> Result<f64, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    if k == 0 {
        return Err(StatsError::BadHypothesisCount);
    }
    Ok(alpha / k as f64)
}

/// Vargha-Delaney A12 of `first` against `second` with its directional
/// magnitude band: the probability (with ties counting half) that a value
/// from `first` exceeds one from `second`.
pub fn a12(first: &[f64], second: &[f64]) -> Result<(f64, Magnitude), StatsError> {
    if first.is_empty() || second.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let m = first.len() as f64;
    let n = second.len() as f64;
    let mut combined = Vec::with_capacity(first.len() + second.len());
    combined.extend_from_slice(first);
    combined.extend_from_slice(second);
    let ranks = midranks(&combined);
    let r1: f64 = ranks[..first.len()].iter().sum();
    let value = (r1 / m - (m + 1.0) / 2.0) / n;
    Ok((value, Magnitude::from_directional(value)))
}

/// All pairwise comparisons between methods, preserving input order.
///
/// For each pair (A, B) taken in order, the p-value tests "A's errors
/// smaller" and A12 is computed as `a12(errors_B, errors_A)` so that values
/// above 0.5 favour A. Verdicts are recorded against both the raw alpha and
/// the Bonferroni-adjusted one from `cfg`.
pub fn compare_methods(
    errors_by_method: &[(String, Vec<f64>)],
    cfg: &StatConfig,
) -> Result<Vec<StatTestResult>, StatsError> {
    cfg.validate()?;
    if errors_by_method.len() < 2 {
        return Err(StatsError::TooFewMethods);
    }
    for pair in errors_by_method.windows(2) {
        let (na, ea) = &pair[0];
        let (nb, eb) = &pair[1];
        if ea.len() != eb.len() {
            return Err(StatsError::Misaligned(
                na.clone(),
                nb.clone(),
                ea.len(),
                eb.len(),
            ));
        }
    }
    let alpha_used = bonferroni(cfg.alpha, cfg.k_hypotheses)?;
    let mut results = Vec::new();
    for i in 0..errors_by_method.len() {
        for j in (i + 1)..errors_by_method.len() {
            let (name_a, err_a) = &errors_by_method[i];
            let (name_b, err_b) = &errors_by_method[j];
            let (p_value, method_used) =
                wilcoxon_one_sided_with(err_a, err_b, WilcoxonMethod::Auto)?;
            let (a12_value, magnitude) = a12(err_b, err_a)?;
            let ranks = {
                let mut combined = err_b.clone();
                combined.extend_from_slice(err_a);
                midranks(&combined)
            };
            let rank_sum_first: f64 = ranks[..err_b.len()].iter().sum();
            results.push(StatTestResult {
                method_a: name_a.clone(),
                method_b: name_b.clone(),
                p_value,
                a12: a12_value,
                magnitude,
                rank_sum_first,
                m: err_b.len(),
                n_obs: err_a.len(),
                alpha: cfg.alpha,
                alpha_used,
                significant_raw: p_value < cfg.alpha,
                significant: p_value < alpha_used,
                method_used,
            });
        }
    }
    Ok(results)
}
