//! Closed-form upper bounds on the reconstruction advantage.
//!
//! Bounds whose published form hides constants are evaluated through their
//! explicit proof-level expressions. Lemma-style bounds stated for a bag of
//! `n + 1` elements are exposed both at `n` (`*_at`) and in terms of the bag
//! size `k = n + 1`.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::advantage::{additive_adv, BLOCK, additive_iadv_llp, additive_iadv_rr, hpadv_estimate, AdvantageEstimate, EtaSampler};
use crate::error::{invalid, AuditError, Result};
use crate::mechanisms::PrivacyParams;
use crate::rng::{derive, domain, substream};
use crate::scalar::logit;
use crate::scalar::{min_err, Scalar};

fn precondition(msg: impl Into<String>) -> AuditError {
    AuditError::BoundPrecondition(msg.into())
}

fn check_p<T: Scalar>(p: T) -> Result<()> {
    if p >= T::zero() && p <= T::one() {
        Ok(())
    } else {
        Err(AuditError::ProbabilityOutOfRange { value: p.as_f64() })
    }
}

/// `ln C(k, s)` for `s = 0..=k`.
fn log_binomial_coefficients<T: Scalar>(k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(k + 1);
    let mut acc = T::zero();
    out.push(acc);
    for s in 1..=k {
        acc = acc + T::from_usize_lossy(k - s + 1).ln() - T::from_usize_lossy(s).ln();
        out.push(acc);
    }
    out
}

/// Exact ADV of LLP with bag size `k` when every prior equals `p`:
/// `min{p, 1 - p} - E[min{alpha, 1 - alpha}]`, `k alpha ~ Binomial(k, p)`.
pub fn thm1_exact<T: Scalar>(p: T, k: usize) -> Result<T> {
    check_p(p)?;
    if k == 0 {
        return Err(precondition("bag size must be >= 1"));
    }
    if p == T::zero() || p == T::one() {
        return Ok(T::zero());
    }
    let lc = log_binomial_coefficients::<T>(k);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let kk = T::from_usize_lossy(k);
    let expected: T = (0..=k)
        .map(|s| {
            let ls = T::from_usize_lossy(s);
            let mass = (lc[s] + ls * lp + (kk - ls) * lq).exp();
            mass * min_err(ls / kk)
        })
        .sum();
    Ok((min_err(p) - expected).max(T::zero()))
}

/// `sqrt(p (1 - p) / k)`.
pub fn thm1_upper<T: Scalar>(p: T, k: usize) -> Result<T> {
    check_p(p)?;
    if k == 0 {
        return Err(precondition("bag size must be >= 1"));
    }
    Ok((p * (T::one() - p) / T::from_usize_lossy(k)).sqrt())
}

fn c_n<T: Scalar>(p: T, n: T) -> T {
    let l8 = (T::c(8.0) * n).ln();
    let inner = T::c(2.0) * l8 + T::c(12.0) * n * p * (T::one() - p) * l8;
    (l8 / T::c(3.0) + inner.sqrt() / T::c(6.0)) / n.sqrt()
}

fn check_mu<T: Scalar>(mu: T) -> Result<()> {
    if mu >= T::zero() && mu <= T::c(0.25) {
        Ok(())
    } else {
        Err(precondition(format!("mu must lie in [0, 1/4], got {mu}")))
    }
}

/// Explicit LLP advantage bound for a bag of `n + 1` elements.
pub fn lemma_a1_bound_at<T: Scalar>(p: T, mu: T, n: usize) -> Result<T> {
    check_p(p)?;
    check_mu(mu)?;
    if n == 0 {
        return Err(precondition("needs at least two bag members"));
    }
    if mu == T::zero() {
        return Ok(T::zero());
    }
    let nn = T::from_usize_lossy(n);
    let e = T::c(std::f64::consts::E);
    let pi = T::c(std::f64::consts::PI);
    let konst = T::one() / e.powf(T::c(1.5)) + pi / T::c(4.0) + pi / e;
    let head = nn.powf(T::c(0.25)) * (T::c(2.0) * c_n(p, nn)).sqrt();
    let root = (konst * mu.sqrt() / nn.powf(T::c(1.5))).sqrt();
    Ok(head * root + mu / nn)
}

/// [`lemma_a1_bound_at`] for bag size `k >= 2`.
pub fn lemma_a1_bound<T: Scalar>(p: T, mu: T, k: usize) -> Result<T> {
    if k < 2 {
        return Err(precondition(format!("bag size must be >= 2, got {k}")));
    }
    lemma_a1_bound_at(p, mu, k - 1)
}

/// High-probability threshold and tail probability for the per-bag LLP gap:
/// `P(gap > threshold) <= tail_prob`, valid for `0 <= beta < (k - 1) mu`.
/// The probability is clamped to `[0, 1]`.
pub fn truebound<T: Scalar>(mu: T, k: usize, beta: T) -> Result<(T, T)> {
    if !(mu > T::zero()) {
        return Err(precondition(format!("mu must be > 0, got {mu}")));
    }
    if k < 2 {
        return Err(precondition(format!("bag size must be >= 2, got {k}")));
    }
    let kk = T::from_usize_lossy(k);
    let cap = (kk - T::one()) * mu;
    if !(beta >= T::zero() && beta < cap) {
        return Err(precondition(format!("beta must lie in [0, {cap}), got {beta}")));
    }
    let threshold = T::c(9.0) * (kk * mu + beta) / (kk * (cap - beta).sqrt());
    let exponent = -(beta * beta) / (T::c(2.0) * kk * mu + beta / T::c(6.0));
    let prob = ((kk + T::one()) * exponent.exp()).min(T::one());
    Ok((threshold, prob))
}

/// The conventional choice `beta = (k - 1) mu / 2`.
pub fn default_beta<T: Scalar>(mu: T, k: usize) -> T {
    (T::from_usize_lossy(k) - T::one()) * mu / T::c(2.0)
}

/// Bound on `|I|` for the independent case holding with probability
/// `1 - delta`; requires `k >= 32 ln(1/delta) / (p (1 - p))`.
pub fn confbased_bound<T: Scalar>(p: T, k: usize, delta: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(precondition(format!("p must lie in (0, 1), got {p}")));
    }
    if !(delta > T::zero() && delta <= T::one()) {
        return Err(precondition(format!("delta must lie in (0, 1], got {delta}")));
    }
    if k == 0 {
        return Err(precondition("bag size must be >= 1"));
    }
    let v = p * (T::one() - p);
    let l = -delta.ln();
    let kk = T::from_usize_lossy(k);
    let need = T::c(32.0) * l / v;
    if kk < need {
        return Err(precondition(format!("bag size {k} below validity threshold {need}")));
    }
    let b = (T::c(2.0) * v * l / kk).sqrt() + T::c(2.0) / (T::c(3.0) * kk) * l;
    Ok(T::c(2.0) * b * T::c(std::f64::consts::LN_2) / v)
}

/// `1 - 2 / (1 + e^eps)`, the worst-case advantage of any eps-label-DP mechanism.
pub fn rr_worstcase_adv<T: Scalar>(epsilon: T) -> Result<T> {
    if !(epsilon >= T::zero()) {
        return Err(precondition(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon.is_infinite() {
        return Ok(T::one());
    }
    Ok(T::one() - T::c(2.0) / (T::one() + epsilon.exp()))
}

/// Explicit per-example LLP bound at `n` for an example with
/// `mu_i = eta_i (1 - eta_i)`.
pub fn thm3_iadv_bound_at<T: Scalar>(p: T, mu: T, mu_i: T, n: usize) -> Result<T> {
    check_p(p)?;
    check_mu(mu)?;
    if !(mu_i >= T::zero() && mu_i <= T::c(0.25)) {
        return Err(precondition(format!("mu_i must lie in [0, 1/4], got {mu_i}")));
    }
    if !(mu > T::zero()) {
        return Err(precondition("mu must be > 0"));
    }
    if n == 0 {
        return Err(precondition("needs at least two bag members"));
    }
    let nn = T::from_usize_lossy(n);
    let e = T::c(std::f64::consts::E);
    let pi = T::c(std::f64::consts::PI);
    let inner = (T::one() - T::c(2.0) * mu).powf(nn)
        + pi / (T::c(4.0) * mu * nn).powf(T::c(1.5))
        + pi / (e * mu * nn * nn);
    let sum_bound = T::one() / nn + nn.powf(T::c(0.25)) * (T::c(2.0) * c_n(p, nn)).sqrt() * inner.sqrt();
    Ok(mu_i * sum_bound)
}

/// `(adv_bound, iadv_bound)` for bag size `k`; the second requires
/// `mu > 0` and `k >= (2 / mu) ln(1 / mu)`.
pub fn thm2_thm3_bound_shape<T: Scalar>(p: T, mu: T, mu_i: T, k: usize) -> Result<(T, T)> {
    let adv = lemma_a1_bound(p, mu, k)?;
    if !(mu > T::zero()) {
        return Err(precondition("mu must be > 0"));
    }
    let need = T::c(2.0) / mu * (T::one() / mu).ln();
    if T::from_usize_lossy(k) < need {
        return Err(precondition(format!("bag size {k} below validity threshold {need}")));
    }
    let iadv = thm3_iadv_bound_at(p, mu, mu_i, k - 1)?;
    Ok((adv, iadv))
}

/// Parameters a bound was evaluated at; unused ones are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BoundParams {
    pub p: Option<f64>,
    pub mu: Option<f64>,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
}

/// A bound next to the empirical or exact quantity it must dominate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub bound_value: f64,
    /// Tail probability for threshold-style bounds.
    pub bound_prob: Option<f64>,
    pub empirical_value: f64,
    pub empirical_stderr: f64,
    pub params: BoundParams,
    pub satisfied: bool,
}

impl BoundReport {
    /// `empirical <= bound + 3 stderr`.
    pub fn new(name: impl Into<String>, bound: f64, empirical: f64, stderr: f64, params: BoundParams) -> Self {
        Self {
            bound_name: name.into(),
            bound_value: bound,
            bound_prob: None,
            empirical_value: empirical,
            empirical_stderr: stderr,
            params,
            satisfied: empirical <= bound + 3.0 * stderr,
        }
    }

    /// Threshold-style report: the empirical exceedance frequency at
    /// `threshold` must not exceed `prob` (plus 3 stderr).
    pub fn tail(name: impl Into<String>, threshold: f64, prob: f64, frequency: f64, stderr: f64, params: BoundParams) -> Self {
        Self {
            bound_name: name.into(),
            bound_value: threshold,
            bound_prob: Some(prob),
            empirical_value: frequency,
            empirical_stderr: stderr,
            params,
            satisfied: frequency <= prob + 3.0 * stderr,
        }
    }
}

impl BoundReport {
    /// The same bound judged against a different empirical value.
    pub fn with_empirical(mut self, value: f64, stderr: f64) -> Self {
        self.empirical_value = value;
        self.empirical_stderr = stderr;
        let limit = self.bound_prob.unwrap_or(self.bound_value);
        self.satisfied = value <= limit + 3.0 * stderr;
        self
    }
}

/// Fraction of independent-case bags whose `|I|` exceeds the
/// [`confbased_bound`] at `(p, k, delta)`. With a constant prior every
/// member's posterior is `s / k`, so one bag sum per bag suffices.
pub fn confbased_exceedance(p: f64, k: usize, delta: f64, bags: usize, seed: u64) -> Result<(f64, AdvantageEstimate<f64>)> {
    let bound = confbased_bound(p, k, delta)?;
    if bags == 0 {
        return Err(AuditError::EmptyInput);
    }
    let binom = Binomial::new(k as u64, p).map_err(|e| invalid(e.to_string()))?;
    let prior = logit(p);
    let hits = (0..bags.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, domain::BOUNDS, b as u64);
            let n = BLOCK.min(bags - b * BLOCK);
            (0..n)
                .map(|_| {
                    let s = binom.sample(&mut rng) as f64;
                    ((logit(s / k as f64) - prior).abs() > bound) as u8 as f64
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>()
        .concat();
    Ok((bound, AdvantageEstimate::from_samples(&hits)))
}

/// MC estimate of the IADV of one example with prior `eta_i` whose
/// `k - 1` bag mates are drawn from `sampler`.
pub fn iadv_llp_mc(sampler: &EtaSampler, eta_i: f64, k: usize, trials: usize, seed: u64) -> Result<AdvantageEstimate<f64>> {
    if k == 0 || trials == 0 {
        return Err(invalid("bag size and trials must be >= 1"));
    }
    sampler.validate()?;
    let vals = (0..trials.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, domain::BOUNDS, b as u64);
            (0..BLOCK.min(trials - b * BLOCK))
                .map(|_| {
                    let mut etas = vec![eta_i];
                    etas.extend(sampler.sample_bag(k - 1, &mut rng));
                    additive_iadv_llp(&etas, 0).map(|a| a.value)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(AdvantageEstimate::from_samples(&vals))
}

/// Parameter grid for [`bounds_grid`]. LLP bounds use Beta priors with mean
/// `p` and `a + b = concentration`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsGridConfig {
    pub ps: Vec<f64>,
    pub ks: Vec<usize>,
    pub concentration: f64,
    pub deltas: Vec<f64>,
    /// Bag sizes for the tail bound on `|I|`, which only holds for large bags.
    pub conf_ks: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BoundsGridConfig {
    fn default() -> Self {
        Self {
            ps: vec![0.1, 0.5],
            ks: vec![16, 64, 256],
            concentration: 10.0,
            deltas: vec![0.1, 0.01],
            conf_ks: vec![4096],
            epsilons: vec![0.25, 1.0, 4.0],
            trials: 10_000,
            seed: 0,
        }
    }
}

/// Every bound on the grid next to its exact or MC counterpart. Grid points
/// outside a bound's validity range are skipped.
pub fn bounds_grid(cfg: &BoundsGridConfig) -> Result<Vec<BoundReport>> {
    if cfg.trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    if !(cfg.concentration > 0.0) {
        return Err(invalid("concentration must be > 0"));
    }
    let mut out = Vec::new();
    let mut row_seed = 0u64;
    let mut next_seed = || {
        row_seed += 1;
        derive(cfg.seed, row_seed)
    };
    for &p in &cfg.ps {
        if !(p > 0.0 && p < 1.0) {
            return Err(AuditError::ProbabilityOutOfRange { value: p });
        }
        let sampler = EtaSampler::Beta { a: p * cfg.concentration, b: (1.0 - p) * cfg.concentration };
        let mu = sampler.mu();
        for &k in &cfg.ks {
            let base = BoundParams { p: Some(p), k: Some(k), ..BoundParams::default() };
            out.push(BoundReport::new("thm1_upper", thm1_upper(p, k)?, thm1_exact(p, k)?, 0.0, base));
            if k < 2 {
                continue;
            }
            let with_mu = BoundParams { mu: Some(mu), ..base };
            let adv = additive_adv(&sampler, &PrivacyParams::llp(k), cfg.trials, next_seed())?;
            out.push(BoundReport::new("lemma_a1", lemma_a1_bound(p, mu, k)?, adv.value, adv.stderr, with_mu));

            let beta = default_beta(mu, k);
            let (threshold, prob) = truebound(mu, k, beta)?;
            let freq = hpadv_estimate(&sampler, k, threshold.min(1.0), cfg.trials, next_seed())?;
            let params = BoundParams { beta: Some(beta), ..with_mu };
            out.push(BoundReport::tail("truebound", threshold, prob, freq.value, freq.stderr, params));

            if let Ok((_, iadv_bound)) = thm2_thm3_bound_shape(p, mu, p * (1.0 - p), k) {
                let iadv = iadv_llp_mc(&sampler, p, k, cfg.trials, next_seed())?;
                out.push(BoundReport::new("thm3_iadv", iadv_bound, iadv.value, iadv.stderr, with_mu));
            }
        }
        for &k in &cfg.conf_ks {
            for &delta in &cfg.deltas {
                if let Ok((bound, freq)) = confbased_exceedance(p, k, delta, cfg.trials, next_seed()) {
                    let params = BoundParams { p: Some(p), k: Some(k), delta: Some(delta), ..BoundParams::default() };
                    out.push(BoundReport::tail("confbased", bound, delta, freq.value, freq.stderr, params));
                }
            }
        }
    }
    for &eps in &cfg.epsilons {
        let params = BoundParams { epsilon: Some(eps), ..BoundParams::default() };
        let worst = additive_iadv_rr(0.5, eps)?.value;
        out.push(BoundReport::new("rr_worstcase", rr_worstcase_adv(eps)?, worst, 0.0, params));
    }
    Ok(out)
}
