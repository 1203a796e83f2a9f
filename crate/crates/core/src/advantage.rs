//! Reconstruction-advantage measures.
//!
//! The additive gap of the optimal attacker on example `i` is
//! `min{eta_i, 1 - eta_i} - E_out[min{post, 1 - post}]`. Since
//! `P(out) * min{post, 1 - post} = min{N(out), M(out)}` with `N`, `M` the joint
//! masses of `(y_i = 1, out)` and `(y_i = 0, out)`, every exact gap here is a
//! sum of minima of joint masses and no posterior is ever divided out.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

use crate::data::EtaDataset;
use crate::error::{invalid, AuditError, Result};
use crate::mechanisms::{grid_index, privatize, sample_laplace, MechanismKind, PrivOutput, PrivacyParams};
use crate::pbin::pbin_leave_one_out;
use crate::posterior::{flip_prob, rr_odds, rr_posterior, BagModel, BagOutcome, PosteriorOdds, PosteriorRecord};
use crate::rng::{domain, substream};
use crate::scalar::{logit, min_err, Scalar};

/// An advantage value, exact or estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvantageEstimate<T> {
    pub value: T,
    /// Zero for exact computations.
    pub stderr: T,
    pub trials: usize,
    pub exact: bool,
}

impl<T: Scalar> AdvantageEstimate<T> {
    pub fn exact(value: T) -> Self {
        Self { value, stderr: T::zero(), trials: 1, exact: true }
    }
}

impl AdvantageEstimate<f64> {
    /// Mean and standard error of independent per-trial values.
    pub fn from_samples(values: &[f64]) -> Self {
        let (value, stderr) = mean_stderr(values);
        Self { value, stderr, trials: values.len(), exact: false }
    }
}

/// One audited example in terms of the advantage measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvantageSample {
    pub prior: f64,
    pub posterior: f64,
    /// `min{prior, 1 - prior} - min{posterior, 1 - posterior}` for this realization.
    pub additive_gap: f64,
    /// `logit(posterior) - logit(prior)`, possibly infinite.
    pub mult_adv: f64,
}

/// Sample mean and its standard error (zero for fewer than two values).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn sum_min<T: Scalar>(n: &[T], m: &[T]) -> T {
    n.iter().zip(m).map(|(&a, &b)| a.min(b)).sum()
}

/// Joint masses `a_s = eta * loo[s-1]` and `b_s = (1 - eta) * loo[s]` for `s = 0..=k`.
fn joint_vectors<T: Scalar>(eta: T, loo: &[T]) -> (Vec<T>, Vec<T>) {
    let k = loo.len();
    let a = (0..=k)
        .map(|s| if s == 0 { T::zero() } else { eta * loo[s - 1] })
        .collect();
    let b = (0..=k)
        .map(|s| if s == k { T::zero() } else { (T::one() - eta) * loo[s] })
        .collect();
    (a, b)
}

fn llp_gap_from_loo<T: Scalar>(eta: T, loo: &[T]) -> T {
    let (a, b) = joint_vectors(eta, loo);
    min_err(eta) - sum_min(&a, &b)
}

/// Exact additive IADV of example `i` when the bag's label sum is released.
pub fn additive_iadv_llp<T: Scalar>(etas: &[T], i: usize) -> Result<AdvantageEstimate<T>> {
    let loo = pbin_leave_one_out(etas, i)?;
    Ok(AdvantageEstimate::exact(llp_gap_from_loo(etas[i], loo.pmf())))
}

/// Exact LLP gaps of every member of a bag.
pub fn bag_gaps_llp<T: Scalar>(model: &BagModel<T>) -> Vec<T> {
    (0..model.k())
        .map(|i| llp_gap_from_loo(model.etas()[i], model.loo(i)))
        .collect()
}

fn check_rr_args<T: Scalar>(eta: T, epsilon: T) -> Result<()> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(AuditError::ProbabilityOutOfRange { value: eta.as_f64() });
    }
    if !(epsilon > T::zero()) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(())
}

/// Closed-form RR gap `(min{eta, 1 - eta} - pi) * 1{eta in [pi, 1 - pi]}`.
pub fn additive_iadv_rr<T: Scalar>(eta: T, epsilon: T) -> Result<AdvantageEstimate<T>> {
    check_rr_args(eta, epsilon)?;
    let pi = flip_prob(epsilon);
    let value = if eta >= pi && eta <= T::one() - pi {
        min_err(eta) - pi
    } else {
        T::zero()
    };
    Ok(AdvantageEstimate::exact(value))
}

/// RR gap from the generic optimal-attacker formula, going through
/// [`rr_posterior`] for both output bits.
pub fn rr_gap_via_posterior<T: Scalar>(eta: T, epsilon: T) -> Result<T> {
    check_rr_args(eta, epsilon)?;
    let pi = flip_prob(epsilon);
    let one = T::one();
    let p1 = (one - pi) * eta + pi * (one - eta);
    let mut expected = T::zero();
    for (bit, p) in [(1u8, p1), (0u8, one - p1)] {
        if p > T::zero() {
            expected = expected + p * min_err(rr_posterior(eta, bit, epsilon)?);
        }
    }
    Ok(min_err(eta) - expected)
}

/// `out[j] = sum_s P(clip = j | s) * v[s]` for the clipped geometric channel,
/// in O(k) with one forward and one backward exponential filter.
fn geom_channel<T: Scalar>(v: &[T], epsilon: T) -> Vec<T> {
    let k = v.len() - 1;
    let one = T::one();
    let q = (-epsilon).exp();
    let mut fwd = vec![T::zero(); k + 1];
    let mut bwd = vec![T::zero(); k + 1];
    let mut acc = T::zero();
    for s in 0..=k {
        acc = v[s] + q * acc;
        fwd[s] = acc;
    }
    acc = T::zero();
    for s in (0..=k).rev() {
        acc = v[s] + q * acc;
        bwd[s] = acc;
    }
    let edge = one / (one + q);
    let mid = (one - q) / (one + q);
    (0..=k)
        .map(|j| {
            if j == 0 {
                bwd[0] * edge
            } else if j == k {
                fwd[k] * edge
            } else {
                mid * (fwd[j] + bwd[j] - v[j])
            }
        })
        .collect()
}

fn geom_gap_from_loo<T: Scalar>(eta: T, loo: &[T], epsilon: T) -> T {
    let (a, b) = joint_vectors(eta, loo);
    min_err(eta) - sum_min(&geom_channel(&a, epsilon), &geom_channel(&b, epsilon))
}

/// Exact additive IADV of example `i` under the clipped geometric mechanism.
pub fn additive_iadv_geom<T: Scalar>(etas: &[T], i: usize, epsilon: T) -> Result<AdvantageEstimate<T>> {
    if !(epsilon > T::zero()) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let loo = pbin_leave_one_out(etas, i)?;
    Ok(AdvantageEstimate::exact(geom_gap_from_loo(etas[i], loo.pmf(), epsilon)))
}

/// Exact geometric-channel gaps of every member of a bag.
pub fn bag_gaps_geom<T: Scalar>(model: &BagModel<T>, epsilon: T) -> Vec<T> {
    (0..model.k())
        .map(|i| geom_gap_from_loo(model.etas()[i], model.loo(i), epsilon))
        .collect()
}

/// Laplace-channel gap of example `i` by numerical integration over the
/// noisy proportion.
///
/// Outside `[0, 1]` every density term decays at the same exponential rate,
/// so the two tails integrate in closed form; each grid cell in between is
/// integrated with composite Simpson on `panels` panels.
pub fn additive_iadv_lap_quadrature(etas: &[f64], i: usize, epsilon: f64, panels: usize) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    let k = etas.len();
    let loo = pbin_leave_one_out(etas, i)?;
    let (a, b) = joint_vectors(etas[i], loo.pmf());
    let rate = k as f64 * epsilon;
    let kernel_min = |z: f64| -> f64 {
        let (mut n, mut m) = (0.0, 0.0);
        for s in 0..=k {
            let g = 0.5 * rate * (-rate * (z - s as f64 / k as f64).abs()).exp();
            n += a[s] * g;
            m += b[s] * g;
        }
        n.min(m)
    };
    let panels = panels.max(2) & !1;
    let mut total = (kernel_min(0.0) + kernel_min(1.0)) / rate;
    for cell in 0..k {
        let lo = cell as f64 / k as f64;
        let h = 1.0 / (k as f64 * panels as f64);
        let mut acc = kernel_min(lo) + kernel_min(lo + panels as f64 * h);
        for p in 1..panels {
            let w = if p % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * kernel_min(lo + p as f64 * h);
        }
        total += acc * h / 3.0;
    }
    Ok(min_err(etas[i]) - total)
}

pub(crate) const BLOCK: usize = 1024;

/// Per-trial values computed in fixed-size blocks, each block on its own
/// substream, returned in trial order.
fn blocked_trials<F>(trials: usize, seed: u64, dom: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut crate::rng::AuditRng) -> f64 + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|bi| {
            let mut rng = substream(seed, dom, bi as u64);
            let len = BLOCK.min(trials - bi * BLOCK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

fn sample_sum<R: Rng + ?Sized>(etas: &[f64], rng: &mut R) -> usize {
    etas.iter().map(|&e| (rng.random::<f64>() < e) as usize).sum()
}

/// Monte-Carlo Laplace-channel gap of example `i`: labels and noise are
/// sampled, and the attacker's expected error is averaged.
pub fn additive_iadv_lap(etas: &[f64], i: usize, epsilon: f64, trials: usize, seed: u64) -> Result<AdvantageEstimate<f64>> {
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let model = BagModel::new(etas)?;
    let k = etas.len();
    let scale = if epsilon.is_infinite() { 0.0 } else { 1.0 / (k as f64 * epsilon) };
    let base = min_err(etas[i]);
    let vals = blocked_trials(trials, seed, domain::ADVANTAGE, |rng| {
        let s = sample_sum(etas, rng);
        let z = s as f64 / k as f64 + sample_laplace(scale, rng);
        let post = model
            .posterior(i, BagOutcome::Laplace { z, epsilon })
            .expect("sampled outcome has positive probability");
        base - min_err(post)
    });
    Ok(AdvantageEstimate::from_samples(&vals))
}

/// Distribution of priors `eta(x)` for `x ~ D_X`.
#[derive(Clone, Debug, PartialEq)]
pub enum EtaSampler {
    Constant(f64),
    Beta { a: f64, b: f64 },
    /// Resample uniformly from a fixed list of priors.
    Empirical(Vec<f64>),
}

impl EtaSampler {
    pub fn uniform() -> Self {
        EtaSampler::Beta { a: 1.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EtaSampler::Constant(p) if !(0.0..=1.0).contains(p) => {
                Err(AuditError::ProbabilityOutOfRange { value: *p })
            }
            EtaSampler::Beta { a, b } if !(*a > 0.0 && *b > 0.0) => {
                Err(invalid(format!("beta parameters must be > 0, got ({a}, {b})")))
            }
            EtaSampler::Empirical(v) if v.is_empty() => Err(AuditError::EmptyInput),
            EtaSampler::Empirical(v) => match v.iter().find(|e| !(0.0..=1.0).contains(*e)) {
                Some(&value) => Err(AuditError::ProbabilityOutOfRange { value }),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EtaSampler::Constant(p) => *p,
            EtaSampler::Beta { a, b } => Beta::new(*a, *b).expect("validated").sample(rng),
            EtaSampler::Empirical(v) => v[rng.random_range(0..v.len())],
        }
    }

    pub fn sample_bag<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        (0..k).map(|_| self.sample(rng)).collect()
    }

    /// `p = E[eta]`.
    pub fn mean(&self) -> f64 {
        match self {
            EtaSampler::Constant(p) => *p,
            EtaSampler::Beta { a, b } => a / (a + b),
            EtaSampler::Empirical(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }

    /// `mu = E[eta (1 - eta)]`.
    pub fn mu(&self) -> f64 {
        match self {
            EtaSampler::Constant(p) => p * (1.0 - p),
            EtaSampler::Beta { a, b } => a * b / ((a + b) * (a + b + 1.0)),
            EtaSampler::Empirical(v) => v.iter().map(|e| e * (1.0 - e)).sum::<f64>() / v.len() as f64,
        }
    }
}

/// Average gap over the members of one bag with the given priors, for any
/// mechanism. Exact except for the Laplace channel, where one outcome is
/// sampled from `rng`.
pub fn bag_mean_gap<R: Rng + ?Sized>(etas: &[f64], params: &PrivacyParams, rng: &mut R) -> Result<f64> {
    let k = etas.len() as f64;
    let gaps: Vec<f64> = match params.mechanism {
        MechanismKind::Null => return Ok(0.0),
        MechanismKind::Rr => etas
            .iter()
            .map(|&e| additive_iadv_rr(e, params.epsilon).map(|a| a.value))
            .collect::<Result<_>>()?,
        MechanismKind::Llp => bag_gaps_llp(&BagModel::new(etas)?),
        MechanismKind::LlpGeom => {
            if params.epsilon.is_infinite() {
                bag_gaps_llp(&BagModel::new(etas)?)
            } else {
                bag_gaps_geom(&BagModel::new(etas)?, params.epsilon)
            }
        }
        MechanismKind::LlpLap => {
            let model = BagModel::new(etas)?;
            let scale = if params.epsilon.is_infinite() { 0.0 } else { 1.0 / (k * params.epsilon) };
            let s = sample_sum(etas, rng);
            let z = s as f64 / k + sample_laplace(scale, rng);
            let post = model.posteriors(BagOutcome::Laplace { z, epsilon: params.epsilon })?;
            etas.iter().zip(post).map(|(&e, p)| min_err(e) - min_err(p)).collect()
        }
    };
    Ok(gaps.iter().sum::<f64>() / k)
}

/// ADV: average over `trials` independently drawn bags of each bag's mean
/// per-example gap; bags have `params.effective_bag_size()` members.
pub fn additive_adv(sampler: &EtaSampler, params: &PrivacyParams, trials: usize, seed: u64) -> Result<AdvantageEstimate<f64>> {
    let vals = bag_mean_gaps(sampler, params, trials, seed)?;
    Ok(AdvantageEstimate::from_samples(&vals))
}

/// Per-bag mean gaps behind [`additive_adv`] and [`hpadv_estimate`], in trial order.
pub fn bag_mean_gaps(sampler: &EtaSampler, params: &PrivacyParams, trials: usize, seed: u64) -> Result<Vec<f64>> {
    sampler.validate()?;
    params.validate()?;
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    let k = params.effective_bag_size();
    let blocks = trials.div_ceil(BLOCK);
    let parts = (0..blocks)
        .into_par_iter()
        .map(|bi| {
            let mut rng = substream(seed, domain::ADVANTAGE, bi as u64);
            let len = BLOCK.min(trials - bi * BLOCK);
            (0..len)
                .map(|_| {
                    let etas = sampler.sample_bag(k, &mut rng);
                    bag_mean_gap(&etas, params, &mut rng)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Fraction of sampled LLP bags whose mean gap exceeds `theta`.
pub fn hpadv_estimate(sampler: &EtaSampler, k: usize, theta: f64, trials: usize, seed: u64) -> Result<AdvantageEstimate<f64>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    let gaps = bag_mean_gaps(sampler, &PrivacyParams::llp(k), trials, seed)?;
    Ok(tail_fraction(&gaps, theta))
}

/// Fraction of values strictly above `theta`, with its binomial standard error.
pub fn tail_fraction(values: &[f64], theta: f64) -> AdvantageEstimate<f64> {
    let hits: Vec<f64> = values.iter().map(|&g| (g > theta) as u8 as f64).collect();
    AdvantageEstimate::from_samples(&hits)
}

/// `logit(posterior) - logit(prior)`, infinite when the posterior is certain.
pub fn mult_adv(prior: f64, posterior: f64) -> Result<f64> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(AuditError::DegeneratePrior { value: prior });
    }
    if !(0.0..=1.0).contains(&posterior) {
        return Err(AuditError::ProbabilityOutOfRange { value: posterior });
    }
    Ok(logit(posterior) - logit(prior))
}

fn bag_outcome(params: &PrivacyParams, value: f64) -> Result<BagOutcome<f64>> {
    let k = params.bag_size;
    Ok(match params.mechanism {
        MechanismKind::Llp => BagOutcome::Sum(grid_index(value, k)?),
        MechanismKind::LlpLap => BagOutcome::Laplace { z: value, epsilon: params.epsilon },
        MechanismKind::LlpGeom => BagOutcome::Grid { j: grid_index(value, k)?, epsilon: params.epsilon },
        _ => unreachable!("per-example mechanism"),
    })
}

/// Posterior records for one privatization of labels drawn from `etas`.
pub fn audit_run(etas: &[f64], params: &PrivacyParams, seed: u64, run: usize) -> Result<Vec<PosteriorRecord>> {
    params.validate()?;
    let mut label_rng = substream(seed, domain::LABELS, run as u64);
    let labels: Vec<u8> = etas.iter().map(|&e| (label_rng.random::<f64>() < e) as u8).collect();
    let mut mech_rng = substream(seed, domain::MECHANISM, run as u64);
    let (out, bags) = privatize(params, &labels, &mut mech_rng)?;
    let record = |index: usize, odds: PosteriorOdds<f64>, outcome: f64| PosteriorRecord {
        prior: etas[index],
        posterior: odds.posterior(),
        log_odds: odds.log_odds(),
        mechanism: *params,
        outcome,
        run,
        index,
    };
    match (out, bags) {
        (PrivOutput::Null, _) => Ok((0..etas.len())
            .map(|i| PosteriorRecord {
                posterior: etas[i],
                log_odds: logit(etas[i]),
                ..record(i, PosteriorOdds { n: etas[i], m: 1.0 - etas[i] }, f64::NAN)
            })
            .collect()),
        (PrivOutput::NoisyLabels(bits), _) => bits
            .iter()
            .enumerate()
            .map(|(i, &b)| Ok(record(i, rr_odds(etas[i], b, params.epsilon)?, b as f64)))
            .collect(),
        (PrivOutput::Proportions(z) | PrivOutput::RealProportions(z) | PrivOutput::GridProportions(z), Some(bags)) => {
            let per_bag = bags
                .bags
                .par_iter()
                .zip(z.par_iter())
                .map(|(bag, &value)| {
                    let bag_etas: Vec<f64> = bag.iter().map(|&j| etas[j]).collect();
                    let model = BagModel::new(&bag_etas)?;
                    let outcome = bag_outcome(params, value)?;
                    bag.iter()
                        .enumerate()
                        .map(|(i, &j)| Ok(record(j, model.odds(i, outcome)?, value)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(per_bag.concat())
        }
        _ => Err(invalid("bagged output without a bag assignment")),
    }
}

/// Prior/posterior pairs over `runs` independent label draws and privatizations.
pub fn scatter_samples(dataset: &EtaDataset, params: &PrivacyParams, runs: usize, seed: u64) -> Result<Vec<PosteriorRecord>> {
    let etas = dataset.etas.as_deref().ok_or(AuditError::MissingEta)?;
    let parts = (0..runs)
        .into_par_iter()
        .map(|r| audit_run(etas, params, seed, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Converts records into advantage samples, dropping degenerate priors.
/// Returns the samples and the number of records dropped.
pub fn advantage_samples(records: &[PosteriorRecord]) -> (Vec<AdvantageSample>, usize) {
    let mut degenerate = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !(r.prior > 0.0 && r.prior < 1.0) {
            degenerate += 1;
            continue;
        }
        // from the log-odds rather than the posterior, which rounds to 1 well before the odds overflow
        out.push(AdvantageSample {
            prior: r.prior,
            posterior: r.posterior,
            additive_gap: min_err(r.prior) - min_err(r.posterior),
            mult_adv: r.log_odds - logit(r.prior),
        });
    }
    (out, degenerate)
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid("NaN sample"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Step points `(value, fraction <= value)` at each distinct value, in
/// increasing order; `+inf` samples, if any, form the last point.
pub fn empirical_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    let v = sorted(samples)?;
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (idx, &x) in v.iter().enumerate() {
        let frac = (idx + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Order statistic `ceil(q n)` (1-based), with `+inf` sorted last.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("quantile must lie in (0, 1), got {q}")));
    }
    let v = sorted(samples)?;
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}
