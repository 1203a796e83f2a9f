//! Exact posteriors `P(y_i = 1 | X, output)` of the informed attacker.
//!
//! Bagged posteriors condition only on the bag that contains example `i`.
//! Every posterior is computed as `N / (N + M)` where `N = P(y_i = 1, out)`
//! and `M = P(y_i = 0, out)`, both built from the leave-one-out PMF, so the
//! homogeneous outcomes give exactly 0 or 1 and nothing is divided by a
//! marginal that was computed separately.

use crate::error::{AuditError, Result};
use crate::mechanisms::{grid_index, PrivacyParams};
use crate::pbin::{all_leave_one_out, pbin_leave_one_out, pbin_pmf};
use crate::scalar::{is_probability, Scalar};

/// One audited example: its prior, the attacker's posterior, and what was observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorRecord {
    pub prior: f64,
    pub posterior: f64,
    /// `ln N - ln M`, exact even where `posterior` rounds to 1.
    pub log_odds: f64,
    pub mechanism: PrivacyParams,
    /// Noisy bit, bag proportion, or noisy proportion, depending on the mechanism.
    pub outcome: f64,
    pub run: usize,
    /// Index of the example in its dataset.
    pub index: usize,
}

fn check_prob<T: Scalar>(x: T) -> Result<()> {
    if is_probability(x) {
        Ok(())
    } else {
        Err(AuditError::ProbabilityOutOfRange { value: x.as_f64() })
    }
}

fn check_eps<T: Scalar>(epsilon: T) -> Result<()> {
    if epsilon > T::zero() {
        Ok(())
    } else {
        Err(AuditError::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")))
    }
}

/// `1 / (1 + e^eps)`.
pub fn flip_prob<T: Scalar>(epsilon: T) -> T {
    if epsilon.is_infinite() {
        T::zero()
    } else {
        T::one() / (T::one() + epsilon.exp())
    }
}

/// Unnormalized posterior: `n = P(y_i = 1, out)` and `m = P(y_i = 0, out)`
/// up to a common factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorOdds<T> {
    pub n: T,
    pub m: T,
}

impl<T: Scalar> PosteriorOdds<T> {
    pub fn posterior(&self) -> T {
        self.n / (self.n + self.m)
    }

    pub fn log_odds(&self) -> T {
        self.n.ln() - self.m.ln()
    }
}

fn odds<T: Scalar>(n: T, m: T, sum: usize, k: usize) -> Result<PosteriorOdds<T>> {
    if n + m > T::zero() {
        Ok(PosteriorOdds { n, m })
    } else {
        Err(AuditError::ImpossibleOutcome { sum, k })
    }
}

fn ratio<T: Scalar>(n: T, m: T, sum: usize, k: usize) -> Result<T> {
    odds(n, m, sum, k).map(|o| o.posterior())
}

/// Posterior after seeing one randomized-response bit.
pub fn rr_posterior<T: Scalar>(eta: T, observed_bit: u8, epsilon: T) -> Result<T> {
    rr_odds(eta, observed_bit, epsilon).map(|o| o.posterior())
}

pub fn rr_odds<T: Scalar>(eta: T, observed_bit: u8, epsilon: T) -> Result<PosteriorOdds<T>> {
    check_prob(eta)?;
    check_eps(epsilon)?;
    if observed_bit > 1 {
        return Err(AuditError::NonBinaryLabel { index: 0, value: observed_bit });
    }
    let pi = flip_prob(epsilon);
    let keep = T::one() - pi;
    let (n, m) = if observed_bit == 1 {
        (keep * eta, pi * (T::one() - eta))
    } else {
        (pi * eta, keep * (T::one() - eta))
    };
    odds(n, m, observed_bit as usize, 1)
}

fn loo_at<T: Scalar>(loo: &[T], s: isize) -> T {
    if s < 0 {
        T::zero()
    } else {
        loo.get(s as usize).copied().unwrap_or_else(T::zero)
    }
}

/// `(P(y_i = 1, sum = s), P(y_i = 0, sum = s))` from the leave-one-out PMF.
fn joint<T: Scalar>(eta: T, loo: &[T], s: usize) -> (T, T) {
    let s = s as isize;
    (eta * loo_at(loo, s - 1), (T::one() - eta) * loo_at(loo, s))
}

fn check_index(i: usize, k: usize) -> Result<()> {
    if i < k {
        Ok(())
    } else {
        Err(AuditError::IndexOutOfRange { index: i, len: k })
    }
}

/// `P(y_i = 1 | bag sum = s)`.
pub fn llp_posterior<T: Scalar>(etas: &[T], i: usize, s: usize) -> Result<T> {
    let k = etas.len();
    check_index(i, k)?;
    if s > k {
        return Err(AuditError::ImpossibleOutcome { sum: s, k });
    }
    let loo = pbin_leave_one_out(etas, i)?;
    let (n, m) = joint(etas[i], loo.pmf(), s);
    ratio(n, m, s, k)
}

/// Shared core of the noisy-channel posteriors: `sum_s w_s N_s / sum_s w_s (N_s + M_s)`
/// with the weights given in log space.
fn log_weighted<T: Scalar>(eta: T, loo: &[T], log_w: &[T]) -> Result<PosteriorOdds<T>> {
    let k = loo.len();
    let top = log_w
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    if top == T::neg_infinity() {
        return Err(AuditError::ImpossibleOutcome { sum: 0, k });
    }
    let (mut a, mut b) = (T::zero(), T::zero());
    for (s, &lw) in log_w.iter().enumerate() {
        if lw == T::neg_infinity() {
            continue;
        }
        let w = (lw - top).exp();
        let (n, m) = joint(eta, loo, s);
        a = a + w * n;
        b = b + w * m;
    }
    odds(a, b, 0, k)
}

fn laplace_log_weights<T: Scalar>(k: usize, z: T, epsilon: T) -> Vec<T> {
    let kk = T::from_usize_lossy(k);
    (0..=k)
        .map(|s| -(z * kk - T::from_usize_lossy(s)).abs() * epsilon)
        .collect()
}

/// Posterior after seeing the bag proportion plus `Laplace(1 / (k eps))` noise.
///
/// With `eps = inf` the observation must lie on the grid and the noiseless
/// posterior is returned.
pub fn llp_lap_posterior<T: Scalar>(etas: &[T], i: usize, z: T, epsilon: T) -> Result<T> {
    let k = etas.len();
    check_index(i, k)?;
    check_eps(epsilon)?;
    if epsilon.is_infinite() {
        let s = grid_index(z.as_f64(), k)?;
        return llp_posterior(etas, i, s);
    }
    let loo = pbin_leave_one_out(etas, i)?;
    log_weighted(etas[i], loo.pmf(), &laplace_log_weights(k, z, epsilon)).map(|o| o.posterior())
}

fn check_grid_args(s: usize, j: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(AuditError::InvalidParameter("bag size must be >= 1".into()));
    }
    if s > k {
        return Err(AuditError::ImpossibleOutcome { sum: s, k });
    }
    if j > k {
        return Err(AuditError::OffGrid { value: j as f64 / k as f64, k });
    }
    Ok(())
}

/// `P(clip((s + W) / k) = j / k)` for the two-sided geometric `W`.
pub fn geom_clip_likelihood_at<T: Scalar>(s: usize, j: usize, k: usize, epsilon: T) -> Result<T> {
    check_grid_args(s, j, k)?;
    check_eps(epsilon)?;
    let q = (-epsilon).exp();
    let one = T::one();
    let pow = |d: usize| -> T {
        if d == 0 {
            one
        } else {
            q.powi(d as i32)
        }
    };
    Ok(if j == 0 {
        if s == 0 {
            one / (one + q)
        } else {
            pow(s) / (one + q)
        }
    } else if j == k {
        let u = k - s;
        if u == 0 {
            one / (one + q)
        } else {
            pow(u) / (one + q)
        }
    } else {
        (one - q) / (one + q) * pow(j.abs_diff(s))
    })
}

/// Grid-valued wrapper around [`geom_clip_likelihood_at`].
pub fn geom_clip_likelihood<T: Scalar>(s: usize, z: T, k: usize, epsilon: T) -> Result<T> {
    let j = grid_index(z.as_f64(), k)?;
    geom_clip_likelihood_at(s, j, k, epsilon)
}

/// `ln` of [`geom_clip_likelihood_at`], finite wherever the likelihood is
/// positive even when the likelihood itself would underflow.
pub fn geom_clip_log_likelihood_at<T: Scalar>(s: usize, j: usize, k: usize, epsilon: T) -> Result<T> {
    check_grid_args(s, j, k)?;
    check_eps(epsilon)?;
    let d = if j == 0 {
        s
    } else if j == k {
        k - s
    } else {
        j.abs_diff(s)
    };
    if epsilon.is_infinite() {
        return Ok(if d == 0 { T::zero() } else { T::neg_infinity() });
    }
    let q = (-epsilon).exp();
    let head = if j == 0 || j == k {
        -q.ln_1p()
    } else {
        (-(-epsilon).exp_m1()).ln() - q.ln_1p()
    };
    Ok(head - T::from_usize_lossy(d) * epsilon)
}

fn geom_log_weights<T: Scalar>(j: usize, k: usize, epsilon: T) -> Result<Vec<T>> {
    (0..=k)
        .map(|s| geom_clip_log_likelihood_at(s, j, k, epsilon))
        .collect()
}

/// Posterior after seeing the clipped geometric proportion `z`.
pub fn llp_geom_posterior<T: Scalar>(etas: &[T], i: usize, z: T, epsilon: T) -> Result<T> {
    let k = etas.len();
    check_index(i, k)?;
    let j = grid_index(z.as_f64(), k)?;
    let loo = pbin_leave_one_out(etas, i)?;
    log_weighted(etas[i], loo.pmf(), &geom_log_weights(j, k, epsilon)?).map(|o| o.posterior())
}

/// What the attacker observes about one bag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BagOutcome<T> {
    /// Exact label sum.
    Sum(usize),
    /// Noisy proportion with Laplace noise at the given epsilon.
    Laplace { z: T, epsilon: T },
    /// Clipped geometric proportion, as a grid index `j` (value `j / k`).
    Grid { j: usize, epsilon: T },
}

/// One bag's priors with the full and every leave-one-out PMF precomputed,
/// for computing all `k` posteriors of the bag at once.
#[derive(Clone, Debug)]
pub struct BagModel<T> {
    etas: Vec<T>,
    full: Vec<T>,
    loo: Vec<Vec<T>>,
}

impl<T: Scalar> BagModel<T> {
    pub fn new(etas: &[T]) -> Result<Self> {
        let full = pbin_pmf(etas)?.into_pmf();
        let loo = all_leave_one_out(etas)?;
        Ok(Self { etas: etas.to_vec(), full, loo })
    }

    pub fn k(&self) -> usize {
        self.etas.len()
    }

    pub fn etas(&self) -> &[T] {
        &self.etas
    }

    /// PMF of the bag sum.
    pub fn full(&self) -> &[T] {
        &self.full
    }

    /// PMF of the bag sum without example `i`.
    pub fn loo(&self, i: usize) -> &[T] {
        &self.loo[i]
    }

    /// `(P(y_i = 1, sum = s), P(y_i = 0, sum = s))`.
    pub fn joint(&self, i: usize, s: usize) -> (T, T) {
        joint(self.etas[i], &self.loo[i], s)
    }

    pub fn posterior(&self, i: usize, outcome: BagOutcome<T>) -> Result<T> {
        self.odds(i, outcome).map(|o| o.posterior())
    }

    pub fn odds(&self, i: usize, outcome: BagOutcome<T>) -> Result<PosteriorOdds<T>> {
        check_index(i, self.k())?;
        let k = self.k();
        match outcome {
            BagOutcome::Sum(s) => {
                if s > k {
                    return Err(AuditError::ImpossibleOutcome { sum: s, k });
                }
                let (n, m) = self.joint(i, s);
                odds(n, m, s, k)
            }
            BagOutcome::Laplace { z, epsilon } => {
                check_eps(epsilon)?;
                if epsilon.is_infinite() {
                    let s = grid_index(z.as_f64(), k)?;
                    return self.odds(i, BagOutcome::Sum(s));
                }
                log_weighted(self.etas[i], &self.loo[i], &laplace_log_weights(k, z, epsilon))
            }
            BagOutcome::Grid { j, epsilon } => {
                log_weighted(self.etas[i], &self.loo[i], &geom_log_weights(j, k, epsilon)?)
            }
        }
    }

    /// Posteriors of every member of the bag.
    pub fn posteriors(&self, outcome: BagOutcome<T>) -> Result<Vec<T>> {
        (0..self.k()).map(|i| self.posterior(i, outcome)).collect()
    }
}
