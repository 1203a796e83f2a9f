//! Label privatization mechanisms (PETs).
//!
//! Features are always released in the clear; only the labels pass through a
//! mechanism. All randomness comes from an explicit generator so that a given
//! substream reproduces the same output bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, AuditError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Null,
    Rr,
    Llp,
    LlpLap,
    LlpGeom,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Null => "null",
            MechanismKind::Rr => "rr",
            MechanismKind::Llp => "llp",
            MechanismKind::LlpLap => "llp-lap",
            MechanismKind::LlpGeom => "llp-geom",
        }
    }

    pub fn uses_epsilon(self) -> bool {
        matches!(self, MechanismKind::Rr | MechanismKind::LlpLap | MechanismKind::LlpGeom)
    }

    pub fn uses_bags(self) -> bool {
        matches!(self, MechanismKind::Llp | MechanismKind::LlpLap | MechanismKind::LlpGeom)
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "null" => MechanismKind::Null,
            "rr" => MechanismKind::Rr,
            "llp" => MechanismKind::Llp,
            "llp-lap" => MechanismKind::LlpLap,
            "llp-geom" => MechanismKind::LlpGeom,
            other => return Err(invalid(format!("unknown mechanism `{other}`"))),
        })
    }
}

/// A mechanism together with its privacy parameters.
///
/// `epsilon` is ignored by `Null` and `Llp`; `bag_size` is ignored by `Null`
/// and `Rr`. `epsilon` may be `+inf` (no noise).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub bag_size: usize,
}

impl PrivacyParams {
    pub fn null() -> Self {
        Self { mechanism: MechanismKind::Null, epsilon: f64::INFINITY, bag_size: 1 }
    }

    pub fn rr(epsilon: f64) -> Self {
        Self { mechanism: MechanismKind::Rr, epsilon, bag_size: 1 }
    }

    pub fn llp(bag_size: usize) -> Self {
        Self { mechanism: MechanismKind::Llp, epsilon: f64::INFINITY, bag_size }
    }

    pub fn llp_lap(bag_size: usize, epsilon: f64) -> Self {
        Self { mechanism: MechanismKind::LlpLap, epsilon, bag_size }
    }

    pub fn llp_geom(bag_size: usize, epsilon: f64) -> Self {
        Self { mechanism: MechanismKind::LlpGeom, epsilon, bag_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mechanism.uses_epsilon() && !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.mechanism.uses_bags() && self.bag_size == 0 {
            return Err(invalid("bag size must be >= 1"));
        }
        Ok(())
    }

    /// Bag size seen by the attacker: 1 for per-example mechanisms.
    pub fn effective_bag_size(&self) -> usize {
        if self.mechanism.uses_bags() {
            self.bag_size
        } else {
            1
        }
    }
}

/// Random partition of `{0, .., m-1}` into equal bags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagAssignment {
    pub bags: Vec<Vec<usize>>,
    pub k: usize,
    /// Trailing examples of the permutation that did not fill a bag.
    pub dropped: usize,
}

impl BagAssignment {
    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn check_against(&self, m: usize) -> Result<()> {
        for bag in &self.bags {
            if bag.len() != self.k {
                return Err(AuditError::BagMismatch(format!(
                    "bag of size {} but k = {}",
                    bag.len(),
                    self.k
                )));
            }
            if let Some(&j) = bag.iter().find(|&&j| j >= m) {
                return Err(AuditError::BagMismatch(format!("index {j} >= {m}")));
            }
        }
        Ok(())
    }
}

/// What a mechanism releases about the labels.
#[derive(Clone, Debug, PartialEq)]
pub enum PrivOutput {
    Null,
    NoisyLabels(Vec<u8>),
    /// Exact bag proportions, on the grid `{0, 1/k, .., 1}`.
    Proportions(Vec<f64>),
    /// Proportions plus unclipped real-valued noise.
    RealProportions(Vec<f64>),
    /// Clipped noisy proportions, on the grid `{0, 1/k, .., 1}`.
    GridProportions(Vec<f64>),
}

/// RR flip probability `1 / (1 + e^eps)`.
pub fn flip_probability(epsilon: f64) -> f64 {
    if epsilon.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + epsilon.exp())
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&y| y > 1) {
        Some(index) => Err(AuditError::NonBinaryLabel { index, value: labels[index] }),
        None => Ok(()),
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("epsilon must be > 0, got {epsilon}")))
    }
}

/// Snap a value to its index on the grid `{0, 1/k, .., 1}`.
pub fn grid_index(value: f64, k: usize) -> Result<usize> {
    let scaled = value * k as f64;
    let j = scaled.round();
    if !(0.0..=k as f64).contains(&j) || (scaled - j).abs() > 1e-9 {
        return Err(AuditError::OffGrid { value, k });
    }
    Ok(j as usize)
}

/// Flip each label independently with probability `1 / (1 + e^eps)`.
pub fn rr_privatize<R: Rng + ?Sized>(labels: &[u8], epsilon: f64, rng: &mut R) -> Result<PrivOutput> {
    check_labels(labels)?;
    check_epsilon(epsilon)?;
    let pi = flip_probability(epsilon);
    let noisy = labels
        .iter()
        .map(|&y| if rng.random::<f64>() < pi { 1 - y } else { y })
        .collect();
    Ok(PrivOutput::NoisyLabels(noisy))
}

/// Shuffle `0..m` and cut it into `m / k` bags; the `m mod k` leftovers are dropped.
pub fn llp_partition<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<BagAssignment> {
    if k == 0 {
        return Err(invalid("bag size must be >= 1"));
    }
    if m < k {
        return Err(invalid(format!("need at least k = {k} examples, got {m}")));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let n = m / k;
    let bags = perm.chunks_exact(k).take(n).map(<[usize]>::to_vec).collect();
    Ok(BagAssignment { bags, k, dropped: m % k })
}

fn bag_sums(labels: &[u8], bags: &BagAssignment) -> Result<Vec<usize>> {
    check_labels(labels)?;
    bags.check_against(labels.len())?;
    Ok(bags
        .bags
        .iter()
        .map(|bag| bag.iter().map(|&j| labels[j] as usize).sum())
        .collect())
}

/// Exact label proportion of every bag.
pub fn llp_privatize(labels: &[u8], bags: &BagAssignment) -> Result<PrivOutput> {
    let k = bags.k as f64;
    let sums = bag_sums(labels, bags)?;
    Ok(PrivOutput::Proportions(sums.into_iter().map(|s| s as f64 / k).collect()))
}

/// Inverse-CDF Laplace draw with the given scale.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

/// Geometric draw on `{0, 1, 2, ..}` with `P(Z >= j) = q^j` (success `1 - q`),
/// by inverting the CDF.
pub fn sample_geometric<R: Rng + ?Sized>(q: f64, rng: &mut R) -> u64 {
    if q <= 0.0 {
        // consume one draw so the stream position does not depend on q
        let _ = rng.random::<f64>();
        return 0;
    }
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / q.ln()).floor() as u64
}

/// `Z+ - Z-` with both one-sided geometrics at `q = e^{-eps}`.
pub fn sample_two_sided_geometric<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> i64 {
    let q = (-epsilon).exp();
    let plus = sample_geometric(q, rng) as i64;
    let minus = sample_geometric(q, rng) as i64;
    plus - minus
}

/// Proportions plus `Laplace(1 / (k eps))` noise, released without clipping.
pub fn llp_lap_privatize<R: Rng + ?Sized>(
    labels: &[u8],
    bags: &BagAssignment,
    epsilon: f64,
    rng: &mut R,
) -> Result<PrivOutput> {
    check_epsilon(epsilon)?;
    let k = bags.k as f64;
    let scale = if epsilon.is_infinite() { 0.0 } else { 1.0 / (k * epsilon) };
    let sums = bag_sums(labels, bags)?;
    Ok(PrivOutput::RealProportions(
        sums.into_iter()
            .map(|s| s as f64 / k + sample_laplace(scale, rng))
            .collect(),
    ))
}

/// `clip(alpha + W / k, [0, 1])` with `W` two-sided geometric; stays on the grid.
pub fn llp_geom_privatize<R: Rng + ?Sized>(
    labels: &[u8],
    bags: &BagAssignment,
    epsilon: f64,
    rng: &mut R,
) -> Result<PrivOutput> {
    check_epsilon(epsilon)?;
    let k = bags.k as i64;
    let sums = bag_sums(labels, bags)?;
    Ok(PrivOutput::GridProportions(
        sums.into_iter()
            .map(|s| {
                let noisy = (s as i64 + sample_two_sided_geometric(epsilon, rng)).clamp(0, k);
                noisy as f64 / k as f64
            })
            .collect(),
    ))
}

/// `E[unclipped | clipped]` for the clipped geometric channel.
///
/// Given a clip at 0 the overshoot `-(s + W)` is geometric whatever the true
/// sum `s` was, with mean `1 / (e^eps - 1)`; on the proportion scale that is
/// divided by `k`.
pub fn geom_debias(alpha_clip: f64, epsilon: f64, k: usize) -> Result<f64> {
    let j = grid_index(alpha_clip, k)?;
    let tail = if epsilon.is_infinite() { 0.0 } else { 1.0 / (k as f64 * epsilon.exp_m1()) };
    Ok(if j == 0 {
        -tail
    } else if j == k {
        1.0 + tail
    } else {
        j as f64 / k as f64
    })
}

pub fn null_privatize(_labels: &[u8]) -> PrivOutput {
    PrivOutput::Null
}

/// Runs the mechanism described by `params`; bagged mechanisms also return
/// the partition they used.
pub fn privatize<R: Rng + ?Sized>(
    params: &PrivacyParams,
    labels: &[u8],
    rng: &mut R,
) -> Result<(PrivOutput, Option<BagAssignment>)> {
    params.validate()?;
    match params.mechanism {
        MechanismKind::Null => Ok((null_privatize(labels), None)),
        MechanismKind::Rr => Ok((rr_privatize(labels, params.epsilon, rng)?, None)),
        kind => {
            let bags = llp_partition(labels.len(), params.bag_size, rng)?;
            let out = match kind {
                MechanismKind::Llp => llp_privatize(labels, &bags)?,
                MechanismKind::LlpLap => llp_lap_privatize(labels, &bags, params.epsilon, rng)?,
                _ => llp_geom_privatize(labels, &bags, params.epsilon, rng)?,
            };
            Ok((out, Some(bags)))
        }
    }
}
