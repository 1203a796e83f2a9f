//! Poisson-binomial distributions: the law of a bag's label sum given the
//! per-example label probabilities.

use crate::error::{AuditError, Result};
use crate::scalar::{is_probability, Scalar};

/// PMF of `sum_j Bernoulli(eta_j)` over the support `{0, ..., k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PBinPmf<T> {
    etas: Vec<T>,
    pmf: Vec<T>,
}

impl<T: Scalar> PBinPmf<T> {
    /// Builds the PMF by folding in one Bernoulli at a time. Rejects empty input.
    pub fn new(etas: &[T]) -> Result<Self> {
        if etas.is_empty() {
            return Err(AuditError::EmptyInput);
        }
        Self::from_etas(etas)
    }

    /// Like [`PBinPmf::new`] but an empty slice gives the point mass at zero.
    fn from_etas(etas: &[T]) -> Result<Self> {
        validate(etas)?;
        let mut pmf = Vec::with_capacity(etas.len() + 1);
        pmf.push(T::one());
        for &eta in etas {
            fold_bernoulli(&mut pmf, eta);
        }
        Ok(Self {
            etas: etas.to_vec(),
            pmf,
        })
    }

    pub fn etas(&self) -> &[T] {
        &self.etas
    }

    pub fn pmf(&self) -> &[T] {
        &self.pmf
    }

    pub fn into_pmf(self) -> Vec<T> {
        self.pmf
    }

    /// Number of Bernoulli terms.
    pub fn k(&self) -> usize {
        self.etas.len()
    }

    /// `P(sum = s)`, zero outside the support (including negative `s`).
    pub fn prob(&self, s: isize) -> T {
        if s < 0 {
            return T::zero();
        }
        self.pmf.get(s as usize).copied().unwrap_or_else(T::zero)
    }

    pub fn mean(&self) -> T {
        self.pmf
            .iter()
            .enumerate()
            .map(|(s, &p)| T::from_usize_lossy(s) * p)
            .sum()
    }

    /// PMF of the sum with term `i` removed, recomputed from the remaining etas.
    pub fn leave_one_out(&self, i: usize) -> Result<Self> {
        if i >= self.etas.len() {
            return Err(AuditError::IndexOutOfRange {
                index: i,
                len: self.etas.len(),
            });
        }
        let rest: Vec<T> = self
            .etas
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &e)| e)
            .collect();
        Self::from_etas(&rest)
    }
}

fn validate<T: Scalar>(etas: &[T]) -> Result<()> {
    match etas.iter().find(|&&e| !is_probability(e)) {
        Some(&bad) => Err(AuditError::ProbabilityOutOfRange { value: bad.as_f64() }),
        None => Ok(()),
    }
}

/// In-place convolution with a Bernoulli(eta); grows `pmf` by one entry.
fn fold_bernoulli<T: Scalar>(pmf: &mut Vec<T>, eta: T) {
    let q = T::one() - eta;
    pmf.push(T::zero());
    for s in (1..pmf.len()).rev() {
        pmf[s] = pmf[s] * q + pmf[s - 1] * eta;
    }
    pmf[0] = pmf[0] * q;
}

pub(crate) fn convolve<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = out[i + j] + x * y;
        }
    }
    out
}

fn range_pmf<T: Scalar>(etas: &[T]) -> Vec<T> {
    let mut pmf = Vec::with_capacity(etas.len() + 1);
    pmf.push(T::one());
    for &eta in etas {
        fold_bernoulli(&mut pmf, eta);
    }
    pmf
}

/// `PBin(etas)` as a PMF.
pub fn pbin_pmf<T: Scalar>(etas: &[T]) -> Result<PBinPmf<T>> {
    PBinPmf::new(etas)
}

/// PMF of the sum over every index except `i`.
pub fn pbin_leave_one_out<T: Scalar>(etas: &[T], i: usize) -> Result<PBinPmf<T>> {
    if i >= etas.len() {
        return Err(AuditError::IndexOutOfRange {
            index: i,
            len: etas.len(),
        });
    }
    let mut rest = etas.to_vec();
    rest.remove(i);
    PBinPmf::from_etas(&rest)
}

/// All `k` leave-one-out PMFs at once, each of length `k`.
///
/// Splits the index range recursively and pushes the product of everything
/// outside a node down to its children, so every result is built purely by
/// convolution in O(k^2 log k) total.
pub fn all_leave_one_out<T: Scalar>(etas: &[T]) -> Result<Vec<Vec<T>>> {
    if etas.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    validate(etas)?;
    let mut out = vec![Vec::new(); etas.len()];
    descend(etas, 0, etas.len(), vec![T::one()], &mut out);
    Ok(out)
}

fn descend<T: Scalar>(etas: &[T], lo: usize, hi: usize, outside: Vec<T>, out: &mut [Vec<T>]) {
    if hi - lo == 1 {
        out[lo] = outside;
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let left = range_pmf(&etas[lo..mid]);
    let right = range_pmf(&etas[mid..hi]);
    descend(etas, lo, mid, convolve(&outside, &right), out);
    descend(etas, mid, hi, convolve(&outside, &left), out);
}
