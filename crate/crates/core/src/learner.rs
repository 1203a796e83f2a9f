//! Logistic models trained from privatized labels, and the privacy/utility sweep.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::advantage::{additive_adv, advantage_samples, audit_run, mean_stderr, percentile, EtaSampler};
use crate::data::EtaDataset;
use crate::error::{invalid, AuditError, Result};
use crate::mechanisms::{geom_debias, privatize, BagAssignment, MechanismKind, PrivOutput, PrivacyParams};
use crate::rng::{derive, domain, substream};
use crate::scalar::sigmoid;

/// `sigmoid(w . x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Parameters as one vector `[w.., b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn from_params(p: &[f64]) -> Self {
        let (w, b) = p.split_at(p.len() - 1);
        Self { weights: w.to_vec(), bias: b[0] }
    }
}

pub fn predict(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(AuditError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    Ok(sigmoid(model.score(x)))
}

/// Predictions for every row of a row-major feature matrix.
pub fn predict_all(model: &LinearModel, features: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    if d == 0 || !features.len().is_multiple_of(d) {
        return Err(AuditError::DimensionMismatch { expected: d, got: features.len() });
    }
    Ok(features.chunks(d).map(|x| sigmoid(model.score(x))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Minibatch size for every learner. Proportion matching takes
    /// `max(1, examples_per_batch / k)` whole bags per batch.
    pub examples_per_batch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 5,
            examples_per_batch: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be > 0"));
        }
        if self.epochs == 0 || self.examples_per_batch == 0 {
            return Err(invalid("epochs and batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// `(c1, c0)` such that `c1 f(y~) - c0 (f(0) + f(1))` is unbiased for `f(y)`
/// under RR at `epsilon`.
pub fn rr_debias_coefficients(epsilon: f64) -> (f64, f64) {
    if epsilon.is_infinite() {
        return (1.0, 0.0);
    }
    let d = epsilon.exp_m1();
    ((epsilon.exp() + 1.0) / d, 1.0 / d)
}

fn check_rows(features: &[f64], dim: usize, n: usize) -> Result<()> {
    if features.len() != dim * n {
        return Err(AuditError::DimensionMismatch { expected: dim * n, got: features.len() });
    }
    Ok(())
}

/// Mean over `idx` of the debiased BCE gradient `(sigma - (c1 y~ - c0)) [x, 1]`.
pub fn rr_debiased_gradient(model: &LinearModel, features: &[f64], noisy: &[u8], idx: &[usize], epsilon: f64) -> Vec<f64> {
    let d = model.dim();
    let (c1, c0) = rr_debias_coefficients(epsilon);
    let mut g = vec![0.0; d + 1];
    for &i in idx {
        let x = &features[i * d..(i + 1) * d];
        let r = sigmoid(model.score(x)) - (c1 * noisy[i] as f64 - c0);
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    let n = idx.len().max(1) as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, domain::TRAIN, epoch as u64));
    order
}

/// Minibatch Adam on the debiased RR cross-entropy gradient. With
/// `epsilon = inf` this is plain logistic regression.
pub fn train_rr_debiased(features: &[f64], dim: usize, noisy_labels: &[u8], epsilon: f64, config: &TrainConfig) -> Result<LinearModel> {
    config.validate()?;
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    check_rows(features, dim, noisy_labels.len())?;
    let mut model = LinearModel::zeros(dim);
    let mut params = model.params();
    let mut opt = Adam::new(dim + 1, config);
    for epoch in 0..config.epochs {
        for batch in shuffled(noisy_labels.len(), config.seed, epoch).chunks(config.examples_per_batch) {
            let g = rr_debiased_gradient(&model, features, noisy_labels, batch, epsilon);
            opt.step(&mut params, &g);
            model = LinearModel::from_params(&params);
        }
    }
    Ok(model)
}

fn bag_mean_prediction(model: &LinearModel, features: &[f64], bag: &[usize]) -> (f64, Vec<f64>) {
    let d = model.dim();
    let sig: Vec<f64> = bag
        .iter()
        .map(|&j| sigmoid(model.score(&features[j * d..(j + 1) * d])))
        .collect();
    (sig.iter().sum::<f64>() / bag.len() as f64, sig)
}

const H_FLOOR: f64 = 1e-12;

/// Cross-entropy between the bag-mean prediction `h` and a target `alpha`
/// (which may lie outside `[0, 1]`): `-alpha ln h - (1 - alpha) ln(1 - h)`.
pub fn propmatch_loss(model: &LinearModel, features: &[f64], bag: &[usize], alpha: f64) -> f64 {
    let (h, _) = bag_mean_prediction(model, features, bag);
    let h = h.clamp(H_FLOOR, 1.0 - H_FLOOR);
    -alpha * h.ln() - (1.0 - alpha) * (-h).ln_1p()
}

/// Gradient of [`propmatch_loss`] in `[w.., b]`.
pub fn propmatch_gradient(model: &LinearModel, features: &[f64], bag: &[usize], alpha: f64) -> Vec<f64> {
    let d = model.dim();
    let (h, sig) = bag_mean_prediction(model, features, bag);
    let h = h.clamp(H_FLOOR, 1.0 - H_FLOOR);
    let outer = (h - alpha) / (h * (1.0 - h)) / bag.len() as f64;
    let mut g = vec![0.0; d + 1];
    for (&j, s) in bag.iter().zip(sig) {
        let w = outer * s * (1.0 - s);
        for (gj, xj) in g.iter_mut().zip(&features[j * d..(j + 1) * d]) {
            *gj += w * xj;
        }
        g[d] += w;
    }
    g
}

/// Minibatch Adam on proportion matching over bags.
pub fn train_propmatch(features: &[f64], dim: usize, bags: &BagAssignment, proportions: &[f64], config: &TrainConfig) -> Result<LinearModel> {
    config.validate()?;
    if bags.num_bags() != proportions.len() {
        return Err(AuditError::BagMismatch(format!(
            "{} bags but {} proportions",
            bags.num_bags(),
            proportions.len()
        )));
    }
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(AuditError::DimensionMismatch { expected: dim, got: features.len() });
    }
    bags.check_against(features.len() / dim)?;
    let mut model = LinearModel::zeros(dim);
    let mut params = model.params();
    let mut opt = Adam::new(dim + 1, config);
    let per_batch = (config.examples_per_batch / bags.k.max(1)).max(1);
    for epoch in 0..config.epochs {
        for batch in shuffled(bags.num_bags(), config.seed, epoch).chunks(per_batch) {
            let mut g = vec![0.0; dim + 1];
            for &b in batch {
                let gb = propmatch_gradient(&model, features, &bags.bags[b], proportions[b]);
                g.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
            }
            g.iter_mut().for_each(|v| *v /= batch.len() as f64);
            opt.step(&mut params, &g);
            model = LinearModel::from_params(&params);
        }
    }
    Ok(model)
}

/// Mann-Whitney AUC with tied scores counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AuditError::DimensionMismatch { expected: labels.len(), got: scores.len() });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(AuditError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Trains on one privatization of `train.labels` under `params`.
pub fn train_private(train: &EtaDataset, params: &PrivacyParams, config: &TrainConfig, mech_seed: u64) -> Result<LinearModel> {
    let mut rng = substream(mech_seed, domain::MECHANISM, 0);
    let (out, bags) = privatize(params, &train.labels, &mut rng)?;
    match (out, bags) {
        (PrivOutput::Null, _) => train_rr_debiased(&train.features, train.dim, &train.labels, f64::INFINITY, config),
        (PrivOutput::NoisyLabels(y), _) => train_rr_debiased(&train.features, train.dim, &y, params.epsilon, config),
        (PrivOutput::Proportions(a) | PrivOutput::RealProportions(a), Some(bags)) => {
            train_propmatch(&train.features, train.dim, &bags, &a, config)
        }
        (PrivOutput::GridProportions(a), Some(bags)) => {
            let debiased = a
                .iter()
                .map(|&z| geom_debias(z, params.epsilon, bags.k))
                .collect::<Result<Vec<_>>>()?;
            train_propmatch(&train.features, train.dim, &bags, &debiased, config)
        }
        _ => Err(invalid("bagged output without a bag assignment")),
    }
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// feature matrix and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(AuditError::DimensionMismatch { expected: dim, got: features.len() });
        }
        let n = (features.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in features.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for row in features.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // constant columns are centered but left unscaled
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        features
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.scale[i % d])
            .collect()
    }
}

/// Grids and repetition counts for [`tradeoff_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub mechanisms: Vec<PrivacyParams>,
    pub learning_rates: Vec<f64>,
    pub runs: usize,
    pub train: TrainConfig,
    /// Bags drawn from the evaluation priors for the additive advantage.
    pub adv_trials: usize,
    /// Label draws over the evaluation priors for the multiplicative percentile.
    pub mult_runs: usize,
    /// Standardize features with statistics of the training split.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mechanisms: default_mechanism_grid(),
            learning_rates: default_learning_rates(),
            runs: 10,
            train: TrainConfig::default(),
            adv_trials: 2_000,
            mult_runs: 1,
            standardize: true,
            seed: 0,
        }
    }
}

pub fn default_epsilons() -> Vec<f64> {
    (-4..=5).map(|e| 2f64.powi(e)).collect()
}

pub fn default_bag_sizes() -> Vec<usize> {
    (0..=9).map(|e| 1usize << e).collect()
}

/// `{1e-6, 5e-6, .., 1e-2}`.
pub fn default_learning_rates() -> Vec<f64> {
    let mut out = Vec::new();
    for e in -6..=-2 {
        let base = 10f64.powi(e);
        out.push(base);
        if e < -2 {
            out.push(5.0 * base);
        }
    }
    out
}

/// The null endpoint, RR over the epsilon grid, LLP over the bag-size grid
/// and LLP+Geom over their product.
pub fn default_mechanism_grid() -> Vec<PrivacyParams> {
    let mut g = vec![PrivacyParams::null()];
    g.extend(default_epsilons().into_iter().map(PrivacyParams::rr));
    g.extend(default_bag_sizes().into_iter().map(PrivacyParams::llp));
    for k in default_bag_sizes() {
        for &e in &default_epsilons() {
            g.push(PrivacyParams::llp_geom(k, e));
        }
    }
    g
}

/// The largest AUC standard error treated as acceptably small.
pub const AUC_STDERR_LIMIT: f64 = 0.0076;

/// One point of the privacy/utility tradeoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub mechanism: MechanismKind,
    pub k: usize,
    pub epsilon: f64,
    pub additive_adv: f64,
    pub additive_stderr: f64,
    /// 98th percentile of `|mult_adv|` over non-degenerate evaluation priors.
    pub mult_adv_p98: f64,
    pub mult_inf_frac: f64,
    pub auc_mean: f64,
    pub auc_stderr: f64,
    pub auc_stderr_ok: bool,
    pub best_lr: f64,
    pub runs: usize,
}

fn sort_key(p: &PrivacyParams) -> (MechanismKind, usize, f64) {
    (p.mechanism, p.effective_bag_size(), p.epsilon)
}

/// For every grid point: train `runs` times per learning rate on fresh
/// privatizations of `train`, keep the learning rate with the best mean
/// evaluation AUC, and pair it with the mechanism's advantage on the
/// evaluation priors. Rows are sorted by `(mechanism, k, epsilon)`.
pub fn tradeoff_sweep(train: &EtaDataset, eval: &EtaDataset, cfg: &SweepConfig) -> Result<Vec<TradeoffRow>> {
    if cfg.runs == 0 || cfg.learning_rates.is_empty() {
        return Err(invalid("need at least one run and one learning rate"));
    }
    if train.dim != eval.dim {
        return Err(AuditError::DimensionMismatch { expected: train.dim, got: eval.dim });
    }
    let eval_etas = eval.etas_or_err()?;
    let (train, eval) = if cfg.standardize {
        let z = Standardizer::fit(&train.features, train.dim)?;
        let mut t = train.clone();
        let mut e = eval.clone();
        t.features = z.apply(&train.features);
        e.features = z.apply(&eval.features);
        (std::borrow::Cow::Owned(t), std::borrow::Cow::Owned(e))
    } else {
        (std::borrow::Cow::Borrowed(train), std::borrow::Cow::Borrowed(eval))
    };
    let (train, eval) = (train.as_ref(), eval.as_ref());
    let mut grid = cfg.mechanisms.clone();
    grid.sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).expect("epsilon is not NaN"));
    grid.iter().try_for_each(PrivacyParams::validate)?;

    // (grid point, learning rate, run) jobs, evaluated in parallel and
    // collected in order.
    let nl = cfg.learning_rates.len();
    let jobs: Vec<(usize, usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..nl).flat_map(move |l| (0..cfg.runs).map(move |r| (g, l, r))))
        .collect();
    let aucs = jobs
        .par_iter()
        .map(|&(g, l, r)| {
            let params = &grid[g];
            let mech_seed = derive(derive(cfg.seed, g as u64), r as u64);
            let train_cfg = TrainConfig {
                learning_rate: cfg.learning_rates[l],
                seed: derive(cfg.seed ^ 0x5eed, r as u64),
                ..cfg.train.clone()
            };
            let model = train_private(train, params, &train_cfg, mech_seed)?;
            auc(&predict_all(&model, &eval.features)?, &eval.labels)
        })
        .collect::<Result<Vec<f64>>>()?;

    let advs = grid
        .par_iter()
        .enumerate()
        .map(|(g, params)| {
            let seed = derive(cfg.seed, domain::SWEEP ^ ((g as u64) << 8));
            let add = additive_adv(&EtaSampler::Empirical(eval_etas.to_vec()), params, cfg.adv_trials, seed)?;
            let mut abs_mult = Vec::new();
            for run in 0..cfg.mult_runs {
                let records = audit_run(eval_etas, params, seed, run)?;
                let (samples, _) = advantage_samples(&records);
                abs_mult.extend(samples.iter().map(|s| s.mult_adv.abs()));
            }
            let p98 = if abs_mult.is_empty() { 0.0 } else { percentile(&abs_mult, 0.98)? };
            let inf = abs_mult.iter().filter(|v| v.is_infinite()).count() as f64 / abs_mult.len().max(1) as f64;
            Ok((add, p98, inf))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for (g, params) in grid.iter().enumerate() {
        let mut best: Option<(f64, f64, usize)> = None;
        for l in 0..nl {
            let start = (g * nl + l) * cfg.runs;
            let (mean, se) = mean_stderr(&aucs[start..start + cfg.runs]);
            if best.is_none_or(|(m, _, _)| mean > m) {
                best = Some((mean, se, l));
            }
        }
        let (auc_mean, auc_stderr, l) = best.expect("at least one learning rate");
        let (add, p98, inf) = advs[g];
        rows.push(TradeoffRow {
            mechanism: params.mechanism,
            k: params.effective_bag_size(),
            epsilon: params.epsilon,
            additive_adv: add.value,
            additive_stderr: add.stderr,
            mult_adv_p98: p98,
            mult_inf_frac: inf,
            auc_mean,
            auc_stderr,
            auc_stderr_ok: auc_stderr <= AUC_STDERR_LIMIT,
            best_lr: cfg.learning_rates[l],
            runs: cfg.runs,
        });
    }
    Ok(rows)
}

/// Smallest `metric` among the rows of `mechanism` whose mean AUC reaches
/// `target - tol`; `None` if no row does.
pub fn frontier_at<F>(rows: &[TradeoffRow], mechanism: MechanismKind, target: f64, tol: f64, metric: F) -> Option<f64>
where
    F: Fn(&TradeoffRow) -> f64,
{
    rows.iter()
        .filter(|r| r.mechanism == mechanism && r.auc_mean >= target - tol)
        .map(metric)
        .min_by(f64::total_cmp)
}
