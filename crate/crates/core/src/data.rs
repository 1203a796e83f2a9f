//! Datasets with known (or estimated) label priors `eta(x)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, AuditError, Result};
use crate::rng::{domain, substream};
use crate::scalar::{logit, sigmoid};

/// Clamp applied to `logit(eta)` when it is used as a feature.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub note: Option<String>,
}

/// Examples stored column-compact: `features` is row-major with `dim`
/// entries per example.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaDataset {
    pub features: Vec<f64>,
    pub dim: usize,
    /// `None` when the source did not provide priors.
    pub etas: Option<Vec<f64>>,
    pub labels: Vec<u8>,
    pub meta: DatasetMeta,
}

impl EtaDataset {
    pub fn new(features: Vec<f64>, dim: usize, etas: Option<Vec<f64>>, labels: Vec<u8>, meta: DatasetMeta) -> Result<Self> {
        let m = labels.len();
        if features.len() != m * dim {
            return Err(AuditError::DimensionMismatch { expected: m * dim, got: features.len() });
        }
        if let Some(index) = labels.iter().position(|&y| y > 1) {
            return Err(AuditError::NonBinaryLabel { index, value: labels[index] });
        }
        if let Some(e) = &etas {
            if e.len() != m {
                return Err(AuditError::DimensionMismatch { expected: m, got: e.len() });
            }
            if let Some(&value) = e.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(AuditError::ProbabilityOutOfRange { value });
            }
        }
        Ok(Self { features, dim, etas, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn etas_or_err(&self) -> Result<&[f64]> {
        self.etas.as_deref().ok_or(AuditError::MissingEta)
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            etas: self.etas.as_ref().map(|e| indices.iter().map(|&i| e[i]).collect()),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// First `round(frac * m)` examples and the rest.
    pub fn split(&self, frac: f64) -> (Self, Self) {
        let cut = ((self.len() as f64 * frac).round() as usize).min(self.len());
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

fn clamped_logit(eta: f64) -> f64 {
    logit(eta).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// `eta ~ Beta(a, b)`, `y ~ Bernoulli(eta)`, features
/// `[logit(eta), d_distractors standard normals]`.
pub fn gen_beta(a: f64, b: f64, m: usize, d_distractors: usize, seed: u64) -> Result<EtaDataset> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid(format!("beta parameters must be > 0, got ({a}, {b})")));
    }
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    let beta = Beta::new(a, b).map_err(|e| invalid(e.to_string()))?;
    let mut rng = substream(seed, domain::DATA, 0);
    let dim = 1 + d_distractors;
    let mut features = Vec::with_capacity(m * dim);
    let mut etas = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let eta: f64 = beta.sample(&mut rng);
        labels.push((rng.random::<f64>() < eta) as u8);
        features.push(clamped_logit(eta));
        for _ in 0..d_distractors {
            features.push(StandardNormal.sample(&mut rng));
        }
        etas.push(eta);
    }
    let meta = DatasetMeta {
        generator: format!("beta({a},{b})"),
        seed: Some(seed),
        note: Some(format!("feat_0 = logit(eta) clamped to +-{LOGIT_CLAMP}")),
    };
    EtaDataset::new(features, dim, Some(etas), labels, meta)
}

/// [`gen_beta`] with uniform priors.
pub fn gen_uniform(m: usize, d_distractors: usize, seed: u64) -> Result<EtaDataset> {
    let mut ds = gen_beta(1.0, 1.0, m, d_distractors, seed)?;
    ds.meta.generator = "uniform".into();
    Ok(ds)
}

/// Constant prior `p` with one pure-noise feature.
pub fn gen_independent(p: f64, m: usize, seed: u64) -> Result<EtaDataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AuditError::ProbabilityOutOfRange { value: p });
    }
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    let mut rng = substream(seed, domain::DATA, 0);
    let mut features = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        labels.push((rng.random::<f64>() < p) as u8);
        features.push(StandardNormal.sample(&mut rng));
    }
    let meta = DatasetMeta { generator: format!("independent({p})"), seed: Some(seed), note: None };
    EtaDataset::new(features, 1, Some(vec![p; m]), labels, meta)
}

/// Column names used when reading a CSV dataset; every other column is a feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub label: String,
    pub eta: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { label: "label".into(), eta: "eta".into() }
    }
}

/// Writes `feat_0,..,feat_{d-1},label[,eta]`, one row per example, with
/// shortest round-trip float formatting. `header_comment` lines are prefixed by `#`.
pub fn write_csv<W: Write>(ds: &EtaDataset, header_comment: Option<&str>, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    if let Some(c) = header_comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut cols: Vec<String> = (0..ds.dim).map(|j| format!("feat_{j}")).collect();
    cols.push("label".into());
    if ds.etas.is_some() {
        cols.push("eta".into());
    }
    writeln!(out, "{}", cols.join(","))?;
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds.row(i).iter().map(|x| format!("{x}")).collect();
        fields.push(ds.labels[i].to_string());
        if let Some(e) = &ds.etas {
            fields.push(format!("{}", e[i]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(ds: &EtaDataset, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
    write_csv(ds, header_comment, File::create(path)?)
}

pub fn read_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<EtaDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == schema.label)
        .ok_or_else(|| AuditError::Schema(format!("missing `{}` column", schema.label)))?;
    let eta_col = headers.iter().position(|h| h == schema.eta);
    let feat_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && Some(c) != eta_col)
        .collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut etas = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| AuditError::Malformed { line, msg };
        if rec.len() != headers.len() {
            return Err(bad(format!("expected {} fields, got {}", headers.len(), rec.len())));
        }
        let parse = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|_| bad(format!("column `{}`: cannot parse `{}`", &headers[c], &rec[c])))
        };
        for &c in &feat_cols {
            features.push(parse(c)?);
        }
        labels.push(match &rec[label_col] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label `{other}` is not 0 or 1"))),
        });
        if let Some(c) = eta_col {
            let e = parse(c)?;
            if !(0.0..=1.0).contains(&e) {
                return Err(bad(format!("eta {e} outside [0, 1]")));
            }
            etas.push(e);
        }
    }
    let meta = DatasetMeta { generator: "csv".into(), seed: None, note: None };
    EtaDataset::new(features, feat_cols.len(), eta_col.map(|_| etas), labels, meta)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<EtaDataset> {
    read_csv(BufReader::new(File::open(path)?), schema)
}

/// Mean label of the `k_nn` Euclidean-nearest training examples for each
/// query row (row-major, `train.dim` columns). Distance ties go to the lower
/// training index.
pub fn knn_eta_estimate(train: &EtaDataset, queries: &[f64], k_nn: usize) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    if k_nn == 0 || k_nn > train.len() {
        return Err(invalid(format!("k_nn must lie in [1, {}], got {k_nn}", train.len())));
    }
    let d = train.dim;
    if d == 0 || !queries.len().is_multiple_of(d) {
        return Err(AuditError::DimensionMismatch { expected: d, got: queries.len() });
    }
    let out = queries
        .par_chunks(d)
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = (0..train.len())
                .map(|i| {
                    let r = train.row(i);
                    (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
                })
                .collect();
            let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
            if k_nn < dist.len() {
                dist.select_nth_unstable_by(k_nn - 1, cmp);
            }
            let pos: usize = dist[..k_nn].iter().map(|&(_, i)| train.labels[i] as usize).sum();
            pos as f64 / k_nn as f64
        })
        .collect();
    Ok(out)
}

/// The prior implied by a logistic model with weight 1 on `feat_0`.
pub fn eta_from_first_feature(ds: &EtaDataset, i: usize) -> f64 {
    sigmoid(ds.row(i)[0])
}
