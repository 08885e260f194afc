//! Confidence (kappa) functions and the tables they operate on.
//!
//! Every kappa maps a prediction to a scalar where larger means more
//! confident. Logit rows are evaluated at `f64` regardless of how they were
//! stored on disk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("empty vector")]
    EmptyVector,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("not a probability distribution (sum {sum})")]
    NotADistribution { sum: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("pass length mismatch: expected {expected}, got {got}")]
    PassLengthMismatch { expected: usize, got: usize },
    #[error("kappa/table mismatch: {0}")]
    SpecMismatch(String),
    #[error("malformed table: {0}")]
    MalformedTable(String),
}

/// One row of a table manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub sample_id: String,
    pub class_id: String,
}

impl SampleRef {
    pub fn new(sample_id: impl Into<String>, class_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            class_id: class_id.into(),
        }
    }
}

/// Raw pre-softmax outputs, one row per sample and pass.
///
/// Rows are stored pass-major: pass `p` of sample `i` lives at row
/// `p * manifest.len() + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    manifest: Vec<SampleRef>,
    n_cols: usize,
    n_passes: usize,
    values: Vec<f64>,
}

impl LogitTable {
    pub fn new(manifest: Vec<SampleRef>, n_cols: usize, n_passes: usize, values: Vec<f64>) -> Result<Self, ScoreError> {
        if n_cols == 0 || n_passes == 0 {
            return Err(ScoreError::MalformedTable("n_cols and n_passes must be ≥ 1".into()));
        }
        let expected = manifest.len() * n_passes * n_cols;
        if values.len() != expected {
            return Err(ScoreError::MalformedTable(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFiniteInput);
        }
        Ok(Self {
            manifest,
            n_cols,
            n_passes,
            values,
        })
    }

    pub fn manifest(&self) -> &[SampleRef] {
        &self.manifest
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_passes(&self) -> usize {
        self.n_passes
    }

    pub fn n_samples(&self) -> usize {
        self.manifest.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, sample: usize, pass: usize) -> &[f64] {
        let r = pass * self.manifest.len() + sample;
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }
}

/// One scalar confidence value per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub manifest: Vec<SampleRef>,
    pub kappa_id: String,
    pub values: Vec<f64>,
}

impl ScoreTable {
    pub fn new(manifest: Vec<SampleRef>, kappa_id: impl Into<String>, values: Vec<f64>) -> Result<Self, ScoreError> {
        if manifest.len() != values.len() {
            return Err(ScoreError::MalformedTable(format!(
                "{} manifest rows but {} scores",
                manifest.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFiniteInput);
        }
        Ok(Self {
            manifest,
            kappa_id: kappa_id.into(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaKind {
    SoftmaxResponse,
    MaxLogit,
    NegEntropy,
    Odin,
    McDropout,
    External,
}

impl KappaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SoftmaxResponse => "softmax-response",
            Self::MaxLogit => "max-logit",
            Self::NegEntropy => "neg-entropy",
            Self::Odin => "odin",
            Self::McDropout => "mc-dropout",
            Self::External => "external",
        }
    }
}

impl fmt::Display for KappaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KappaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "softmax" | "softmax-response" => Self::SoftmaxResponse,
            "max-logit" => Self::MaxLogit,
            "neg-entropy" | "entropy" => Self::NegEntropy,
            "odin" => Self::Odin,
            "mc-dropout" => Self::McDropout,
            "external" => Self::External,
            other => return Err(format!("unknown kappa `{other}`")),
        })
    }
}

pub const DEFAULT_ODIN_TEMPERATURE: f64 = 2.0;
pub const DEFAULT_ODIN_EPSILON: f64 = 1e-5;
pub const DEFAULT_MC_PASSES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSpec {
    pub kind: KappaKind,
    pub temperature: f64,
    /// Input perturbation magnitude used upstream; provenance only.
    pub epsilon: f64,
    pub passes: usize,
    /// Identifier for externally produced scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_id: Option<String>,
}

impl KappaSpec {
    pub fn new(kind: KappaKind) -> Self {
        Self {
            kind,
            temperature: DEFAULT_ODIN_TEMPERATURE,
            epsilon: DEFAULT_ODIN_EPSILON,
            passes: DEFAULT_MC_PASSES,
            external_id: None,
        }
    }

    pub fn softmax() -> Self {
        Self::new(KappaKind::SoftmaxResponse)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ScoreError::NonPositiveTemperature(self.temperature));
        }
        if self.passes == 0 {
            return Err(ScoreError::SpecMismatch("passes must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn kappa_id(&self) -> String {
        match (&self.kind, &self.external_id) {
            (KappaKind::External, Some(id)) => id.clone(),
            (kind, _) => kind.as_str().to_string(),
        }
    }
}

fn check_finite(v: &[f64]) -> Result<(), ScoreError> {
    if v.is_empty() {
        return Err(ScoreError::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ScoreError::NonFiniteInput);
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ScoreError> {
    check_finite(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Largest softmax probability.
pub fn softmax_response(logits: &[f64]) -> Result<f64, ScoreError> {
    check_finite(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The max entry contributes exp(0) = 1 to the denominator.
    let total: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    Ok(1.0 / total)
}

pub fn max_logit(logits: &[f64]) -> Result<f64, ScoreError> {
    check_finite(logits)?;
    Ok(logits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `Σ p ln p` with `0 ln 0 = 0`. Input must sum to 1 within 1e-6.
pub fn neg_entropy(probs: &[f64]) -> Result<f64, ScoreError> {
    check_finite(probs)?;
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(ScoreError::NotADistribution { sum });
    }
    let mut support = probs.iter().copied().filter(|&p| p > 0.0);
    let first = support.next().ok_or(ScoreError::NotADistribution { sum })?;
    let mut n_support = 1usize;
    let mut uniform = true;
    for p in support {
        n_support += 1;
        uniform &= p == first;
    }
    if uniform {
        // uniform over the support: summing rounded p ln p terms drifts by a few ulps
        return Ok(-(n_support as f64).ln());
    }
    Ok(probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum())
}

pub fn neg_entropy_from_logits(logits: &[f64]) -> Result<f64, ScoreError> {
    neg_entropy(&softmax(logits)?)
}

/// Max softmax of temperature-scaled logits. The logits are expected to come
/// from the already-perturbed input.
pub fn odin_score(perturbed_logits: &[f64], temperature: f64) -> Result<f64, ScoreError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ScoreError::NonPositiveTemperature(temperature));
    }
    check_finite(perturbed_logits)?;
    let scaled: Vec<f64> = perturbed_logits.iter().map(|z| z / temperature).collect();
    softmax_response(&scaled)
}

/// Negative predictive entropy of the mean of per-pass probability vectors.
pub fn mc_dropout_score<P: AsRef<[f64]>>(pass_probs: &[P]) -> Result<f64, ScoreError> {
    let first = pass_probs.first().ok_or(ScoreError::EmptyVector)?.as_ref();
    let k = first.len();
    let mut mean = vec![0.0; k];
    for pass in pass_probs {
        let pass = pass.as_ref();
        if pass.len() != k {
            return Err(ScoreError::PassLengthMismatch {
                expected: k,
                got: pass.len(),
            });
        }
        for (m, p) in mean.iter_mut().zip(pass) {
            *m += p;
        }
    }
    let n = pass_probs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    neg_entropy(&mean)
}

/// Evaluates `spec` on every sample of `table`, preserving manifest order.
pub fn apply_kappa(table: &LogitTable, spec: &KappaSpec) -> Result<ScoreTable, ScoreError> {
    spec.validate()?;
    let n_passes = table.n_passes();
    match spec.kind {
        KappaKind::McDropout if n_passes != spec.passes => {
            return Err(ScoreError::SpecMismatch(format!(
                "mc-dropout expects {} passes, table has {n_passes}",
                spec.passes
            )))
        }
        KappaKind::McDropout => {}
        _ if n_passes != 1 => {
            return Err(ScoreError::SpecMismatch(format!(
                "{} needs a single-pass table, got {n_passes} passes",
                spec.kind
            )))
        }
        KappaKind::External if table.n_cols() != 1 => {
            return Err(ScoreError::SpecMismatch(format!(
                "external scores must have one column, got {}",
                table.n_cols()
            )))
        }
        _ => {}
    }

    let values = (0..table.n_samples())
        .map(|i| {
            let row = table.row(i, 0);
            match spec.kind {
                KappaKind::SoftmaxResponse => softmax_response(row),
                KappaKind::MaxLogit => max_logit(row),
                KappaKind::NegEntropy => neg_entropy_from_logits(row),
                KappaKind::Odin => odin_score(row, spec.temperature),
                KappaKind::External => Ok(row[0]),
                KappaKind::McDropout => {
                    let passes = (0..n_passes)
                        .map(|p| softmax(table.row(i, p)))
                        .collect::<Result<Vec<_>, _>>()?;
                    mc_dropout_score(&passes)
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ScoreTable::new(table.manifest().to_vec(), spec.kappa_id(), values)
}
