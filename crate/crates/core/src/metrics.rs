//! Rank statistics: detection AUROC, ID AUROC and Spearman correlation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::BenchmarkManifest;
use crate::provenance::Provenance;
use crate::scores::ScoreTable;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} score set is empty")]
    EmptySide(&'static str),
    #[error("non-finite score")]
    NonFinite,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least one correct and one incorrect prediction")]
    DegenerateLabels,
    #[error("need at least two observations")]
    TooShort,
    #[error("constant input has no rank correlation")]
    ConstantInput,
    #[error("no OOD score for sample `{0}`")]
    MissingScores(String),
    #[error("duplicate sample `{0}` in score table")]
    DuplicateSample(String),
    #[error("kappa mismatch: manifest `{manifest}`, scores `{scores}`")]
    KappaMismatch { manifest: String, scores: String },
}

fn check(values: &[f64], side: &'static str) -> Result<(), MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptySide(side));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half. Computed from the Mann-Whitney rank sum.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    let n = id_scores.len();
    let m = ood_scores.len();
    let pooled: Vec<f64> = id_scores.iter().chain(ood_scores).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u = rank_sum - (n * (n + 1)) as f64 / 2.0;
    Ok(u / (n as f64 * m as f64))
}

/// AUROC of confidence as a separator of correct from incorrect predictions.
pub fn id_auroc(scores: &[f64], correct: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != correct.len() {
        return Err(MetricError::LengthMismatch(scores.len(), correct.len()));
    }
    let mut right = Vec::new();
    let mut wrong = Vec::new();
    for (&s, &c) in scores.iter().zip(correct) {
        if c {
            right.push(s)
        } else {
            wrong.push(s)
        }
    }
    if right.is_empty() || wrong.is_empty() {
        return Err(MetricError::DegenerateLabels);
    }
    auroc(&right, &wrong)
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort);
    }
    check(x, "x")?;
    check(y, "y")?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub kappa_id: String,
    pub per_level_auroc: Vec<f64>,
    pub mean_auroc: f64,
    pub counts: Vec<LevelCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub const EVAL_CSV_HEADER: &str = "model,kappa,level,auroc,n_id,n_ood";

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One row per level under [`EVAL_CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_CSV_HEADER}\n");
        for (level, (auroc, c)) in self.per_level_auroc.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!(
                "{},{},{level},{auroc},{},{}\n",
                csv_field(&self.model_id),
                csv_field(&self.kappa_id),
                c.n_id,
                c.n_ood
            ));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// AUROC for every level of `manifest`, reusing the full ID score set each time.
pub fn evaluate_benchmark(
    manifest: &BenchmarkManifest,
    id_score_table: &ScoreTable,
    ood_score_table: &ScoreTable,
) -> Result<EvalReport, MetricError> {
    for table in [id_score_table, ood_score_table] {
        if table.kappa_id != manifest.kappa_id {
            return Err(MetricError::KappaMismatch {
                manifest: manifest.kappa_id.clone(),
                scores: table.kappa_id.clone(),
            });
        }
    }
    let mut ood_lookup = HashMap::with_capacity(ood_score_table.len());
    for (s, &v) in ood_score_table.manifest.iter().zip(&ood_score_table.values) {
        if ood_lookup.insert(s.sample_id.as_str(), v).is_some() {
            return Err(MetricError::DuplicateSample(s.sample_id.clone()));
        }
    }
    let id_scores = &id_score_table.values;

    let per_level = manifest
        .levels
        .par_iter()
        .map(|level| {
            let ood = level
                .test_sample_ids
                .iter()
                .map(|s| {
                    ood_lookup
                        .get(s.as_str())
                        .copied()
                        .ok_or_else(|| MetricError::MissingScores(s.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let value = auroc(id_scores, &ood)?;
            Ok((
                value,
                LevelCounts {
                    n_id: id_scores.len(),
                    n_ood: ood.len(),
                },
            ))
        })
        .collect::<Result<Vec<_>, MetricError>>()?;

    let (per_level_auroc, counts): (Vec<f64>, Vec<LevelCounts>) = per_level.into_iter().unzip();
    let mean_auroc = per_level_auroc.iter().sum::<f64>() / per_level_auroc.len().max(1) as f64;
    Ok(EvalReport {
        model_id: manifest.model_id.clone(),
        kappa_id: manifest.kappa_id.clone(),
        per_level_auroc,
        mean_auroc,
        counts,
        provenance: None,
    })
}
