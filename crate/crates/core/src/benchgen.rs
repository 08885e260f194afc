//! Severity-graded benchmark generation.
//!
//! Each admitted OOD class gets a severity score: the mean confidence the
//! model assigns to its estimation samples. Classes are sorted by severity,
//! grouped by a stride-1 sliding window of `group_size` classes, and
//! `n_levels` windows are picked at evenly spaced percentiles of the window
//! array. Level `i` of the benchmark is the test samples of the classes in
//! its window.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provenance::Provenance;
use crate::scores::{apply_kappa, KappaSpec, LogitTable, ScoreError, ScoreTable};
use crate::taxonomy::SampleSplit;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_GROUP_SIZE: usize = 1000;
pub const DEFAULT_LEVELS: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("empty estimation set")]
    EmptyEstimationSet,
    #[error("no score for sample `{sample}` of class `{class}`")]
    MissingScores { class: String, sample: String },
    #[error("sample `{sample}` appears twice in the score table")]
    DuplicateSample { sample: String },
    #[error("sample `{sample}` is labelled `{table_class}` in the table but split under `{split_class}`")]
    ClassMismatch {
        sample: String,
        table_class: String,
        split_class: String,
    },
    #[error("no sample split for admitted class `{0}`")]
    MissingSplit(String),
    #[error("{classes} classes is fewer than group size {group_size}")]
    TooFewClasses { classes: usize, group_size: usize },
    #[error("invalid generation parameters: {0}")]
    InvalidParameters(String),
    #[error("score table kappa `{table}` does not match requested `{requested}`")]
    KappaMismatch { table: String, requested: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityEntry {
    pub class_id: String,
    pub severity: f64,
}

/// OOD classes sorted ascending by severity, ties broken by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityIndex {
    pub model_id: String,
    pub kappa_id: String,
    pub entries: Vec<SeverityEntry>,
}

impl SeverityIndex {
    pub fn from_entries(
        model_id: impl Into<String>,
        kappa_id: impl Into<String>,
        mut entries: Vec<SeverityEntry>,
    ) -> Self {
        entries.sort_by(|a, b| {
            a.severity
                .total_cmp(&b.severity)
                .then_with(|| a.class_id.cmp(&b.class_id))
        });
        Self {
            model_id: model_id.into(),
            kappa_id: kappa_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean severity of the window starting at `start`.
    ///
    /// Summation runs left to right over sorted entries, so for any two
    /// windows the later one is elementwise ≥ the earlier one and, because
    /// rounding is monotone, its floating-point mean is ≥ as well.
    pub fn window_severity(&self, start: usize, group_size: usize) -> f64 {
        let window = &self.entries[start..start + group_size];
        window.iter().fold(0.0, |acc, e| acc + e.severity) / group_size as f64
    }
}

/// Arithmetic mean of estimation-sample scores.
///
/// Uses a running mean, which returns a constant input exactly.
pub fn class_severity(est_scores: &[f64]) -> Result<f64, BenchError> {
    if est_scores.is_empty() {
        return Err(BenchError::EmptyEstimationSet);
    }
    Ok(est_scores
        .iter()
        .enumerate()
        .fold(0.0, |mean, (k, s)| mean + (s - mean) / (k + 1) as f64))
}

struct ScoreLookup<'a> {
    by_sample: HashMap<&'a str, (&'a str, f64)>,
}

impl<'a> ScoreLookup<'a> {
    fn new(table: &'a ScoreTable) -> Result<Self, BenchError> {
        let mut by_sample = HashMap::with_capacity(table.len());
        for (s, &v) in table.manifest.iter().zip(&table.values) {
            if by_sample
                .insert(s.sample_id.as_str(), (s.class_id.as_str(), v))
                .is_some()
            {
                return Err(BenchError::DuplicateSample {
                    sample: s.sample_id.clone(),
                });
            }
        }
        Ok(Self { by_sample })
    }

    fn get(&self, class: &str, sample: &str) -> Result<f64, BenchError> {
        match self.by_sample.get(sample) {
            None => Err(BenchError::MissingScores {
                class: class.to_string(),
                sample: sample.to_string(),
            }),
            Some((table_class, _)) if *table_class != class => Err(BenchError::ClassMismatch {
                sample: sample.to_string(),
                table_class: table_class.to_string(),
                split_class: class.to_string(),
            }),
            Some((_, v)) => Ok(*v),
        }
    }
}

/// Scores every class in `splits` over its estimation samples only.
pub fn build_severity_index(
    score_table: &ScoreTable,
    splits: &BTreeMap<String, SampleSplit>,
    model_id: &str,
) -> Result<SeverityIndex, BenchError> {
    let lookup = ScoreLookup::new(score_table)?;
    let entries = splits
        .iter()
        .map(|(class, split)| {
            let scores = split
                .est_ids
                .iter()
                .map(|s| lookup.get(class, s))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SeverityEntry {
                class_id: class.clone(),
                severity: class_severity(&scores)?,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(SeverityIndex::from_entries(
        model_id,
        score_table.kappa_id.clone(),
        entries,
    ))
}

/// Window index for each level: `round(i · (W − 1) / (n_levels − 1))`, with
/// `W = |index| − group_size + 1`. Rounds half up.
pub fn select_severity_levels(n_classes: usize, group_size: usize, n_levels: usize) -> Result<Vec<usize>, BenchError> {
    if group_size == 0 {
        return Err(BenchError::InvalidParameters("group_size must be ≥ 1".into()));
    }
    if n_levels < 2 {
        return Err(BenchError::InvalidParameters("n_levels must be ≥ 2".into()));
    }
    if n_classes < group_size {
        return Err(BenchError::TooFewClasses {
            classes: n_classes,
            group_size,
        });
    }
    let last = n_classes - group_size;
    let denom = n_levels - 1;
    Ok((0..n_levels).map(|i| (2 * i * last + denom) / (2 * denom)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLevel {
    pub level: usize,
    pub window_index: usize,
    /// Mean severity of the window's classes.
    pub severity: f64,
    pub class_ids: Vec<String>,
    pub test_sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub format_version: u32,
    pub model_id: String,
    pub kappa_id: String,
    pub kappa: KappaSpec,
    pub seed: u64,
    pub group_size: usize,
    pub n_levels: usize,
    pub n_windows: usize,
    pub levels: Vec<BenchmarkLevel>,
    pub severity_index: Vec<SeverityEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl BenchmarkManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn severity_index(&self) -> SeverityIndex {
        SeverityIndex {
            model_id: self.model_id.clone(),
            kappa_id: self.kappa_id.clone(),
            entries: self.severity_index.clone(),
        }
    }

    /// True when level severities never decrease (exact comparison).
    pub fn is_severity_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[0].severity <= w[1].severity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub model_id: String,
    pub group_size: usize,
    pub n_levels: usize,
    pub seed: u64,
}

impl GenerateConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            group_size: DEFAULT_GROUP_SIZE,
            n_levels: DEFAULT_LEVELS,
            seed: 0,
        }
    }
}

/// Input to [`generate_benchmark`]: raw logits to score, or precomputed scores.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Logits(&'a LogitTable),
    Scores(&'a ScoreTable),
}

/// Runs the full pipeline for one `(model, kappa)` pair.
pub fn generate_benchmark(
    source: ScoreSource<'_>,
    kappa: &KappaSpec,
    admitted: &BTreeSet<String>,
    splits: &BTreeMap<String, SampleSplit>,
    cfg: &GenerateConfig,
) -> Result<BenchmarkManifest, BenchError> {
    let computed;
    let scores = match source {
        ScoreSource::Logits(table) => {
            computed = apply_kappa(table, kappa)?;
            &computed
        }
        ScoreSource::Scores(table) => {
            if table.kappa_id != kappa.kappa_id() {
                return Err(BenchError::KappaMismatch {
                    table: table.kappa_id.clone(),
                    requested: kappa.kappa_id(),
                });
            }
            table
        }
    };
    let admitted_splits = admitted
        .iter()
        .map(|c| {
            splits
                .get(c)
                .map(|s| (c.clone(), s.clone()))
                .ok_or_else(|| BenchError::MissingSplit(c.clone()))
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;

    let index = build_severity_index(scores, &admitted_splits, &cfg.model_id)?;
    let windows = select_severity_levels(index.len(), cfg.group_size, cfg.n_levels)?;
    let levels = windows
        .iter()
        .enumerate()
        .map(|(level, &w)| {
            let members = &index.entries[w..w + cfg.group_size];
            BenchmarkLevel {
                level,
                window_index: w,
                severity: index.window_severity(w, cfg.group_size),
                class_ids: members.iter().map(|e| e.class_id.clone()).collect(),
                test_sample_ids: members
                    .iter()
                    .flat_map(|e| admitted_splits[&e.class_id].test_ids.iter().cloned())
                    .collect(),
            }
        })
        .collect();

    Ok(BenchmarkManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        model_id: cfg.model_id.clone(),
        kappa_id: scores.kappa_id.clone(),
        kappa: kappa.clone(),
        seed: cfg.seed,
        group_size: cfg.group_size,
        n_levels: cfg.n_levels,
        n_windows: index.len() - cfg.group_size + 1,
        levels,
        severity_index: index.entries,
        provenance: None,
    })
}
