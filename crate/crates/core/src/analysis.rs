//! Cross-model analyses over a registry of model metadata and eval reports.
//!
//! Every function here is a pure function of its inputs. Report collections
//! are keyed by model id and must all carry the same number of levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{select_severity_levels, BenchError, SeverityIndex};
use crate::metrics::{csv_field, spearman, EvalReport, MetricError};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no matched model pairs for regime `{0}`")]
    NoMatchedPairs(String),
    #[error("report collections cover different models (only in one side: {0:?})")]
    ModelSetMismatch(Vec<String>),
    #[error("need at least {needed} models, got {got}")]
    InsufficientModels { needed: usize, got: usize },
    #[error("factor `{0}` is constant across the selected models")]
    ConstantFactor(String),
    #[error("AUROC at level {0} is constant across models")]
    ConstantLevel(usize),
    #[error("severity indices cover different class sets (model `{0}`)")]
    ClassUniverseMismatch(String),
    #[error("reports disagree on level count ({0} vs {1})")]
    LevelMismatch(usize, usize),
    #[error("baseline AUROC is zero for model `{0}`")]
    ZeroBaseline(String),
    #[error("duplicate model id `{0}` in registry")]
    DuplicateModel(String),
    #[error("invalid model record `{model}`: {msg}")]
    InvalidRecord { model: String, msg: String },
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub architecture_family: String,
    pub n_params: u64,
    pub input_size: u32,
    pub embedding_size: u32,
    pub accuracy: f64,
    pub id_auroc: f64,
    #[serde(default)]
    pub regime_tags: BTreeSet<String>,
    pub comparison_key: String,
}

/// Model records indexed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    models: BTreeMap<String, ModelRecord>,
}

impl Registry {
    pub fn new(records: impl IntoIterator<Item = ModelRecord>) -> Result<Self, AnalysisError> {
        let mut models = BTreeMap::new();
        for r in records {
            for (name, v) in [("accuracy", r.accuracy), ("id_auroc", r.id_auroc)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(AnalysisError::InvalidRecord {
                        model: r.model_id.clone(),
                        msg: format!("{name} = {v} outside [0, 1]"),
                    });
                }
            }
            if let Some(prev) = models.insert(r.model_id.clone(), r) {
                return Err(AnalysisError::DuplicateModel(prev.model_id));
            }
        }
        Ok(Self { models })
    }

    /// Parses JSON Lines, one [`ModelRecord`] per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<Vec<ModelRecord>, _>>()?;
        Self::new(records).map_err(|e| e.to_string())
    }

    pub fn to_jsonl(&self) -> String {
        self.models
            .values()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelRecord> {
        self.models.get(model_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ModelRecord> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

pub type Reports = BTreeMap<String, EvalReport>;

fn level_count<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Result<usize, AnalysisError> {
    let mut n = None;
    for r in reports {
        let len = r.per_level_auroc.len();
        match n {
            None => n = Some(len),
            Some(m) if m != len => return Err(AnalysisError::LevelMismatch(m, len)),
            _ => {}
        }
    }
    n.ok_or(AnalysisError::Empty)
}

/// `100 · (with − without) / without`.
pub fn relative_improvement(with: f64, without: f64) -> f64 {
    100.0 * (with - without) / without
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedImprovement {
    pub regime_tag: String,
    /// `per_level[level][pair]`, percent.
    pub per_level: Vec<Vec<f64>>,
    pub pair_ids: Vec<(String, String)>,
}

impl PairedImprovement {
    pub fn mean_per_level(&self) -> Vec<f64> {
        self.per_level
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect()
    }
}

/// Relative AUROC change from adding `regime_tag`, over all model pairs that
/// share a comparison key and whose tag sets differ only by that tag.
/// Models without a report are skipped.
pub fn regime_improvement(
    registry: &Registry,
    reports: &Reports,
    regime_tag: &str,
) -> Result<PairedImprovement, AnalysisError> {
    let evaluated: Vec<&ModelRecord> = registry
        .records()
        .filter(|r| reports.contains_key(&r.model_id))
        .collect();
    let mut pair_ids = Vec::new();
    for with in evaluated.iter().filter(|r| r.regime_tags.contains(regime_tag)) {
        let mut base_tags = with.regime_tags.clone();
        base_tags.remove(regime_tag);
        for without in &evaluated {
            if without.comparison_key == with.comparison_key && without.regime_tags == base_tags {
                pair_ids.push((with.model_id.clone(), without.model_id.clone()));
            }
        }
    }
    if pair_ids.is_empty() {
        return Err(AnalysisError::NoMatchedPairs(regime_tag.to_string()));
    }
    let n_levels = level_count(pair_ids.iter().flat_map(|(a, b)| [&reports[a], &reports[b]]))?;
    let mut per_level = vec![Vec::with_capacity(pair_ids.len()); n_levels];
    for (with, without) in &pair_ids {
        let (w, wo) = (&reports[with], &reports[without]);
        for (level, slot) in per_level.iter_mut().enumerate() {
            let base = wo.per_level_auroc[level];
            if base == 0.0 {
                return Err(AnalysisError::ZeroBaseline(without.clone()));
            }
            slot.push(relative_improvement(w.per_level_auroc[level], base));
        }
    }
    Ok(PairedImprovement {
        regime_tag: regime_tag.to_string(),
        per_level,
        pair_ids,
    })
}

/// Linear-interpolation quantile of sorted data (`h = (n − 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot summary with Tukey fences at 1.5 · IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let median = quantile_sorted(&sorted, 0.5);
        let q3 = quantile_sorted(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = |v: &&f64| **v >= lo_fence && **v <= hi_fence;
        let whisker_low = *sorted.iter().find(inside).unwrap_or(&q1);
        let whisker_high = *sorted.iter().rev().find(inside).unwrap_or(&q3);
        let outliers = sorted.iter().copied().filter(|v| !inside(&v)).collect();
        Some(Self {
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
            outliers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaImprovement {
    pub base_kappa: String,
    pub alt_kappa: String,
    /// Model id → per-level percent improvement of `alt` over `base`.
    pub per_model: BTreeMap<String, Vec<f64>>,
    pub per_level_summary: Vec<BoxSummary>,
}

/// Per-model, per-level relative improvement of one kappa over another.
/// Each side's reports must come from its own regenerated benchmark.
pub fn kappa_improvement(base_reports: &Reports, alt_reports: &Reports) -> Result<KappaImprovement, AnalysisError> {
    let base_keys: BTreeSet<&String> = base_reports.keys().collect();
    let alt_keys: BTreeSet<&String> = alt_reports.keys().collect();
    if base_keys != alt_keys {
        let diff = base_keys
            .symmetric_difference(&alt_keys)
            .map(|s| s.to_string())
            .collect();
        return Err(AnalysisError::ModelSetMismatch(diff));
    }
    let n_levels = level_count(base_reports.values().chain(alt_reports.values()))?;
    let mut per_model = BTreeMap::new();
    for (model, base) in base_reports {
        let alt = &alt_reports[model];
        let row = (0..n_levels)
            .map(|l| {
                let b = base.per_level_auroc[l];
                if b == 0.0 {
                    Err(AnalysisError::ZeroBaseline(model.clone()))
                } else {
                    Ok(relative_improvement(alt.per_level_auroc[l], b))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        per_model.insert(model.clone(), row);
    }
    let per_level_summary = (0..n_levels)
        .map(|l| {
            let column: Vec<f64> = per_model.values().map(|r| r[l]).collect();
            BoxSummary::from_values(&column).expect("non-empty model set")
        })
        .collect();
    let first = |r: &Reports| r.values().next().map(|x| x.kappa_id.clone()).unwrap_or_default();
    Ok(KappaImprovement {
        base_kappa: first(base_reports),
        alt_kappa: first(alt_reports),
        per_model,
        per_level_summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Accuracy,
    IdAuroc,
    NParams,
    InputSize,
    EmbeddingSize,
}

impl Factor {
    pub const ALL: [Factor; 5] = [
        Self::Accuracy,
        Self::IdAuroc,
        Self::NParams,
        Self::InputSize,
        Self::EmbeddingSize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::IdAuroc => "id_auroc",
            Self::NParams => "n_params",
            Self::InputSize => "input_size",
            Self::EmbeddingSize => "embedding_size",
        }
    }

    pub fn value(self, r: &ModelRecord) -> f64 {
        match self {
            Self::Accuracy => r.accuracy,
            Self::IdAuroc => r.id_auroc,
            Self::NParams => r.n_params as f64,
            Self::InputSize => r.input_size as f64,
            Self::EmbeddingSize => r.embedding_size as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelations {
    pub model_ids: Vec<String>,
    /// `rho[factor][level]`.
    pub rho: BTreeMap<Factor, Vec<f64>>,
}

/// Spearman correlation between each model factor and per-level AUROC.
///
/// With `top_accuracy_fraction = Some(f)` only the `ceil(f · n)` most accurate
/// evaluated models are used (ties broken by model id).
pub fn factor_correlations(
    registry: &Registry,
    reports: &Reports,
    top_accuracy_fraction: Option<f64>,
) -> Result<FactorCorrelations, AnalysisError> {
    let mut models: Vec<&ModelRecord> = registry
        .records()
        .filter(|r| reports.contains_key(&r.model_id))
        .collect();
    if let Some(f) = top_accuracy_fraction {
        models.sort_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then_with(|| a.model_id.cmp(&b.model_id))
        });
        let keep = ((models.len() as f64 * f.clamp(0.0, 1.0)).ceil() as usize).min(models.len());
        models.truncate(keep);
        models.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    }
    if models.len() < 3 {
        return Err(AnalysisError::InsufficientModels {
            needed: 3,
            got: models.len(),
        });
    }
    let n_levels = level_count(models.iter().map(|m| &reports[&m.model_id]))?;
    let mut rho = BTreeMap::new();
    for factor in Factor::ALL {
        let xs: Vec<f64> = models.iter().map(|m| factor.value(m)).collect();
        if xs.iter().all(|&x| x == xs[0]) {
            return Err(AnalysisError::ConstantFactor(factor.as_str().to_string()));
        }
        let row = (0..n_levels)
            .map(|l| {
                let ys: Vec<f64> = models.iter().map(|m| reports[&m.model_id].per_level_auroc[l]).collect();
                spearman(&xs, &ys).map_err(|e| match e {
                    MetricError::ConstantInput => AnalysisError::ConstantLevel(l),
                    other => other.into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rho.insert(factor, row);
    }
    Ok(FactorCorrelations {
        model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
        rho,
    })
}

/// `L × L` matrix of Spearman correlations between model rankings at each
/// pair of levels. Symmetric with an exact unit diagonal.
pub fn ranking_correlation_matrix(reports: &Reports) -> Result<Vec<Vec<f64>>, AnalysisError> {
    if reports.len() < 3 {
        return Err(AnalysisError::InsufficientModels {
            needed: 3,
            got: reports.len(),
        });
    }
    let n_levels = level_count(reports.values())?;
    let columns: Vec<Vec<f64>> = (0..n_levels)
        .map(|l| reports.values().map(|r| r.per_level_auroc[l]).collect())
        .collect();
    let mut matrix = vec![vec![0.0; n_levels]; n_levels];
    for i in 0..n_levels {
        if columns[i].iter().all(|&v| v == columns[i][0]) {
            return Err(AnalysisError::ConstantLevel(i));
        }
        matrix[i][i] = 1.0;
        for j in i + 1..n_levels {
            let rho = spearman(&columns[i], &columns[j]).map_err(|e| match e {
                MetricError::ConstantInput => AnalysisError::ConstantLevel(j),
                other => other.into(),
            })?;
            matrix[i][j] = rho;
            matrix[j][i] = rho;
        }
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpread {
    /// Model id → levels whose selected window contains the class.
    pub levels_by_model: BTreeMap<String, Vec<usize>>,
    pub min_level: Option<usize>,
    pub max_level: Option<usize>,
}

/// For each class, the severity levels it lands in for every model.
pub fn per_class_severity_spread(
    indices: &[SeverityIndex],
    group_size: usize,
    n_levels: usize,
) -> Result<BTreeMap<String, ClassSpread>, AnalysisError> {
    let first = indices.first().ok_or(AnalysisError::Empty)?;
    let universe: BTreeSet<&str> = first.entries.iter().map(|e| e.class_id.as_str()).collect();
    let mut spread: BTreeMap<String, ClassSpread> = universe
        .iter()
        .map(|c| {
            (
                c.to_string(),
                ClassSpread {
                    levels_by_model: BTreeMap::new(),
                    min_level: None,
                    max_level: None,
                },
            )
        })
        .collect();

    for index in indices {
        let classes: BTreeSet<&str> = index.entries.iter().map(|e| e.class_id.as_str()).collect();
        if classes != universe || classes.len() != index.entries.len() {
            return Err(AnalysisError::ClassUniverseMismatch(index.model_id.clone()));
        }
        let windows = select_severity_levels(index.len(), group_size, n_levels)?;
        for entry in spread.values_mut() {
            entry.levels_by_model.insert(index.model_id.clone(), Vec::new());
        }
        for (level, &w) in windows.iter().enumerate() {
            for e in &index.entries[w..w + group_size] {
                let s = spread.get_mut(&e.class_id).expect("class in universe");
                s.levels_by_model
                    .get_mut(&index.model_id)
                    .expect("model slot")
                    .push(level);
            }
        }
    }
    for s in spread.values_mut() {
        let all = s.levels_by_model.values().flatten();
        s.min_level = all.clone().min().copied();
        s.max_level = all.max().copied();
    }
    Ok(spread)
}

// CSV emitters. Headers are fixed and documented in the README.

pub const REGIME_CSV_HEADER: &str = "regime,level,mean_improvement_pct,n_pairs";
pub const REGIME_PAIRS_CSV_HEADER: &str = "regime,with_model,without_model,level,improvement_pct";
pub const KAPPA_CSV_HEADER: &str = "model,base_kappa,alt_kappa,level,improvement_pct";
pub const KAPPA_SUMMARY_CSV_HEADER: &str = "level,median,q1,q3,whisker_low,whisker_high,n_outliers,outliers";
pub const FACTOR_CSV_HEADER: &str = "factor,level,spearman,n_models";
pub const RANKING_CSV_HEADER: &str = "level_i,level_j,spearman";
pub const SPREAD_CSV_HEADER: &str = "class,model,levels,min_level,max_level";

impl PairedImprovement {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REGIME_CSV_HEADER}\n");
        let tag = csv_field(&self.regime_tag);
        for (level, mean) in self.mean_per_level().iter().enumerate() {
            out.push_str(&format!("{tag},{level},{mean},{}\n", self.pair_ids.len()));
        }
        out
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = format!("{REGIME_PAIRS_CSV_HEADER}\n");
        let tag = csv_field(&self.regime_tag);
        for (p, (with, without)) in self.pair_ids.iter().enumerate() {
            for (level, values) in self.per_level.iter().enumerate() {
                out.push_str(&format!(
                    "{tag},{},{},{level},{}\n",
                    csv_field(with),
                    csv_field(without),
                    values[p]
                ));
            }
        }
        out
    }
}

impl KappaImprovement {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{KAPPA_CSV_HEADER}\n");
        for (model, row) in &self.per_model {
            for (level, v) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{level},{v}\n",
                    csv_field(model),
                    csv_field(&self.base_kappa),
                    csv_field(&self.alt_kappa)
                ));
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{KAPPA_SUMMARY_CSV_HEADER}\n");
        for (level, s) in self.per_level_summary.iter().enumerate() {
            let outliers: Vec<String> = s.outliers.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{level},{},{},{},{},{},{},{}\n",
                s.median,
                s.q1,
                s.q3,
                s.whisker_low,
                s.whisker_high,
                s.outliers.len(),
                outliers.join(";")
            ));
        }
        out
    }
}

impl FactorCorrelations {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FACTOR_CSV_HEADER}\n");
        for (factor, row) in &self.rho {
            for (level, r) in row.iter().enumerate() {
                out.push_str(&format!("{},{level},{r},{}\n", factor.as_str(), self.model_ids.len()));
            }
        }
        out
    }
}

pub fn ranking_matrix_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = format!("{RANKING_CSV_HEADER}\n");
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out.push_str(&format!("{i},{j},{v}\n"));
        }
    }
    out
}

pub fn spread_csv(spread: &BTreeMap<String, ClassSpread>) -> String {
    let mut out = format!("{SPREAD_CSV_HEADER}\n");
    let fmt_opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for (class, s) in spread {
        for (model, levels) in &s.levels_by_model {
            let levels: Vec<String> = levels.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(class),
                csv_field(model),
                levels.join(";"),
                fmt_opt(s.min_level),
                fmt_opt(s.max_level)
            ));
        }
    }
    out
}
