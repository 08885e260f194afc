//! Label taxonomy and OOD candidate filtering.
//!
//! The taxonomy is a DAG whose edges point from a hypernym (broader label) to
//! a hyponym (narrower label). Filtering removes every candidate that cannot
//! serve as a clean class-out-of-distribution label for a given set of
//! in-distribution classes, and records a single reason per rejected class.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("self-edge on class `{0}`")]
    SelfEdge(String),
    #[error("cycle detected in taxonomy (involving `{0}`)")]
    CycleDetected(String),
    #[error("edge references undeclared node `{0}`")]
    DanglingNode(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{class}` has {available} samples, {required} required")]
    InsufficientSamples {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("duplicate sample id `{sample}` in class `{class}`")]
    DuplicateSample { class: String, sample: String },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Immutable hypernym/hyponym DAG over opaque class identifiers.
#[derive(Debug, Clone)]
pub struct TaxonomyGraph {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    sample_counts: Vec<usize>,
    n_edges: usize,
}

impl TaxonomyGraph {
    /// Builds the graph from `(parent, child)` edges and per-class sample counts.
    ///
    /// Nodes are the keys of `counts`. In non-strict mode edge endpoints missing
    /// from `counts` are added with a sample count of zero; in strict mode they
    /// are rejected as dangling.
    pub fn load<P, C>(
        edges: impl IntoIterator<Item = (P, C)>,
        counts: &BTreeMap<String, usize>,
        strict: bool,
    ) -> Result<Self, TaxonomyError>
    where
        P: AsRef<str>,
        C: AsRef<str>,
    {
        let mut ids: Vec<String> = counts.keys().cloned().collect();
        let mut index: BTreeMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut edge_set = BTreeSet::new();

        for (parent, child) in edges {
            let (parent, child) = (parent.as_ref(), child.as_ref());
            if parent == child {
                return Err(TaxonomyError::SelfEdge(parent.to_string()));
            }
            let mut resolve = |id: &str| -> Result<usize, TaxonomyError> {
                if let Some(&i) = index.get(id) {
                    return Ok(i);
                }
                if strict {
                    return Err(TaxonomyError::DanglingNode(id.to_string()));
                }
                let i = ids.len();
                ids.push(id.to_string());
                index.insert(id.to_string(), i);
                Ok(i)
            };
            let p = resolve(parent)?;
            let c = resolve(child)?;
            edge_set.insert((p, c));
        }

        let n = ids.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edge_set {
            children[p].push(c);
            parents[c].push(p);
        }
        let sample_counts = ids.iter().map(|id| counts.get(id).copied().unwrap_or(0)).collect();

        let graph = Self {
            ids,
            index,
            parents,
            children,
            sample_counts,
            n_edges: edge_set.len(),
        };
        graph.check_acyclic()?;
        Ok(graph)
    }

    // Kahn's algorithm; any node left with nonzero in-degree sits on a cycle.
    fn check_acyclic(&self) -> Result<(), TaxonomyError> {
        let mut in_degree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.ids.len()).filter(|&i| in_degree[i] == 0).collect();
        let mut visited = 0;
        while let Some(node) = queue.pop_front() {
            visited += 1;
            for &child in &self.children[node] {
                in_degree[child] -= 1;
                if in_degree[child] == 0 {
                    queue.push_back(child);
                }
            }
        }
        if visited == self.ids.len() {
            return Ok(());
        }
        let culprit = (0..self.ids.len())
            .filter(|&i| in_degree[i] > 0)
            .map(|i| self.ids[i].as_str())
            .min()
            .unwrap_or_default();
        Err(TaxonomyError::CycleDetected(culprit.to_string()))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }

    pub fn contains(&self, class: &str) -> bool {
        self.index.contains_key(class)
    }

    /// All class ids, sorted.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn sample_count(&self, class: &str) -> Option<usize> {
        self.index.get(class).map(|&i| self.sample_counts[i])
    }

    fn node(&self, class: &str) -> Result<usize, TaxonomyError> {
        self.index
            .get(class)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownClass(class.to_string()))
    }

    fn reach(&self, starts: &[usize], up: bool) -> BTreeSet<usize> {
        let adjacency = if up { &self.parents } else { &self.children };
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = starts.iter().flat_map(|&s| adjacency[s].iter().copied()).collect();
        while let Some(node) = stack.pop() {
            if seen.insert(node) {
                stack.extend(adjacency[node].iter().copied());
            }
        }
        seen
    }

    fn names(&self, nodes: BTreeSet<usize>) -> BTreeSet<String> {
        nodes.into_iter().map(|i| self.ids[i].clone()).collect()
    }

    /// Transitive hypernyms and hyponyms of `class`, excluding the class itself.
    pub fn relatives(&self, class: &str) -> Result<(BTreeSet<String>, BTreeSet<String>), TaxonomyError> {
        let node = self.node(class)?;
        let ancestors = self.reach(&[node], true);
        let descendants = self.reach(&[node], false);
        Ok((self.names(ancestors), self.names(descendants)))
    }
}

/// Reason a candidate class was rejected, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    InId,
    HypernymOfId,
    HyponymOfId,
    PartWhole,
    Duplicate,
    TooFewSamples,
    MimicDisabled,
    TwinDisabled,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 8] = [
        Self::InId,
        Self::HypernymOfId,
        Self::HyponymOfId,
        Self::PartWhole,
        Self::Duplicate,
        Self::TooFewSamples,
        Self::MimicDisabled,
        Self::TwinDisabled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InId => "in-id",
            Self::HypernymOfId => "hypernym-of-id",
            Self::HyponymOfId => "hyponym-of-id",
            Self::PartWhole => "part-whole",
            Self::Duplicate => "duplicate",
            Self::TooFewSamples => "too-few-samples",
            Self::MimicDisabled => "mimic-disabled",
            Self::TwinDisabled => "twin-disabled",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rejection reason `{s}`"))
    }
}

fn default_min_samples() -> usize {
    200
}
fn default_n_est() -> usize {
    150
}
fn default_n_test() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// Filtering and splitting parameters. Deserializable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub id_classes: BTreeSet<String>,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    #[serde(default = "default_n_est")]
    pub n_est: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub part_whole_exclusions: BTreeSet<String>,
    #[serde(default)]
    pub duplicate_exclusions: BTreeSet<String>,
    #[serde(default = "default_true")]
    pub keep_animal_mimics: bool,
    #[serde(default = "default_true")]
    pub keep_artifact_twins: bool,
    #[serde(default)]
    pub mimic_list: BTreeSet<String>,
    #[serde(default)]
    pub twin_list: BTreeSet<String>,
    /// Explicit candidate set; when absent every taxonomy node is a candidate.
    #[serde(default)]
    pub candidates: Option<BTreeSet<String>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            id_classes: BTreeSet::new(),
            min_samples: default_min_samples(),
            n_est: default_n_est(),
            n_test: default_n_test(),
            part_whole_exclusions: BTreeSet::new(),
            duplicate_exclusions: BTreeSet::new(),
            keep_animal_mimics: true,
            keep_artifact_twins: true,
            mimic_list: BTreeSet::new(),
            twin_list: BTreeSet::new(),
            candidates: None,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.n_est == 0 || self.n_test == 0 {
            return Err(TaxonomyError::InvalidConfig("n_est and n_test must be positive".into()));
        }
        if self.n_est + self.n_test > self.min_samples {
            return Err(TaxonomyError::InvalidConfig(format!(
                "n_est + n_test = {} exceeds min_samples = {}",
                self.n_est + self.n_test,
                self.min_samples
            )));
        }
        if let Some(c) = self
            .id_classes
            .iter()
            .find(|c| self.mimic_list.contains(*c) || self.twin_list.contains(*c))
        {
            return Err(TaxonomyError::InvalidConfig(format!(
                "ID class `{c}` also listed as mimic/twin"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub admitted: BTreeSet<String>,
    pub rejected: BTreeMap<String, RejectionReason>,
}

impl FilterReport {
    /// Line-delimited `class<TAB>status<TAB>reason` records, sorted by class.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(&str, &str, &str)> = self
            .admitted
            .iter()
            .map(|c| (c.as_str(), "admitted", "-"))
            .chain(self.rejected.iter().map(|(c, r)| (c.as_str(), "rejected", r.as_str())))
            .collect();
        rows.sort();
        rows.iter().map(|(c, s, r)| format!("{c}\t{s}\t{r}\n")).collect()
    }

    /// Parses the TSV form. Lines starting with `#` are ignored.
    pub fn from_tsv(text: &str) -> Result<Self, TaxonomyError> {
        let mut report = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |msg: String| TaxonomyError::Parse { line: line_no, msg };
            let [class, status, reason] = fields[..] else {
                return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
            };
            let fresh = !report.admitted.contains(class) && !report.rejected.contains_key(class);
            if !fresh {
                return Err(parse_err(format!("class `{class}` listed twice")));
            }
            match (status, reason) {
                ("admitted", "-") => {
                    report.admitted.insert(class.to_string());
                }
                ("rejected", r) => {
                    let reason = r.parse().map_err(parse_err)?;
                    report.rejected.insert(class.to_string(), reason);
                }
                _ => return Err(parse_err(format!("bad status/reason `{status}`/`{reason}`"))),
            }
        }
        Ok(report)
    }
}

/// Applies the filtering rules to `candidates` and returns one verdict per class.
///
/// Rules are checked in the order of [`RejectionReason`]; the first one that
/// fires is recorded. In strict mode unknown candidates are an error, otherwise
/// they have no relatives and a sample count of zero.
pub fn filter_ood_classes(
    graph: &TaxonomyGraph,
    candidates: &BTreeSet<String>,
    cfg: &FilterConfig,
    strict: bool,
) -> Result<FilterReport, TaxonomyError> {
    cfg.validate()?;
    let id_nodes = cfg
        .id_classes
        .iter()
        .map(|c| graph.node(c))
        .collect::<Result<Vec<_>, _>>()?;
    let id_ancestors = graph.reach(&id_nodes, true);
    let id_descendants = graph.reach(&id_nodes, false);

    let mut report = FilterReport::default();
    for class in candidates {
        let node = match graph.index.get(class) {
            Some(&n) => Some(n),
            None if strict => return Err(TaxonomyError::UnknownClass(class.clone())),
            None => None,
        };
        let count = node.map_or(0, |n| graph.sample_counts[n]);
        let reason = if cfg.id_classes.contains(class) {
            Some(RejectionReason::InId)
        } else if node.is_some_and(|n| id_ancestors.contains(&n)) {
            Some(RejectionReason::HypernymOfId)
        } else if node.is_some_and(|n| id_descendants.contains(&n)) {
            Some(RejectionReason::HyponymOfId)
        } else if cfg.part_whole_exclusions.contains(class) {
            Some(RejectionReason::PartWhole)
        } else if cfg.duplicate_exclusions.contains(class) {
            Some(RejectionReason::Duplicate)
        } else if count < cfg.min_samples {
            Some(RejectionReason::TooFewSamples)
        } else if !cfg.keep_animal_mimics && cfg.mimic_list.contains(class) {
            Some(RejectionReason::MimicDisabled)
        } else if !cfg.keep_artifact_twins && cfg.twin_list.contains(class) {
            Some(RejectionReason::TwinDisabled)
        } else {
            None
        };
        match reason {
            Some(r) => {
                report.rejected.insert(class.clone(), r);
            }
            None => {
                report.admitted.insert(class.clone());
            }
        }
    }
    Ok(report)
}

/// Per-class estimation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub class_id: String,
    pub est_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

fn shuffle_key(seed: u64, class_id: &str, sample_id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((class_id.len() as u64).to_le_bytes());
    hasher.update(class_id.as_bytes());
    hasher.update(sample_id.as_bytes());
    hasher.finalize().into()
}

/// Deterministically shuffles `sample_ids` and takes `n_est` estimation and
/// `n_test` test samples; the rest are discarded.
///
/// Each sample's position is decided by a keyed hash of `(seed, class_id,
/// sample_id)`, so the split of one class never depends on other classes,
/// and appending samples to a class only perturbs its split where the new
/// samples sort in.
pub fn split_samples<S: AsRef<str>>(
    sample_ids: &[S],
    cfg: &FilterConfig,
    class_id: &str,
) -> Result<SampleSplit, TaxonomyError> {
    if sample_ids.len() < cfg.min_samples || sample_ids.len() < cfg.n_est + cfg.n_test {
        return Err(TaxonomyError::InsufficientSamples {
            class: class_id.to_string(),
            available: sample_ids.len(),
            required: cfg.min_samples.max(cfg.n_est + cfg.n_test),
        });
    }
    let mut keyed: Vec<([u8; 32], &str)> = sample_ids
        .iter()
        .map(|s| (shuffle_key(cfg.seed, class_id, s.as_ref()), s.as_ref()))
        .collect();
    keyed.sort_unstable();
    if let Some(w) = keyed.windows(2).find(|w| w[0].1 == w[1].1) {
        return Err(TaxonomyError::DuplicateSample {
            class: class_id.to_string(),
            sample: w[0].1.to_string(),
        });
    }
    let mut ordered = keyed.into_iter().map(|(_, s)| s.to_string());
    let est_ids = ordered.by_ref().take(cfg.n_est).collect();
    let test_ids = ordered.take(cfg.n_test).collect();
    Ok(SampleSplit {
        class_id: class_id.to_string(),
        est_ids,
        test_ids,
        seed: cfg.seed,
    })
}

/// Parses `parent<TAB>child` edge lines. Blank lines and `#` comments are skipped.
pub fn parse_edges(text: &str) -> Result<Vec<(String, String)>, TaxonomyError> {
    parse_pairs(text)
}

/// Parses `class<TAB>count` lines.
pub fn parse_counts(text: &str) -> Result<BTreeMap<String, usize>, TaxonomyError> {
    let mut counts = BTreeMap::new();
    for (line, (class, count)) in parse_pairs_numbered(text)? {
        let count = count.parse().map_err(|_| TaxonomyError::Parse {
            line,
            msg: format!("bad count `{count}`"),
        })?;
        if counts.insert(class.clone(), count).is_some() {
            return Err(TaxonomyError::Parse {
                line,
                msg: format!("class `{class}` listed twice"),
            });
        }
    }
    Ok(counts)
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, TaxonomyError> {
    Ok(parse_pairs_numbered(text)?.into_iter().map(|(_, p)| p).collect())
}

type NumberedPair = (usize, (String, String));

fn parse_pairs_numbered(text: &str) -> Result<Vec<NumberedPair>, TaxonomyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>()[..] {
            [a, b] if !a.is_empty() && !b.is_empty() => out.push((i + 1, (a.to_string(), b.to_string()))),
            _ => {
                return Err(TaxonomyError::Parse {
                    line: i + 1,
                    msg: "expected two non-empty tab-separated fields".into(),
                })
            }
        }
    }
    Ok(out)
}
