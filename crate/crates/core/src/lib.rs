//! Model-specific class-out-of-distribution (C-OOD) benchmarks.
//!
//! The pipeline runs in four stages, each usable on its own:
//!
//! 1. [`taxonomy`] filters candidate OOD labels against the in-distribution
//!    label set and splits each admitted class into estimation and test samples.
//! 2. [`scores`] turns logits into scalar confidence values (softmax response,
//!    max-logit, negative entropy, ODIN, MC dropout) or accepts external scores.
//! 3. [`benchgen`] ranks OOD classes by how confidently the model scores them
//!    and picks 11 severity levels from a sliding window over that ranking.
//! 4. [`metrics`] evaluates detection AUROC per level, and [`analysis`] compares
//!    many models' reports.
//!
//! [`clgt`] reads and writes the binary logit container, and [`cli`] backs the
//! `cood` binary.

pub mod analysis;
pub mod benchgen;
pub mod clgt;
pub mod cli;
pub mod metrics;
pub mod provenance;
pub mod scores;
pub mod taxonomy;

pub use analysis::{ModelRecord, Registry};
pub use benchgen::{generate_benchmark, BenchmarkManifest, GenerateConfig, ScoreSource, SeverityIndex};
pub use metrics::{auroc, evaluate_benchmark, spearman, EvalReport};
pub use scores::{apply_kappa, KappaKind, KappaSpec, LogitTable, SampleRef, ScoreTable};
pub use taxonomy::{filter_ood_classes, split_samples, FilterConfig, FilterReport, TaxonomyGraph};
