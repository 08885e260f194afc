//! Command-line front end: one subcommand per pipeline stage.
//!
//! Every command computes all of its outputs in memory first and only then
//! writes them (via temp file + rename), so a failing run leaves no partial
//! files behind. All failures exit with status 2.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, Registry, Reports};
use crate::benchgen::{self, BenchmarkManifest, GenerateConfig, ScoreSource};
use crate::clgt;
use crate::metrics::{self, EvalReport};
use crate::provenance::Provenance;
use crate::scores::{self, KappaKind, KappaSpec, LogitTable, ScoreTable};
use crate::taxonomy::{self, FilterConfig, FilterReport, SampleSplit, TaxonomyGraph};

pub const CACHE_DIR_ENV: &str = "COOD_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "cood",
    version,
    about = "Generate and evaluate class-out-of-distribution benchmarks"
)]
pub struct Cli {
    /// Worker threads for internal parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Reject undeclared taxonomy nodes and unknown candidates.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter candidate OOD classes against the ID label set.
    Filter(FilterArgs),
    /// Build a severity-graded benchmark manifest for one (model, kappa).
    Generate(GenerateArgs),
    /// Evaluate per-level detection AUROC for a manifest.
    Eval(EvalArgs),
    /// Run a cross-model analysis over a registry and eval reports.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    /// Edge list, one `parent<TAB>child` per line.
    #[arg(long)]
    #[serde(skip)]
    pub taxonomy: PathBuf,
    /// Sample counts, one `class<TAB>count` per line.
    #[arg(long)]
    #[serde(skip)]
    pub counts: PathBuf,
    /// TOML filter configuration.
    #[arg(long)]
    #[serde(skip)]
    pub config: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaFlag {
    Softmax,
    MaxLogit,
    NegEntropy,
    Odin,
    McDropout,
    External,
}

impl From<KappaFlag> for KappaKind {
    fn from(k: KappaFlag) -> Self {
        match k {
            KappaFlag::Softmax => KappaKind::SoftmaxResponse,
            KappaFlag::MaxLogit => KappaKind::MaxLogit,
            KappaFlag::NegEntropy => KappaKind::NegEntropy,
            KappaFlag::Odin => KappaKind::Odin,
            KappaFlag::McDropout => KappaKind::McDropout,
            KappaFlag::External => KappaKind::External,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct KappaArgs {
    #[arg(long, value_enum, default_value_t = KappaFlag::Softmax)]
    pub kappa: KappaFlag,
    /// ODIN temperature.
    #[arg(long, default_value_t = scores::DEFAULT_ODIN_TEMPERATURE)]
    pub temperature: f64,
    /// ODIN input perturbation used when the logits were produced (recorded only).
    #[arg(long, default_value_t = scores::DEFAULT_ODIN_EPSILON)]
    pub epsilon: f64,
    /// MC dropout forward passes.
    #[arg(long, default_value_t = scores::DEFAULT_MC_PASSES)]
    pub passes: usize,
    /// Name recorded for external scores.
    #[arg(long)]
    pub kappa_id: Option<String>,
}

impl KappaArgs {
    fn spec(&self) -> Result<KappaSpec> {
        let spec = KappaSpec {
            kind: self.kappa.into(),
            temperature: self.temperature,
            epsilon: self.epsilon,
            passes: self.passes,
            external_id: self.kappa_id.clone(),
        };
        if self.kappa_id.is_some() && spec.kind != KappaKind::External {
            bail!("--kappa-id only applies to --kappa external");
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// OOD logits (or one-column external scores) in CLGT format.
    #[arg(long)]
    #[serde(skip)]
    pub scores: PathBuf,
    /// Filter report restricting the OOD classes; all table classes otherwise.
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
    /// TOML filter configuration supplying split sizes and seed.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model_id: String,
    #[command(flatten)]
    pub kappa: KappaArgs,
    #[arg(long, default_value_t = benchgen::DEFAULT_GROUP_SIZE)]
    pub group_size: usize,
    #[arg(long, default_value_t = benchgen::DEFAULT_LEVELS)]
    pub levels: usize,
    /// Overrides the configuration's split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub manifest: PathBuf,
    /// ID validation set logits (CLGT).
    #[arg(long)]
    #[serde(skip)]
    pub id_scores: PathBuf,
    /// OOD logits covering every test sample in the manifest (CLGT).
    #[arg(long)]
    #[serde(skip)]
    pub ood_scores: PathBuf,
    /// Inputs are one-column kappa scores rather than logits.
    #[arg(long)]
    pub precomputed: bool,
    /// JSON report output.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Optional flat CSV output.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    RegimeImprovement,
    KappaImprovement,
    FactorCorrelations,
    RankingCorrelation,
    SeveritySpread,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Model registry, JSON Lines.
    #[arg(long)]
    #[serde(skip)]
    pub registry: Option<PathBuf>,
    /// Directory of eval report JSON files.
    #[arg(long)]
    #[serde(skip)]
    pub reports: Option<PathBuf>,
    /// Directory of benchmark manifests (severity-spread).
    #[arg(long)]
    #[serde(skip)]
    pub manifests: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub analysis: AnalysisKind,
    /// Regime tag for regime-improvement.
    #[arg(long)]
    pub tag: Option<String>,
    /// Kappa whose reports are analysed.
    #[arg(long, default_value = "softmax-response")]
    pub kappa_id: String,
    #[arg(long, default_value = "softmax-response")]
    pub base_kappa: String,
    #[arg(long)]
    pub alt_kappa: Option<String>,
    /// Keep only this fraction of most accurate models (factor-correlations).
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command; used by the `cood` binary.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("building worker pool")?;
    let outputs = pool.install(|| match &cli.command {
        Command::Filter(a) => cmd_filter(a, cli.strict),
        Command::Generate(a) => cmd_generate(a, cli.strict),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
    })?;
    outputs.commit()
}

/// Files to write once every output has been computed.
#[derive(Default)]
struct Outputs {
    dirs: Vec<PathBuf>,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    fn commit(self) -> Result<()> {
        for d in &self.dirs {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let mut tmp = path.as_os_str().to_owned();
            tmp.push(format!(".tmp-{}", std::process::id()));
            let tmp = PathBuf::from(tmp);
            if let Err(e) = fs::write(&tmp, bytes) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: &Path) -> Result<(FilterConfig, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let cfg: FilterConfig = toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok((cfg, bytes))
}

/// Reads a CLGT file and its sidecar, returning the table and both raw inputs.
fn load_table(path: &Path) -> Result<(LogitTable, Vec<u8>, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let sidecar = read_bytes(&clgt::sidecar_path(path))?;
    let text = std::str::from_utf8(&sidecar).context("sidecar manifest is not UTF-8")?;
    let table = clgt::table_from_parts(&bytes, text).with_context(|| format!("loading {}", path.display()))?;
    Ok((table, bytes, sidecar))
}

fn cmd_filter(args: &FilterArgs, strict: bool) -> Result<Outputs> {
    let edges_bytes = read_bytes(&args.taxonomy)?;
    let counts_bytes = read_bytes(&args.counts)?;
    let (cfg, cfg_bytes) = load_config(&args.config)?;
    let edges = taxonomy::parse_edges(std::str::from_utf8(&edges_bytes)?)
        .with_context(|| format!("parsing {}", args.taxonomy.display()))?;
    let counts = taxonomy::parse_counts(std::str::from_utf8(&counts_bytes)?)
        .with_context(|| format!("parsing {}", args.counts.display()))?;
    let graph = TaxonomyGraph::load(edges, &counts, strict)?;
    let candidates: BTreeSet<String> = match &cfg.candidates {
        Some(c) => c.clone(),
        None => graph.nodes().map(str::to_string).collect(),
    };
    let report = taxonomy::filter_ood_classes(&graph, &candidates, &cfg, strict)?;

    #[derive(Serialize)]
    struct Params<'a> {
        args: &'a FilterArgs,
        strict: bool,
    }
    let provenance = Provenance::new("filter", &Params { args, strict }, cfg.seed)
        .with_input("taxonomy", &edges_bytes)
        .with_input("counts", &counts_bytes)
        .with_input("config", &cfg_bytes);
    let mut out = Outputs::default();
    out.add(&args.out, provenance.comment_block() + &report.to_tsv());
    Ok(out)
}

fn cache_file_name(model: &str, kappa: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!("{}.{}.scores.clgt", clean(model), clean(kappa))
}

fn cmd_generate(args: &GenerateArgs, strict: bool) -> Result<Outputs> {
    let kappa = args.kappa.spec()?;
    let (table, table_bytes, sidecar_bytes) = load_table(&args.scores)?;
    let (mut cfg, cfg_bytes) = match &args.config {
        Some(p) => load_config(p)?,
        None => (FilterConfig::default(), Vec::new()),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in table.manifest() {
        by_class.entry(&s.class_id).or_default().push(&s.sample_id);
    }
    let (admitted, report_bytes) = match &args.report {
        Some(p) => {
            let bytes = read_bytes(p)?;
            let report = FilterReport::from_tsv(std::str::from_utf8(&bytes)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            (report.admitted, bytes)
        }
        None => (by_class.keys().map(|c| c.to_string()).collect(), Vec::new()),
    };
    if strict {
        if let Some(c) = admitted.iter().find(|c| !by_class.contains_key(c.as_str())) {
            bail!("admitted class `{c}` has no samples in the score table");
        }
    }
    let admitted: BTreeSet<String> = admitted
        .into_iter()
        .filter(|c| by_class.contains_key(c.as_str()))
        .collect();

    let splits = admitted
        .par_iter()
        .map(|c| Ok((c.clone(), taxonomy::split_samples(&by_class[c.as_str()], &cfg, c)?)))
        .collect::<Result<BTreeMap<String, SampleSplit>>>()?;

    let gen_cfg = GenerateConfig {
        model_id: args.model_id.clone(),
        group_size: args.group_size,
        n_levels: args.levels,
        seed: cfg.seed,
    };
    let scores = scores::apply_kappa(&table, &kappa)?;
    let mut manifest =
        benchgen::generate_benchmark(ScoreSource::Scores(&scores), &kappa, &admitted, &splits, &gen_cfg)?;

    #[derive(Serialize)]
    struct Params<'a> {
        args: &'a GenerateArgs,
        strict: bool,
        n_est: usize,
        n_test: usize,
        min_samples: usize,
    }
    let params = Params {
        args,
        strict,
        n_est: cfg.n_est,
        n_test: cfg.n_test,
        min_samples: cfg.min_samples,
    };
    let mut provenance = Provenance::new("generate", &params, cfg.seed)
        .with_input("scores", &table_bytes)
        .with_input("scores_manifest", &sidecar_bytes);
    if args.report.is_some() {
        provenance = provenance.with_input("filter_report", &report_bytes);
    }
    if args.config.is_some() {
        provenance = provenance.with_input("config", &cfg_bytes);
    }
    manifest.provenance = Some(provenance);

    let mut out = Outputs::default();
    out.add(&args.out, manifest.to_json());
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        let dir = PathBuf::from(dir);
        let path = dir.join(cache_file_name(&args.model_id, &scores.kappa_id));
        let (bytes, text) = clgt::encode_scores(&scores);
        out.dirs.push(dir);
        out.add(clgt::sidecar_path(&path), text);
        out.add(path, bytes);
    }
    Ok(out)
}

fn to_scores(table: &LogitTable, manifest: &BenchmarkManifest, precomputed: bool) -> Result<ScoreTable> {
    if precomputed {
        if table.n_cols() != 1 || table.n_passes() != 1 {
            bail!("precomputed scores must be a single-pass, one-column table");
        }
        return Ok(ScoreTable::new(
            table.manifest().to_vec(),
            manifest.kappa_id.clone(),
            table.values().to_vec(),
        )?);
    }
    Ok(scores::apply_kappa(table, &manifest.kappa)?)
}

fn cmd_eval(args: &EvalArgs) -> Result<Outputs> {
    let manifest_bytes = read_bytes(&args.manifest)?;
    let manifest = BenchmarkManifest::from_json(std::str::from_utf8(&manifest_bytes)?)
        .with_context(|| format!("parsing {}", args.manifest.display()))?;
    let (id_table, id_bytes, id_sidecar) = load_table(&args.id_scores)?;
    let (ood_table, ood_bytes, ood_sidecar) = load_table(&args.ood_scores)?;
    let id_scores = to_scores(&id_table, &manifest, args.precomputed).context("ID scores")?;
    let ood_scores = to_scores(&ood_table, &manifest, args.precomputed).context("OOD scores")?;
    let mut report = metrics::evaluate_benchmark(&manifest, &id_scores, &ood_scores)?;
    report.provenance = Some(
        Provenance::new("eval", args, manifest.seed)
            .with_input("manifest", &manifest_bytes)
            .with_input("id_scores", &id_bytes)
            .with_input("id_scores_manifest", &id_sidecar)
            .with_input("ood_scores", &ood_bytes)
            .with_input("ood_scores_manifest", &ood_sidecar),
    );
    let mut out = Outputs::default();
    out.add(&args.out, report.to_json());
    if let Some(csv) = &args.csv {
        out.add(csv, report.to_csv());
    }
    Ok(out)
}

/// Sorted `*.json` files in `dir`.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Eval reports grouped by kappa id, then model id.
fn load_reports(dir: &Path, digests: &mut Vec<(String, Vec<u8>)>) -> Result<BTreeMap<String, Reports>> {
    let mut grouped: BTreeMap<String, Reports> = BTreeMap::new();
    for path in json_files(dir)? {
        let bytes = read_bytes(&path)?;
        let report = EvalReport::from_json(std::str::from_utf8(&bytes)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let slot = grouped.entry(report.kappa_id.clone()).or_default();
        if slot.contains_key(&report.model_id) {
            bail!(
                "duplicate report for model `{}`, kappa `{}`",
                report.model_id,
                report.kappa_id
            );
        }
        digests.push((format!("report:{}", file_name(&path)), bytes));
        slot.insert(report.model_id.clone(), report);
    }
    Ok(grouped)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<Outputs> {
    let need = |p: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        p.clone()
            .ok_or_else(|| anyhow!("--{flag} is required for this analysis"))
    };
    let mut inputs: Vec<(String, Vec<u8>)> = Vec::new();
    let load_registry = |inputs: &mut Vec<(String, Vec<u8>)>| -> Result<Registry> {
        let path = need(&args.registry, "registry")?;
        let bytes = read_bytes(&path)?;
        let registry = Registry::from_jsonl(std::str::from_utf8(&bytes)?)
            .map_err(|e| anyhow!("parsing {}: {e}", path.display()))?;
        inputs.push(("registry".into(), bytes));
        Ok(registry)
    };
    let kappa_reports = |grouped: &BTreeMap<String, Reports>, kappa: &str| -> Result<Reports> {
        grouped
            .get(kappa)
            .cloned()
            .ok_or_else(|| anyhow!("no reports for kappa `{kappa}`"))
    };

    let mut out = Outputs::default();
    out.dirs.push(args.out.clone());
    let dest = |name: &str| args.out.join(name);
    match args.analysis {
        AnalysisKind::RegimeImprovement => {
            let tag = args.tag.as_deref().ok_or_else(|| anyhow!("--tag is required"))?;
            let registry = load_registry(&mut inputs)?;
            let grouped = load_reports(&need(&args.reports, "reports")?, &mut inputs)?;
            let result = analysis::regime_improvement(&registry, &kappa_reports(&grouped, &args.kappa_id)?, tag)?;
            out.add(dest("regime_improvement.csv"), result.to_csv());
            out.add(dest("regime_improvement_pairs.csv"), result.pairs_csv());
        }
        AnalysisKind::KappaImprovement => {
            let alt = args
                .alt_kappa
                .as_deref()
                .ok_or_else(|| anyhow!("--alt-kappa is required"))?;
            let grouped = load_reports(&need(&args.reports, "reports")?, &mut inputs)?;
            let result = analysis::kappa_improvement(
                &kappa_reports(&grouped, &args.base_kappa)?,
                &kappa_reports(&grouped, alt)?,
            )?;
            out.add(dest("kappa_improvement.csv"), result.to_csv());
            out.add(dest("kappa_improvement_summary.csv"), result.summary_csv());
        }
        AnalysisKind::FactorCorrelations => {
            let registry = load_registry(&mut inputs)?;
            let grouped = load_reports(&need(&args.reports, "reports")?, &mut inputs)?;
            let result =
                analysis::factor_correlations(&registry, &kappa_reports(&grouped, &args.kappa_id)?, args.top_fraction)?;
            out.add(dest("factor_correlations.csv"), result.to_csv());
        }
        AnalysisKind::RankingCorrelation => {
            let grouped = load_reports(&need(&args.reports, "reports")?, &mut inputs)?;
            let matrix = analysis::ranking_correlation_matrix(&kappa_reports(&grouped, &args.kappa_id)?)?;
            out.add(dest("ranking_correlation.csv"), analysis::ranking_matrix_csv(&matrix));
        }
        AnalysisKind::SeveritySpread => {
            let dir = need(&args.manifests, "manifests")?;
            let mut indices = Vec::new();
            let mut shape = None;
            for path in json_files(&dir)? {
                let bytes = read_bytes(&path)?;
                let m = BenchmarkManifest::from_json(std::str::from_utf8(&bytes)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                match shape {
                    None => shape = Some((m.group_size, m.n_levels)),
                    Some(s) if s != (m.group_size, m.n_levels) => {
                        bail!(
                            "{}: group size / level count differ from other manifests",
                            path.display()
                        )
                    }
                    _ => {}
                }
                inputs.push((format!("manifest:{}", file_name(&path)), bytes));
                indices.push(m.severity_index());
            }
            let (group_size, n_levels) = shape.ok_or_else(|| anyhow!("no manifests in {}", dir.display()))?;
            let spread = analysis::per_class_severity_spread(&indices, group_size, n_levels)?;
            out.add(dest("severity_spread.csv"), analysis::spread_csv(&spread));
        }
    }

    let provenance = inputs
        .iter()
        .fold(Provenance::new("analyze", args, 0), |p, (role, bytes)| {
            p.with_input(role, bytes)
        });
    let mut json = serde_json::to_string_pretty(&provenance)?;
    json.push('\n');
    out.add(dest("provenance.json"), json);
    Ok(out)
}
