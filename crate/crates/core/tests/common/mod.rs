//! Fixtures and brute-force oracles shared by the integration tests.
//!
//! Oracles here deliberately avoid the library's own rank/sort code paths.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cood_bench::benchgen::{generate_benchmark, BenchmarkManifest, GenerateConfig, ScoreSource};
use cood_bench::scores::{KappaKind, KappaSpec, LogitTable, SampleRef, ScoreTable};
use cood_bench::taxonomy::{split_samples, FilterConfig, SampleSplit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pairwise win fraction with ties counting one half.
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in id {
        for b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() as f64 * ood.len() as f64)
}

/// Average rank by counting: `#less + (#equal + 1) / 2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Insertion sort, independent of `slice::sort`.
pub fn insertion_sorted(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let pos = out.iter().position(|&w| w > v).unwrap_or(out.len());
        out.insert(pos, v);
    }
    out
}

/// Values drawn from a small grid so that ties are frequent.
pub fn tied_values(rng: &mut ChaCha8Rng, len: usize, grid: u32) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0..grid) as f64 * 0.125 - 1.0).collect()
}

pub fn tie_fraction(values: &[f64]) -> f64 {
    let tied = values
        .iter()
        .filter(|v| values.iter().filter(|w| w == v).count() > 1)
        .count();
    tied as f64 / values.len() as f64
}

/// 13 OOD classes `ood_00..ood_12`, 5 samples each, two-column logits whose
/// max-logit is `k / 4` for class `k`. Classes are listed in reverse order so
/// the manifest order differs from severity order.
pub fn thirteen_class_table() -> LogitTable {
    let mut manifest = Vec::new();
    let mut values = Vec::new();
    for k in (0..13).rev() {
        for s in 0..5 {
            manifest.push(SampleRef::new(format!("ood_{k:02}_img{s}"), format!("ood_{k:02}")));
            values.extend_from_slice(&[k as f64 / 4.0, -1.0]);
        }
    }
    LogitTable::new(manifest, 2, 1, values).unwrap()
}

pub fn thirteen_class_config() -> FilterConfig {
    FilterConfig {
        min_samples: 5,
        n_est: 3,
        n_test: 2,
        seed: 7,
        ..FilterConfig::default()
    }
}

pub fn splits_for(
    manifest: &[SampleRef],
    classes: &BTreeSet<String>,
    cfg: &FilterConfig,
) -> BTreeMap<String, SampleSplit> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in manifest {
        by_class.entry(&s.class_id).or_default().push(&s.sample_id);
    }
    classes
        .iter()
        .map(|c| (c.clone(), split_samples(&by_class[c.as_str()], cfg, c).unwrap()))
        .collect()
}

pub fn thirteen_class_manifest() -> BenchmarkManifest {
    let table = thirteen_class_table();
    let cfg = thirteen_class_config();
    let classes: BTreeSet<String> = table.manifest().iter().map(|s| s.class_id.clone()).collect();
    let splits = splits_for(table.manifest(), &classes, &cfg);
    let gen = GenerateConfig {
        group_size: 3,
        seed: cfg.seed,
        ..GenerateConfig::new("toy-13")
    };
    generate_benchmark(
        ScoreSource::Logits(&table),
        &KappaSpec::new(KappaKind::MaxLogit),
        &classes,
        &splits,
        &gen,
    )
    .unwrap()
}

/// Synthetic Gaussian world: OOD class `c` has scores `N(mu_c, 1)` with
/// `mu_c` evenly spaced over `[-3, 0]`; ID scores are `N(0, 1)`.
pub struct GaussianWorld {
    pub mus: BTreeMap<String, f64>,
    pub ood: ScoreTable,
    pub id: ScoreTable,
    pub splits: BTreeMap<String, SampleSplit>,
}

pub const GAUSSIAN_KAPPA: &str = "gaussian";

pub fn gaussian_world(n_classes: usize, per_class: usize, n_id: usize, seed: u64) -> GaussianWorld {
    let mut r = rng(seed);
    let mut mus = BTreeMap::new();
    let mut manifest = Vec::with_capacity(n_classes * per_class);
    let mut values = Vec::with_capacity(n_classes * per_class);
    for c in 1..=n_classes {
        let mu = -3.0 + 3.0 * (c - 1) as f64 / (n_classes - 1) as f64;
        let class = format!("ood{c:05}");
        let dist = Normal::new(mu, 1.0).unwrap();
        for s in 0..per_class {
            manifest.push(SampleRef::new(format!("{class}_{s:04}"), class.clone()));
            values.push(dist.sample(&mut r));
        }
        mus.insert(class, mu);
    }
    let ood = ScoreTable::new(manifest, GAUSSIAN_KAPPA, values).unwrap();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let id = ScoreTable::new(
        (0..n_id)
            .map(|i| SampleRef::new(format!("val{i:06}"), format!("id{:04}", i % 1000)))
            .collect(),
        GAUSSIAN_KAPPA,
        (0..n_id).map(|_| std_normal.sample(&mut r)).collect(),
    )
    .unwrap();
    let classes: BTreeSet<String> = mus.keys().cloned().collect();
    let splits = splits_for(
        &ood.manifest,
        &classes,
        &FilterConfig {
            seed,
            ..FilterConfig::default()
        },
    );
    GaussianWorld { mus, ood, id, splits }
}

pub fn gaussian_kappa() -> KappaSpec {
    KappaSpec {
        external_id: Some(GAUSSIAN_KAPPA.into()),
        ..KappaSpec::new(KappaKind::External)
    }
}

/// Input files for exercising every `cood` subcommand.
pub struct CliInputs {
    pub edges: PathBuf,
    pub counts: PathBuf,
    pub filter_config: PathBuf,
    pub gen_config: PathBuf,
    pub ood_logits: PathBuf,
    pub id_logits: PathBuf,
    pub registry: PathBuf,
    pub reports: PathBuf,
    pub manifests: PathBuf,
}

fn eval_report(model: &str, kappa: &str, levels: Vec<f64>) -> cood_bench::EvalReport {
    cood_bench::EvalReport {
        model_id: model.into(),
        kappa_id: kappa.into(),
        mean_auroc: levels.iter().sum::<f64>() / levels.len() as f64,
        counts: vec![
            cood_bench::metrics::LevelCounts {
                n_id: 50_000,
                n_ood: 50_000
            };
            levels.len()
        ],
        per_level_auroc: levels,
        provenance: None,
    }
}

pub fn registry_records() -> Vec<cood_bench::ModelRecord> {
    let spec: [(&str, &str, &[&str], f64); 6] = [
        ("resnet50", "resnet50", &[], 0.761),
        ("resnet50_kd", "resnet50", &["distilled"], 0.795),
        ("vit_b16", "vit_b16", &[], 0.811),
        ("vit_b16_21k", "vit_b16", &["pretrain21k"], 0.845),
        ("deit_s", "deit_s", &[], 0.798),
        ("deit_s_kd", "deit_s", &["distilled"], 0.812),
    ];
    spec.iter()
        .enumerate()
        .map(|(i, (id, key, tags, acc))| cood_bench::ModelRecord {
            model_id: id.to_string(),
            architecture_family: key.split('_').next().unwrap().to_string(),
            n_params: 20_000_000 + 7_000_000 * ((i * 5) % 6) as u64,
            input_size: [224, 224, 384, 224, 288, 224][i],
            embedding_size: [2048, 2048, 768, 768, 384, 384][i],
            accuracy: *acc,
            id_auroc: 0.84 + 0.007 * ((i * 4) % 6) as f64,
            regime_tags: tags.iter().map(|t| t.to_string()).collect(),
            comparison_key: key.to_string(),
        })
        .collect()
}

/// Per-level AUROC for the registry models: decreasing in level, roughly
/// increasing in accuracy, with a per-model wobble so rankings shift.
pub fn synthetic_levels(model_index: usize, accuracy: f64, kappa_shift: f64) -> Vec<f64> {
    (0..11)
        .map(|l| {
            let wobble = 0.004 * (((model_index * 7 + l * 3) % 5) as f64 - 2.0);
            (0.95 - 0.035 * l as f64 + 0.3 * (accuracy - 0.8) + wobble + kappa_shift * l as f64 / 10.0).clamp(0.01, 1.0)
        })
        .collect()
}

pub fn write_cli_inputs(dir: &Path) -> CliInputs {
    use cood_bench::clgt::{write_table, DType};
    use std::fs;

    let copy = |name: &str| {
        let dst = dir.join(name);
        fs::copy(fixture(&format!("taxonomy/{name}")), &dst).unwrap();
        dst
    };
    let edges = copy("edges.tsv");
    let counts = copy("counts.tsv");
    let filter_config = copy("filter.toml");

    let gen_config = dir.join("gen.toml");
    fs::write(&gen_config, "min_samples = 5\nn_est = 3\nn_test = 2\nseed = 7\n").unwrap();

    let ood_logits = dir.join("ood.clgt");
    write_table(&ood_logits, &thirteen_class_table(), DType::F32).unwrap();

    let id_manifest: Vec<SampleRef> = (0..40)
        .map(|i| SampleRef::new(format!("val{i:03}"), format!("id{}", i % 4)))
        .collect();
    let id_values: Vec<f64> = (0..40).flat_map(|i| [(i % 13) as f64 / 4.0 + 0.125, -1.0]).collect();
    let id_logits = dir.join("id.clgt");
    write_table(
        &id_logits,
        &LogitTable::new(id_manifest, 2, 1, id_values).unwrap(),
        DType::F32,
    )
    .unwrap();

    let records = registry_records();
    let registry = dir.join("registry.jsonl");
    fs::write(
        &registry,
        cood_bench::Registry::new(records.clone()).unwrap().to_jsonl(),
    )
    .unwrap();

    let reports = dir.join("reports");
    fs::create_dir_all(&reports).unwrap();
    for (i, r) in records.iter().enumerate() {
        for (kappa, shift) in [("softmax-response", 0.0), ("odin", 0.01 * (i as f64 - 2.5))] {
            let rep = eval_report(&r.model_id, kappa, synthetic_levels(i, r.accuracy, shift));
            fs::write(reports.join(format!("{}.{kappa}.json", r.model_id)), rep.to_json()).unwrap();
        }
    }

    let manifests = dir.join("manifests");
    fs::create_dir_all(&manifests).unwrap();
    for model in ["a", "b"] {
        let mut m = thirteen_class_manifest();
        m.model_id = model.into();
        if model == "b" {
            m.severity_index.reverse();
        }
        fs::write(manifests.join(format!("{model}.json")), m.to_json()).unwrap();
    }

    CliInputs {
        edges,
        counts,
        filter_config,
        gen_config,
        ood_logits,
        id_logits,
        registry,
        reports,
        manifests,
    }
}

pub fn cood(args: &[&std::ffi::OsStr]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_cood"))
        .args(args)
        .env_remove("COOD_CACHE_DIR")
        .output()
        .expect("spawn cood")
}

/// Argument lists for one run of every subcommand, writing under `out`.
pub fn all_commands(inputs: &CliInputs, out: &Path) -> Vec<(String, Vec<std::ffi::OsString>)> {
    let p = |x: &Path| x.as_os_str().to_owned();
    let s = |x: &str| std::ffi::OsString::from(x);
    let manifest = out.join("manifest.json");
    let mut cmds = vec![
        (
            "filter".to_string(),
            vec![
                s("filter"),
                s("--taxonomy"),
                p(&inputs.edges),
                s("--counts"),
                p(&inputs.counts),
                s("--config"),
                p(&inputs.filter_config),
                s("--out"),
                p(&out.join("filter.tsv")),
            ],
        ),
        (
            "generate".to_string(),
            vec![
                s("generate"),
                s("--scores"),
                p(&inputs.ood_logits),
                s("--config"),
                p(&inputs.gen_config),
                s("--model-id"),
                s("toy-13"),
                s("--kappa"),
                s("max-logit"),
                s("--group-size"),
                s("3"),
                s("--out"),
                p(&manifest),
            ],
        ),
        (
            "eval".to_string(),
            vec![
                s("eval"),
                s("--manifest"),
                p(&manifest),
                s("--id-scores"),
                p(&inputs.id_logits),
                s("--ood-scores"),
                p(&inputs.ood_logits),
                s("--out"),
                p(&out.join("eval.json")),
                s("--csv"),
                p(&out.join("eval.csv")),
            ],
        ),
    ];
    let analyses: [(&str, &[&str]); 5] = [
        ("regime-improvement", &["--tag", "distilled"]),
        ("kappa-improvement", &["--alt-kappa", "odin"]),
        ("factor-correlations", &[]),
        ("ranking-correlation", &[]),
        ("severity-spread", &[]),
    ];
    for (name, extra) in analyses {
        let mut args = vec![
            s("analyze"),
            s("--analysis"),
            s(name),
            s("--registry"),
            p(&inputs.registry),
            s("--reports"),
            p(&inputs.reports),
            s("--manifests"),
            p(&inputs.manifests),
            s("--out"),
            p(&out.join(format!("analyze-{name}"))),
        ];
        args.extend(extra.iter().map(|e| s(e)));
        cmds.push((format!("analyze {name}"), args));
    }
    cmds
}
