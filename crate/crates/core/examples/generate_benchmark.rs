// Builds severity levels from synthetic two-class logits: 40 OOD classes,
// groups of 8, 11 levels from easiest to hardest.
//
//     cargo run --example generate_benchmark

use std::collections::{BTreeMap, BTreeSet};

use cood_bench::benchgen::{generate_benchmark, BenchmarkManifest, GenerateConfig, ScoreSource};
use cood_bench::scores::{KappaKind, KappaSpec, LogitTable, SampleRef};
use cood_bench::taxonomy::{split_samples, FilterConfig};

pub fn run_example() -> anyhow::Result<BenchmarkManifest> {
    let per_class = 12;
    let mut manifest = Vec::new();
    let mut logits = Vec::new();
    for c in 0..40 {
        let class = format!("class{c:02}");
        for s in 0..per_class {
            manifest.push(SampleRef::new(format!("{class}/{s:03}.jpg"), &class));
            // classes with a larger margin look more like ID data
            let margin = ((c * 7) % 40) as f64 / 8.0 + (s % 3) as f64 * 0.1;
            logits.extend([margin, 0.0]);
        }
    }
    let table = LogitTable::new(manifest, 2, 1, logits)?;

    let cfg = FilterConfig {
        min_samples: per_class,
        n_est: 8,
        n_test: 4,
        seed: 42,
        ..FilterConfig::default()
    };
    let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in table.manifest() {
        by_class
            .entry(s.class_id.clone())
            .or_default()
            .push(s.sample_id.clone());
    }
    let splits = by_class
        .iter()
        .map(|(c, ids)| Ok((c.clone(), split_samples(ids.as_slice(), &cfg, c)?)))
        .collect::<anyhow::Result<BTreeMap<_, _>>>()?;
    let admitted: BTreeSet<String> = by_class.keys().cloned().collect();

    let gen = GenerateConfig {
        group_size: 8,
        seed: 42,
        ..GenerateConfig::new("toy-model")
    };
    let bench = generate_benchmark(
        ScoreSource::Logits(&table),
        &KappaSpec::new(KappaKind::SoftmaxResponse),
        &admitted,
        &splits,
        &gen,
    )?;
    for level in &bench.levels {
        println!(
            "level {:>2}  window {:>2}  severity {:.4}  first class {}",
            level.level, level.window_index, level.severity, level.class_ids[0]
        );
    }
    Ok(bench)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
