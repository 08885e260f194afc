// Gaussian sanity check: OOD class c has scores N(mu_c, 1), ID scores are
// N(0, 1), so the AUROC of a level should sit near Phi(-mean_mu / sqrt 2).
//
//     cargo run --release --example evaluate_gaussian

use std::collections::{BTreeMap, BTreeSet};

use cood_bench::benchgen::{generate_benchmark, GenerateConfig, ScoreSource};
use cood_bench::metrics::{evaluate_benchmark, EvalReport};
use cood_bench::scores::{KappaKind, KappaSpec, SampleRef, ScoreTable};
use cood_bench::taxonomy::{split_samples, FilterConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as Gauss};

pub fn run_example() -> anyhow::Result<EvalReport> {
    let (n_classes, per_class, n_id) = (200, 200, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mus = BTreeMap::new();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for c in 0..n_classes {
        let mu = -3.0 + 3.0 * c as f64 / (n_classes - 1) as f64;
        let class = format!("ood{c:03}");
        let dist = Normal::new(mu, 1.0)?;
        for s in 0..per_class {
            rows.push(SampleRef::new(format!("{class}_{s}"), &class));
            values.push(dist.sample(&mut rng));
        }
        mus.insert(class, mu);
    }
    let ood = ScoreTable::new(rows, "gaussian", values)?;
    let std = Normal::new(0.0, 1.0)?;
    let id = ScoreTable::new(
        (0..n_id).map(|i| SampleRef::new(format!("val{i}"), "id")).collect(),
        "gaussian",
        (0..n_id).map(|_| std.sample(&mut rng)).collect(),
    )?;

    let cfg = FilterConfig::default();
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in &ood.manifest {
        by_class.entry(&s.class_id).or_default().push(&s.sample_id);
    }
    let splits = by_class
        .iter()
        .map(|(c, ids)| Ok((c.to_string(), split_samples(ids.as_slice(), &cfg, c)?)))
        .collect::<anyhow::Result<BTreeMap<_, _>>>()?;
    let admitted: BTreeSet<String> = mus.keys().cloned().collect();

    let kappa = KappaSpec {
        external_id: Some("gaussian".into()),
        ..KappaSpec::new(KappaKind::External)
    };
    let gen = GenerateConfig {
        group_size: 50,
        ..GenerateConfig::new("gaussian")
    };
    let bench = generate_benchmark(ScoreSource::Scores(&ood), &kappa, &admitted, &splits, &gen)?;
    let report = evaluate_benchmark(&bench, &id, &ood)?;

    let phi = Gauss::new(0.0, 1.0)?;
    println!("level  auroc   closed-form");
    for (level, auroc) in bench.levels.iter().zip(&report.per_level_auroc) {
        let mean_mu = level.class_ids.iter().map(|c| mus[c]).sum::<f64>() / level.class_ids.len() as f64;
        println!("{:>5}  {auroc:.4}  {:.4}", level.level, phi.cdf(-mean_mu / 2f64.sqrt()));
    }
    print!("{}", report.to_csv());
    Ok(report)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
