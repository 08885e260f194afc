// Runs the analysis suite over a small hand-written registry: distillation
// pairs, an alternative kappa, factor correlations and the ranking matrix.
//
//     cargo run --example analyze_registry

use cood_bench::analysis::{
    factor_correlations, kappa_improvement, ranking_correlation_matrix, ranking_matrix_csv, regime_improvement,
    ModelRecord, Registry, Reports, REGIME_CSV_HEADER,
};
use cood_bench::metrics::{EvalReport, LevelCounts};

const REGISTRY: &str = r#"
{"model_id":"resnet50","architecture_family":"resnet","n_params":25600000,"input_size":224,"embedding_size":2048,"accuracy":0.761,"id_auroc":0.86,"regime_tags":[],"comparison_key":"resnet50"}
{"model_id":"resnet50_kd","architecture_family":"resnet","n_params":25600000,"input_size":224,"embedding_size":2048,"accuracy":0.797,"id_auroc":0.87,"regime_tags":["distilled"],"comparison_key":"resnet50"}
{"model_id":"vit_s","architecture_family":"vit","n_params":22000000,"input_size":224,"embedding_size":384,"accuracy":0.798,"id_auroc":0.88,"regime_tags":[],"comparison_key":"vit_s"}
{"model_id":"vit_s_kd","architecture_family":"vit","n_params":22000000,"input_size":224,"embedding_size":384,"accuracy":0.812,"id_auroc":0.885,"regime_tags":["distilled"],"comparison_key":"vit_s"}
{"model_id":"vit_b_384","architecture_family":"vit","n_params":86000000,"input_size":384,"embedding_size":768,"accuracy":0.840,"id_auroc":0.89,"regime_tags":[],"comparison_key":"vit_b_384"}
"#;

fn levels(record: &ModelRecord, shift: f64) -> EvalReport {
    let per_level_auroc: Vec<f64> = (0..11)
        .map(|l| 0.93 - 0.03 * l as f64 + 0.4 * (record.accuracy - 0.8) + shift * l as f64 / 10.0)
        .collect();
    EvalReport {
        model_id: record.model_id.clone(),
        kappa_id: if shift == 0.0 { "softmax-response" } else { "odin" }.into(),
        mean_auroc: per_level_auroc.iter().sum::<f64>() / 11.0,
        counts: vec![
            LevelCounts {
                n_id: 50_000,
                n_ood: 50_000
            };
            11
        ],
        per_level_auroc,
        provenance: None,
    }
}

pub fn run_example() -> anyhow::Result<Vec<Vec<f64>>> {
    let registry = Registry::from_jsonl(REGISTRY).map_err(anyhow::Error::msg)?;
    let softmax: Reports = registry
        .records()
        .map(|r| (r.model_id.clone(), levels(r, 0.0)))
        .collect();
    let odin: Reports = registry
        .records()
        .enumerate()
        .map(|(i, r)| (r.model_id.clone(), levels(r, 0.01 * i as f64)))
        .collect();

    let distilled = regime_improvement(&registry, &softmax, "distilled")?;
    println!("{REGIME_CSV_HEADER}");
    for (level, mean) in distilled.mean_per_level().iter().enumerate() {
        println!("distilled,{level},{mean:.3},{}", distilled.pair_ids.len());
    }

    let odin_vs_softmax = kappa_improvement(&softmax, &odin)?;
    let hardest = odin_vs_softmax.per_level_summary.last().expect("11 levels");
    println!(
        "odin vs softmax at level 10: median {:.3}% (q1 {:.3}, q3 {:.3})",
        hardest.median, hardest.q1, hardest.q3
    );

    let factors = factor_correlations(&registry, &softmax, None)?;
    for (factor, rho) in &factors.rho {
        println!("{:<15} rho at level 0 = {:+.3}", factor.as_str(), rho[0]);
    }

    let matrix = ranking_correlation_matrix(&odin)?;
    print!(
        "{}",
        ranking_matrix_csv(&matrix)
            .lines()
            .take(4)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(matrix)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
