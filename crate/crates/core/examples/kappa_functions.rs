// Evaluates every built-in confidence function on a few logit rows, then
// scores a whole table with `apply_kappa`.
//
//     cargo run --example kappa_functions

use cood_bench::scores::{
    apply_kappa, max_logit, mc_dropout_score, neg_entropy_from_logits, odin_score, softmax, softmax_response,
    KappaKind, KappaSpec, LogitTable, SampleRef, ScoreTable,
};

pub fn run_example() -> anyhow::Result<ScoreTable> {
    let rows: [&[f64]; 3] = [&[0.0, 0.0, 0.0], &[4.0, 1.0, -2.0], &[2.0_f64.ln(), 0.0, -30.0]];
    println!(
        "{:<22} {:>10} {:>10} {:>12} {:>10}",
        "logits", "softmax", "max-logit", "neg-entropy", "odin(T=2)"
    );
    for z in rows {
        println!(
            "{:<22} {:>10.4} {:>10.4} {:>12.4} {:>10.4}",
            format!("{z:.2?}"),
            softmax_response(z)?,
            max_logit(z)?,
            neg_entropy_from_logits(z)?,
            odin_score(z, 2.0)?,
        );
    }

    // three dropout passes of the same input
    let passes = [
        softmax(&[2.0, 0.5, 0.0])?,
        softmax(&[1.5, 1.0, 0.0])?,
        softmax(&[2.5, 0.0, 0.5])?,
    ];
    println!("mc-dropout over 3 passes: {:.4}", mc_dropout_score(&passes)?);

    let manifest = vec![
        SampleRef::new("img0", "kiwi"),
        SampleRef::new("img1", "kiwi"),
        SampleRef::new("img2", "okapi"),
    ];
    let table = LogitTable::new(manifest, 2, 1, vec![3.0, 0.0, 0.2, 0.1, -1.0, 1.0])?;
    let scores = apply_kappa(&table, &KappaSpec::softmax())?;
    for (s, v) in scores.manifest.iter().zip(&scores.values) {
        println!("{}\t{}\t{v:.4}", s.sample_id, KappaKind::SoftmaxResponse.as_str());
    }
    Ok(scores)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
