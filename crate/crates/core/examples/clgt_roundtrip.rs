// Writes a logit table in the CLGT binary format with its sidecar manifest,
// reads it back and scores it. This is the file pair an external model
// runner produces for `cood generate`.
//
//     cargo run --example clgt_roundtrip

use cood_bench::clgt::{read_table, sidecar_path, write_table, DType, HEADER_LEN};
use cood_bench::scores::{apply_kappa, KappaKind, KappaSpec, LogitTable, SampleRef};

pub fn run_example() -> anyhow::Result<LogitTable> {
    let dir = std::env::temp_dir().join(format!("cood-clgt-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("logits.clgt");

    // two samples, two dropout passes each, three classes
    let manifest = vec![SampleRef::new("a.jpg", "kiwi"), SampleRef::new("b.jpg", "okapi")];
    let values = vec![
        2.0, 0.0, -1.0, // a, pass 0
        0.5, 0.4, 0.3, // b, pass 0
        1.5, 0.5, -1.0, // a, pass 1
        0.2, 0.6, 0.1, // b, pass 1
    ];
    let table = LogitTable::new(manifest, 3, 2, values)?;
    write_table(&path, &table, DType::F32)?;

    let bytes = std::fs::read(&path)?;
    println!("header: {:02x?}", &bytes[..HEADER_LEN]);
    print!("{}", std::fs::read_to_string(sidecar_path(&path))?);

    let back = read_table(&path)?;
    let spec = KappaSpec {
        passes: 2,
        ..KappaSpec::new(KappaKind::McDropout)
    };
    let scores = apply_kappa(&back, &spec)?;
    for (s, v) in scores.manifest.iter().zip(&scores.values) {
        println!("{}\t{}\t{v:.4}", s.sample_id, scores.kappa_id);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(back)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
