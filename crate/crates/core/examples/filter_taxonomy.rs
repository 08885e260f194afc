// Filters candidate OOD classes against a small label hierarchy and prints the
// report as `class<TAB>status<TAB>reason`.
//
//     cargo run --example filter_taxonomy

use std::collections::BTreeSet;

use cood_bench::taxonomy::{filter_ood_classes, parse_counts, parse_edges, FilterConfig, FilterReport, TaxonomyGraph};

const EDGES: &str = "\
# parent\tchild
animal\tdog
dog\tcorgi
dog\tbeagle
animal\tbird
bird\tkiwi
artifact\tcar
";

const COUNTS: &str = "\
animal\t9000
dog\t2400
corgi\t420
beagle\t380
bird\t1200
kiwi\t90
artifact\t7000
car\t900
okapi\t310
";

pub fn run_example() -> anyhow::Result<FilterReport> {
    let graph = TaxonomyGraph::load(parse_edges(EDGES)?, &parse_counts(COUNTS)?, true)?;
    let cfg: FilterConfig = toml::from_str(
        r#"
        id_classes = ["corgi"]
        part_whole_exclusions = ["car"]
        "#,
    )?;
    let candidates: BTreeSet<String> = graph.nodes().map(str::to_string).collect();
    let report = filter_ood_classes(&graph, &candidates, &cfg, true)?;
    print!("{}", report.to_tsv());
    Ok(report)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
