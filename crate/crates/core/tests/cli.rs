mod common;

use std::ffi::{OsStr, OsString};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use cood_bench::analysis::{
    FACTOR_CSV_HEADER, KAPPA_CSV_HEADER, KAPPA_SUMMARY_CSV_HEADER, RANKING_CSV_HEADER, REGIME_CSV_HEADER,
    REGIME_PAIRS_CSV_HEADER, SPREAD_CSV_HEADER,
};
use cood_bench::clgt::{read_table, write_table, DType};
use cood_bench::metrics::EVAL_CSV_HEADER;
use cood_bench::{BenchmarkManifest, EvalReport, FilterReport, LogitTable, SampleRef};

fn run(args: &[OsString]) -> Output {
    let refs: Vec<&OsStr> = args.iter().map(OsString::as_os_str).collect();
    cood(&refs)
}

fn os(parts: &[&str]) -> Vec<OsString> {
    parts.iter().map(OsString::from).collect()
}

fn arg(p: &Path) -> OsString {
    p.as_os_str().to_owned()
}

fn command<'a>(cmds: &'a [(String, Vec<OsString>)], name: &str) -> &'a [OsString] {
    &cmds.iter().find(|(n, _)| n == name).unwrap().1
}

fn assert_usage_failure(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out.stderr.is_empty());
}

fn files_under(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn missing_input_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let out_dir = tmp.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    let target = out_dir.join("filter.tsv");
    let mut args = os(&["filter", "--taxonomy"]);
    args.push(arg(&tmp.path().join("nope.tsv")));
    args.extend([
        OsString::from("--counts"),
        arg(&inputs.counts),
        "--config".into(),
        arg(&inputs.filter_config),
    ]);
    args.extend(["--out".into(), arg(&target)]);
    let out = run(&args);
    assert_usage_failure(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));
    assert_eq!(files_under(&out_dir), 0);
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&os(&[
        "filter",
        "--taxonomy",
        "a",
        "--counts",
        "b",
        "--config",
        "c",
        "--out",
        "d",
        "--bogus",
    ]));
    assert_usage_failure(&out);
    assert!(!Path::new("d").exists());
}

#[test]
fn help_exits_0_and_lists_subcommands() {
    let out = run(&os(&["--help"]));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["filter", "generate", "eval", "analyze"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let gen = String::from_utf8_lossy(&run(&os(&["generate", "--help"])).stdout).to_string();
    assert!(gen.contains("[default: 1000]"), "{gen}");
    assert!(gen.contains("[default: 11]"));
}

#[test]
fn malformed_scores_fail_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let bytes = fs::read(&inputs.ood_logits).unwrap();
    fs::write(&inputs.ood_logits, &bytes[..bytes.len() - 3]).unwrap();
    let out_dir = tmp.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    let cmds = all_commands(&inputs, &out_dir);
    assert_usage_failure(&run(command(&cmds, "generate")));
    assert_eq!(files_under(&out_dir), 0);
}

#[test]
fn malformed_counts_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    fs::write(&inputs.counts, "bear\tmany\n").unwrap();
    let out_dir = tmp.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    let cmds = all_commands(&inputs, &out_dir);
    assert_usage_failure(&run(command(&cmds, "filter")));
    assert_eq!(files_under(&out_dir), 0);
}

#[test]
fn filter_report_matches_hand_table() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let cmds = all_commands(&inputs, tmp.path());
    let out = run(command(&cmds, "filter"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("filter.tsv")).unwrap();
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    for key in ["tool=", "version=", "command=filter", "config_hash=", "seed=20230501"] {
        assert!(header.iter().any(|l| l.contains(key)), "no {key} in {header:?}");
    }
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let expected = fs::read_to_string(fixture("taxonomy/expected_report.tsv")).unwrap();
    assert_eq!(
        FilterReport::from_tsv(&body).unwrap(),
        FilterReport::from_tsv(&expected).unwrap()
    );
}

#[test]
fn generate_matches_golden_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let cmds = all_commands(&inputs, tmp.path());
    let out = run(command(&cmds, "generate"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let got = BenchmarkManifest::from_json(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    let golden =
        BenchmarkManifest::from_json(&fs::read_to_string(fixture("golden_13class_manifest.json")).unwrap()).unwrap();
    assert_eq!(got.levels, golden.levels);
    assert_eq!(got.severity_index, golden.severity_index);
    let prov = got.provenance.expect("provenance block");
    assert_eq!(prov.command, "generate");
    assert!(prov.inputs.contains_key("scores"));
}

#[test]
fn generate_too_few_classes_for_default_group() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let mut args = os(&["generate", "--scores"]);
    args.extend([arg(&inputs.ood_logits), "--config".into(), arg(&inputs.gen_config)]);
    args.extend(os(&["--model-id", "m", "--out"]));
    args.push(arg(&tmp.path().join("m.json")));
    assert_usage_failure(&run(&args));
    assert!(!tmp.path().join("m.json").exists());
}

#[test]
fn different_kappas_both_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    for kappa in ["softmax", "max-logit", "neg-entropy", "odin"] {
        let target = tmp.path().join(format!("{kappa}.json"));
        let mut args = os(&["--jobs", "2", "generate", "--scores"]);
        args.extend([arg(&inputs.ood_logits), "--config".into(), arg(&inputs.gen_config)]);
        args.extend(os(&[
            "--model-id",
            "toy",
            "--group-size",
            "4",
            "--levels",
            "5",
            "--kappa",
            kappa,
            "--out",
        ]));
        args.push(arg(&target));
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{kappa}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let m = BenchmarkManifest::from_json(&fs::read_to_string(&target).unwrap()).unwrap();
        assert_eq!(m.levels.len(), 5);
        assert_eq!(m.n_windows, 10);
        assert!(m.is_severity_monotone(), "{kappa}");
    }
}

#[test]
fn mc_dropout_requires_matching_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let mut args = os(&["generate", "--scores"]);
    args.extend([arg(&inputs.ood_logits), "--config".into(), arg(&inputs.gen_config)]);
    args.extend(os(&[
        "--model-id",
        "m",
        "--group-size",
        "3",
        "--kappa",
        "mc-dropout",
        "--passes",
        "4",
        "--out",
    ]));
    args.push(arg(&tmp.path().join("m.json")));
    assert_usage_failure(&run(&args));
}

#[test]
fn eval_perfect_separation() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    // max-logit 10 beats every OOD sample (at most 3)
    let id: Vec<SampleRef> = (0..20).map(|i| SampleRef::new(format!("v{i}"), "id0")).collect();
    let table = LogitTable::new(id, 2, 1, (0..20).flat_map(|_| [10.0, 0.0]).collect()).unwrap();
    write_table(&inputs.id_logits, &table, DType::F32).unwrap();
    let cmds = all_commands(&inputs, tmp.path());
    for name in ["generate", "eval"] {
        let out = run(command(&cmds, name));
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let report = EvalReport::from_json(&fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report.per_level_auroc, vec![1.0; 11]);
    assert_eq!(report.mean_auroc, 1.0);
    assert!(report.counts.iter().all(|c| c.n_id == 20 && c.n_ood == 6));
    let csv = fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(EVAL_CSV_HEADER));
    assert_eq!(lines.next(), Some("toy-13,max-logit,0,1,20,6"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn cache_dir_receives_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let cache = tmp.path().join("cache");
    let cmds = all_commands(&inputs, tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_cood"))
        .args(command(&cmds, "generate"))
        .env("COOD_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cached = read_table(&cache.join("toy-13.max-logit.scores.clgt")).unwrap();
    assert_eq!(cached.n_cols(), 1);
    assert_eq!(cached.n_samples(), 65);
    let row = cached.manifest().iter().position(|s| s.class_id == "ood_05").unwrap();
    assert_eq!(cached.row(row, 0), &[1.25]);
}

#[test]
fn analyses_write_expected_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let cmds = all_commands(&inputs, tmp.path());
    let expected: [(&str, &[(&str, &str)]); 5] = [
        (
            "regime-improvement",
            &[
                ("regime_improvement.csv", REGIME_CSV_HEADER),
                ("regime_improvement_pairs.csv", REGIME_PAIRS_CSV_HEADER),
            ],
        ),
        (
            "kappa-improvement",
            &[
                ("kappa_improvement.csv", KAPPA_CSV_HEADER),
                ("kappa_improvement_summary.csv", KAPPA_SUMMARY_CSV_HEADER),
            ],
        ),
        ("factor-correlations", &[("factor_correlations.csv", FACTOR_CSV_HEADER)]),
        (
            "ranking-correlation",
            &[("ranking_correlation.csv", RANKING_CSV_HEADER)],
        ),
        ("severity-spread", &[("severity_spread.csv", SPREAD_CSV_HEADER)]),
    ];
    for (name, files) in expected {
        let out = run(command(&cmds, &format!("analyze {name}")));
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let dir = tmp.path().join(format!("analyze-{name}"));
        assert!(dir.join("provenance.json").exists());
        for (file, header) in files {
            let text = fs::read_to_string(dir.join(file)).unwrap();
            assert_eq!(text.lines().next(), Some(*header), "{file}");
            assert!(text.lines().count() > 1, "{file} has no rows");
        }
    }
    let regime = fs::read_to_string(tmp.path().join("analyze-regime-improvement/regime_improvement.csv")).unwrap();
    // two distilled pairs: resnet50_kd/resnet50 and deit_s_kd/deit_s
    assert!(regime.lines().skip(1).all(|l| l.ends_with(",2")), "{regime}");
    let ranking = fs::read_to_string(tmp.path().join("analyze-ranking-correlation/ranking_correlation.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 1 + 11 * 11);
    assert!(ranking.contains("\n3,3,1\n"));
}

#[test]
fn analyze_rejects_missing_registry_for_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_cli_inputs(tmp.path());
    let mut args = os(&["analyze", "--analysis", "factor-correlations", "--reports"]);
    args.push(arg(&inputs.reports));
    args.push("--out".into());
    args.push(arg(&tmp.path().join("x")));
    assert_usage_failure(&run(&args));
    assert!(!tmp.path().join("x").exists());
}
