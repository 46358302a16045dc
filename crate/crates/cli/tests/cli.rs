use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cohortforge_core::extract::lineage::Lineage;
use cohortforge_core::pipeline::{FLAT_FILE, LINEAGE_FILE, MANIFEST_FILE, REPORT_FILE};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cohortforge"))
        .args(args)
        .output()
        .expect("spawn cohortforge")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut a = vec!["synth", "--patients", "200", "--seed", "3", "--out", s(dir)];
    a.extend_from_slice(extra);
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn phase(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut a = vec![cmd, "--config", s(cfg), "--out", s(out)];
    a.extend_from_slice(extra);
    run(&a)
}

#[test]
fn end_to_end_produces_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    let out = d.join("out");
    assert_eq!(code(&phase("flatten", &d.join("flatten.toml"), &out, &[])), 0);
    assert_eq!(code(&phase("extract", &d.join("extract.toml"), &out, &[])), 0);
    assert!(out.join(FLAT_FILE).is_file());

    let lineage = Lineage::read(&out.join(LINEAGE_FILE)).unwrap();
    for name in ["extract_patients", "drug_purchases", "follow_up", "exposures"] {
        let e = lineage.cohorts.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no {name}"));
        assert!(e.subjects > 0, "{name} has no subjects");
        assert!(e.code_digest.len() == 64 && e.config_digest.len() == 64);
    }
    assert!(!lineage.attrition.is_empty());

    let report = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report.contains("== extract ==") && report.contains("== flatten =="));
    let manifest = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("command\textract"));
    assert!(manifest.contains("exit_status\t0"));
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = phase("flatten", &dir.path().join("nope.toml"), &out, &[]);
    assert_eq!(code(&o), 1);
    let manifest = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("exit_status\t1"));
    assert!(manifest.contains("error\t"));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(code(&run(&["flatten"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
}

#[test]
fn strict_sparsity_warning_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--preset", "pmsi"]);
    let cfg = d.join("flatten.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    let strict = if text.contains("strict = false") {
        text.replace("strict = false", "strict = true")
    } else {
        format!("strict = true\n{text}")
    };
    fs::write(&cfg, strict).unwrap();
    let o = phase("flatten", &cfg, &d.join("out"), &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(d.join("out").join(REPORT_FILE)).unwrap();
    assert!(report.contains("block-sparsity"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    let mut flats = Vec::new();
    for w in ["1", "3"] {
        let out = d.join(format!("out{w}"));
        assert_eq!(code(&phase("flatten", &d.join("flatten.toml"), &out, &["--workers", w])), 0);
        assert_eq!(code(&phase("extract", &d.join("extract.toml"), &out, &["--workers", w])), 0);
        flats.push((
            fs::read(out.join(FLAT_FILE)).unwrap(),
            fs::read(out.join(LINEAGE_FILE)).unwrap(),
            fs::read(out.join(REPORT_FILE)).unwrap(),
        ));
    }
    assert!(flats[0] == flats[1]);
}

#[test]
fn scripts_stats_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    let out = d.join("out");
    assert_eq!(code(&phase("flatten", &d.join("flatten.toml"), &out, &[])), 0);
    assert_eq!(code(&phase("extract", &d.join("extract.toml"), &out, &[])), 0);

    let script = d.join("study.cohort");
    fs::write(
        &script,
        "metadata out/lineage.meta\nload exposures\nload extract_patients as base\nload fractures\n\
         final = exposures intersect base\nfinal = final difference fractures\nflow base exposures\nsave final\n",
    )
    .unwrap();
    assert_eq!(code(&phase("cohort", &script, &out, &[])), 0);
    assert!(out.join("cohorts/final/events.csv").is_file());
    assert!(out.join("flowchart.tsv").is_file());
    let report = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report.contains("without subjects with event fractures"));

    let meta = out.join(LINEAGE_FILE);
    let st = d.join("stats");
    let o = run(&["stats", "--metadata", s(&meta), "--cohort", "exposures", "--out", s(&st)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(st.join("exposures.distribution_by_gender.csv").is_file());
    assert!(st.join("flowchart.tsv").is_file());

    let ex = d.join("export");
    let o = run(&["export", "--metadata", s(&meta), "--cohort", "exposures", "--out", s(&ex)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ex.join("exposures.events.sclt").is_file());
    assert!(ex.join("exposures.index.txt").is_file());
}

#[test]
fn bad_script_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.cohort");
    fs::write(&script, "load exposures\nx = a xor b\n").unwrap();
    let o = phase("cohort", &script, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    fs::write(&script, "load exposures\n").unwrap();
    assert_eq!(code(&phase("cohort", &script, &dir.path().join("out"), &[])), 1);
}

#[test]
fn unknown_cohort_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    let out = d.join("out");
    assert_eq!(code(&phase("flatten", &d.join("flatten.toml"), &out, &[])), 0);
    assert_eq!(code(&phase("extract", &d.join("extract.toml"), &out, &[])), 0);
    let o = run(&["stats", "--metadata", s(&out.join(LINEAGE_FILE)), "--cohort", "nope", "--out", s(&d.join("st"))]);
    assert_eq!(code(&o), 1);
}
