use std::path::Path;

use cohortforge_core::config::{ExtractConfig, FlattenConfig};
use cohortforge_core::model::same_multiset;
use cohortforge_core::pipeline::{run_extract, run_flatten};
use cohortforge_synth::generate::{EXTRACT_FILE, FLATTEN_FILE};
use cohortforge_synth::oracle::oracle_extract;
use cohortforge_synth::{generate, SynthConfig};

fn corpus(dir: &Path, cfg: &SynthConfig) -> cohortforge_synth::Corpus {
    let c = generate(cfg).unwrap();
    c.write(dir).unwrap();
    c
}

#[test]
fn oracle_matches_generator_truth() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), &SynthConfig::default());
    let plan = FlattenConfig::load(&dir.path().join(FLATTEN_FILE)).unwrap();
    let cfg = ExtractConfig::load(&dir.path().join(EXTRACT_FILE)).unwrap();
    let o = oracle_extract(&plan, &cfg).unwrap();
    assert_eq!(o.central_rows, c.truth.central_rows);
    assert_eq!(o.flat_rows, c.truth.flat_rows);
    assert_eq!(o.patients, c.truth.patients);
    for (name, ev) in &c.truth.events {
        assert!(!ev.is_empty(), "{name} is empty");
        assert!(same_multiset(ev, &o.events[name]), "{name} differs");
    }
}

#[test]
fn pipeline_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &SynthConfig { n_patients: 300, seed: 7, ..SynthConfig::default() });
    let plan = FlattenConfig::load(&dir.path().join(FLATTEN_FILE)).unwrap();
    let cfg = ExtractConfig::load(&dir.path().join(EXTRACT_FILE)).unwrap();
    let out = dir.path().join("out");
    let f = run_flatten(&plan, &out).unwrap();
    let x = run_extract(&cfg, &out).unwrap().extracted;
    let o = oracle_extract(&plan, &cfg).unwrap();
    assert_eq!(f.report.flat_row_count, o.flat_rows);
    assert_eq!(x.patients, o.patients);
    assert_eq!(x.events.keys().collect::<Vec<_>>(), o.events.keys().collect::<Vec<_>>());
    for (name, ev) in &o.events {
        assert!(same_multiset(ev, &x.events[name]), "{name} differs");
    }
    assert_eq!(x.prevalent, o.prevalent);
}
