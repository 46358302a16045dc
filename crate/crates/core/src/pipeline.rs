//! End-to-end phases as run by the command-line driver: flatten a star
//! schema from CSV into `flat.cft`, and extract cohorts from it.
//!
//! Both phases use whatever rayon pool they are called in; output bytes do
//! not depend on its size.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::cohort::Cohort;
use crate::config::{ExtractConfig, FlattenPlan};
use crate::error::{Error, Result};
use crate::extract::lineage::{code_digest, config_digest, AttritionStage, Lineage, LineageEntry, SourceRef};
use crate::extract::transform::{self, ExposureStats, OutcomeConfig};
use crate::extract::{extract_patients, run_extractor_slices, ExtractorStats, PatientStats};
use crate::finding::{has_errors, Finding, Severity};
use crate::flatten::{flatten, verify_flattening, FlatteningReport};
use crate::model::{sort_canonical, Event, Patient, Timestamp};
use crate::table::container::ContainerReader;
use crate::table::csv::{load_csv, CsvLoadStats};
use crate::table::Table;

pub const FLAT_FILE: &str = "flat.cft";
pub const LINEAGE_FILE: &str = "lineage.meta";
pub const REPORT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const COHORTS_DIR: &str = "cohorts";

pub const EXTRACT_PATIENTS: &str = "extract_patients";
pub const FILTER_PATIENTS: &str = "filter_patients";
pub const OBSERVATION_PERIOD: &str = "observation_period";
pub const TRACKLOSS: &str = "trackloss";
pub const FOLLOW_UP: &str = "follow_up";
pub const EXPOSURES: &str = "exposures";

/// Wall-clock time per named phase, in execution order.
#[derive(Debug, Clone, Default)]
pub struct Timings(pub Vec<(String, Duration)>);

impl Timings {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push((name.to_string(), t.elapsed()));
        out
    }
}

/// Replaces (or adds) the `== name ==` section of a report file, keeping
/// other sections in name order so reruns produce the same bytes.
pub fn write_report_section(path: &Path, name: &str, body: &str) -> Result<()> {
    let mut sections: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(old) = fs::read_to_string(path) {
        let mut current: Option<String> = None;
        for line in old.lines() {
            if let Some(h) = line.strip_prefix("== ").and_then(|l| l.strip_suffix(" ==")) {
                current = Some(h.to_string());
                sections.entry(h.to_string()).or_default();
            } else if let Some(h) = &current {
                let s = sections.get_mut(h).expect("section exists");
                s.push_str(line);
                s.push('\n');
            }
        }
    }
    let mut b = body.to_string();
    if !b.ends_with('\n') {
        b.push('\n');
    }
    sections.insert(name.to_string(), b);
    let mut out = String::new();
    for (h, s) in sections {
        out.push_str(&format!("== {h} ==\n{s}"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn findings_text(findings: &[Finding]) -> String {
    findings.iter().map(|f| format!("{f}\n")).collect()
}

#[derive(Debug, Clone)]
pub struct FlattenRun {
    pub report: FlatteningReport,
    pub findings: Vec<Finding>,
    pub csv: BTreeMap<String, CsvLoadStats>,
    pub timings: Timings,
    pub outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FlattenReportDoc<'a> {
    flattening: &'a FlatteningReport,
    csv: &'a BTreeMap<String, CsvLoadStats>,
}

/// Loads the declared CSVs, flattens them into `out_dir/flat.cft` and writes
/// the report section. Integrity errors (and warnings when the config is
/// strict) are returned as errors after the report is written.
pub fn run_flatten(plan: &FlattenPlan, out_dir: &Path) -> Result<FlattenRun> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let join = plan.join_spec()?;
    let slicing = plan.slicing()?;
    let delim = plan.delimiter()?;
    let mut timings = Timings::default();

    let mut names = vec![join.central.clone()];
    names.extend(join.dimensions.iter().map(|d| d.table.clone()));
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    let mut csv = BTreeMap::new();
    timings.time("load", || -> Result<()> {
        for name in &names {
            let decl = plan.schema.table(name)?;
            let (t, st) = load_csv(plan.csv_path(name)?, &decl.schema()?, delim)?;
            tables.insert(name.clone(), t);
            csv.insert(name.clone(), st);
        }
        Ok(())
    })?;
    let central = tables.remove(&join.central).expect("loaded");
    let out = out_dir.join(FLAT_FILE);
    let report = timings.time("flatten", || {
        flatten(&central, &tables, &join, &slicing, plan.config.column_prefix, &out)
    })?;
    let findings = verify_flattening(&report, plan.config.sparsity_threshold);

    let doc = FlattenReportDoc {
        flattening: &report,
        csv: &csv,
    };
    let mut body = serde_json::to_string_pretty(&doc)?;
    body.push('\n');
    body.push_str(&findings_text(&findings));
    let report_path = out_dir.join(REPORT_FILE);
    write_report_section(&report_path, "flatten", &body)?;

    let fatal = has_errors(&findings) || (plan.config.strict && findings.iter().any(|f| f.severity == Severity::Warning));
    if fatal {
        return Err(Error::Integrity(format!(
            "flattening checks failed: {}",
            findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(FlattenRun {
        report,
        findings,
        csv,
        timings,
        outputs: vec![out, report_path],
    })
}

/// Every cohort produced by an extraction run.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub patients: Vec<Patient>,
    pub window: (Timestamp, Timestamp),
    /// Extractor and transformer outputs by cohort name, canonical order.
    pub events: BTreeMap<String, Vec<Event>>,
    pub prevalent: Option<BTreeSet<String>>,
    pub patient_stats: PatientStats,
    pub extractor_stats: BTreeMap<String, ExtractorStats>,
    pub exposure_stats: ExposureStats,
    /// Events dropped because their patient has no demographic record.
    pub orphan_events: u64,
}

/// Runs all extractors and transformers over the flat slices.
pub fn extract_all(cfg: &ExtractConfig, slices: &[Table]) -> Result<Extracted> {
    let window = (Timestamp::parse(&cfg.study_start)?, Timestamp::parse(&cfg.study_end)?);
    let (patients, patient_stats) = extract_patients(slices, &cfg.patients)?;
    let known: BTreeSet<&str> = patients.iter().map(|p| p.patient_id.as_str()).collect();

    let mut events: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    let mut extractor_stats = BTreeMap::new();
    let mut orphan_events = 0u64;
    for e in &cfg.extractors {
        let (mut ev, st) = run_extractor_slices(slices, &e.spec)?;
        let before = ev.len();
        ev.retain(|x| known.contains(x.patient_id.as_str()));
        orphan_events += (before - ev.len()) as u64;
        extractor_stats.insert(e.spec.name.clone(), st);
        events.entry(e.cohort.clone()).or_default().extend(ev);
    }
    for ev in events.values_mut() {
        sort_canonical(ev);
    }
    let input = |name: &str| -> Result<&Vec<Event>> {
        events
            .get(name)
            .ok_or_else(|| Error::Config(format!("transformer input cohort `{name}` is not extracted")))
    };

    let all: Vec<Event> = events.values().flatten().cloned().collect();
    let obs = transform::observation_period(&all, window.0, window.1)?;
    let lost = transform::trackloss(input(&cfg.trackloss.input)?, window.1, cfg.trackloss.spec)?;
    let fu = transform::follow_up(&patients, &obs, &lost, cfg.follow_up)?;
    let (exp, exposure_stats) = transform::exposure(input(&cfg.exposure.input)?, &fu, cfg.exposure.spec)?;
    let outcome = match &cfg.outcome {
        Some(o) => {
            let main: Vec<Event> = input(&o.diagnoses)?
                .iter()
                .filter(|e| e.category == o.diagnosis_category)
                .cloned()
                .collect();
            let sites = OutcomeConfig { sites: o.sites.clone() };
            Some((o.name.clone(), transform::outcome(input(&o.acts)?, &main, &sites)?))
        }
        None => None,
    };
    let prevalent = match &cfg.prevalent {
        Some(p) => Some(transform::prevalent_users(input(&p.input)?, Timestamp::parse(&p.cutoff)?, p.codes.as_ref())),
        None => None,
    };

    for (name, ev) in [
        (OBSERVATION_PERIOD.to_string(), obs),
        (TRACKLOSS.to_string(), lost),
        (FOLLOW_UP.to_string(), fu),
        (EXPOSURES.to_string(), exp),
    ]
    .into_iter()
    .chain(outcome)
    {
        if events.insert(name.clone(), ev).is_some() {
            return Err(Error::Config(format!("cohort `{name}` is produced twice")));
        }
    }
    Ok(Extracted {
        patients,
        window,
        events,
        prevalent,
        patient_stats,
        extractor_stats,
        exposure_stats,
        orphan_events,
    })
}

#[derive(Debug, Clone)]
pub struct ExtractRun {
    pub extracted: Extracted,
    pub lineage: Lineage,
    pub timings: Timings,
    pub outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ExtractReportDoc<'a> {
    patients: &'a PatientStats,
    extractors: &'a BTreeMap<String, ExtractorStats>,
    exposure: &'a ExposureStats,
    orphan_events: u64,
    cohorts: BTreeMap<&'a str, (u64, u64)>,
}

pub fn read_flat(path: &Path) -> Result<Vec<Table>> {
    ContainerReader::open(path)?.read_chunks()
}

/// Reads the flat container, extracts every cohort, stores each under
/// `out_dir/cohorts/<name>/` and writes the lineage document.
pub fn run_extract(cfg: &ExtractConfig, out_dir: &Path) -> Result<ExtractRun> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut timings = Timings::default();
    let flat_path = cfg.input.clone().unwrap_or_else(|| out_dir.join(FLAT_FILE));
    let slices = timings.time("read", || read_flat(&flat_path))?;
    let extracted = timings.time("extract", || extract_all(cfg, &slices))?;
    drop(slices);
    let flat_name = flat_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| FLAT_FILE.into());
    let (lineage, outputs) = timings.time("write", || write_cohorts(cfg, &extracted, &flat_name, out_dir))?;
    Ok(ExtractRun {
        extracted,
        lineage,
        timings,
        outputs,
    })
}

fn write_cohorts(cfg: &ExtractConfig, x: &Extracted, flat_name: &str, out_dir: &Path) -> Result<(Lineage, Vec<PathBuf>)> {
    let mut lineage = Lineage::new(cfg.study_start.clone(), cfg.study_end.clone());
    let code = code_digest();
    let mut outputs = Vec::new();
    let mut cohorts: BTreeMap<String, Cohort> = BTreeMap::new();

    let mut save = |cohort: Cohort, category: String, sources: Vec<SourceRef>, digest: String, operations: Vec<String>, lineage: &mut Lineage| -> Result<()> {
        let rel = format!("{COHORTS_DIR}/{}", cohort.name());
        cohort.save(&out_dir.join(&rel))?;
        outputs.push(out_dir.join(&rel));
        lineage.push(LineageEntry {
            name: cohort.name().to_string(),
            path: rel,
            category,
            sources,
            count: cohort.events().len() as u64,
            subjects: cohort.subject_count() as u64,
            config_digest: digest,
            code_digest: code.clone(),
            operations,
        })?;
        cohorts.insert(cohort.name().to_string(), cohort);
        Ok(())
    };

    let patient_cols = &cfg.patients;
    let patients = Cohort::new(EXTRACT_PATIENTS, x.patients.iter().cloned(), Vec::new(), x.window)?;
    save(
        patients.clone(),
        "patients".into(),
        vec![SourceRef {
            table: flat_name.into(),
            columns: vec![
                patient_cols.patient_id.clone(),
                patient_cols.gender.clone(),
                patient_cols.birth_date.clone(),
                patient_cols.death_date.clone(),
            ],
        }],
        config_digest(patient_cols),
        vec!["reconcile demographics".into()],
        &mut lineage,
    )?;

    for name in cfg.extractor_cohorts() {
        let specs: Vec<_> = cfg.extractors.iter().filter(|e| e.cohort == name).collect();
        let mut categories: Vec<&str> = Vec::new();
        let mut columns: Vec<String> = Vec::new();
        let mut operations = Vec::new();
        for e in &specs {
            if !categories.contains(&e.spec.category.as_str()) {
                categories.push(&e.spec.category);
            }
            for c in e.spec.referenced_columns() {
                if !columns.contains(&c) {
                    columns.push(c);
                }
            }
            operations.push(format!("extractor {}", e.spec.name));
        }
        let spec_list: Vec<_> = specs.iter().map(|e| &e.spec).collect();
        let c = Cohort::from_events(&name, &x.patients, x.events[&name].clone(), x.window)?;
        save(
            c,
            categories.join(","),
            vec![SourceRef {
                table: flat_name.into(),
                columns,
            }],
            config_digest(&spec_list),
            operations,
            &mut lineage,
        )?;
    }

    let from = |names: &[&str]| -> Vec<SourceRef> {
        names
            .iter()
            .map(|n| SourceRef {
                table: format!("cohort:{n}"),
                columns: Vec::new(),
            })
            .collect()
    };
    let extractor_cohorts = cfg.extractor_cohorts();
    let ec: Vec<&str> = extractor_cohorts.iter().map(String::as_str).collect();
    let derived: Vec<(&str, &str, Vec<SourceRef>, String, String)> = {
        let mut v = vec![
            (OBSERVATION_PERIOD, transform::OBSERVATION_PERIOD, from(&ec), config_digest(&(&cfg.study_start, &cfg.study_end)), "transform observation_period".to_string()),
            (TRACKLOSS, transform::TRACKLOSS, from(&[cfg.trackloss.input.as_str()]), config_digest(&cfg.trackloss), "transform trackloss".to_string()),
            (FOLLOW_UP, transform::FOLLOW_UP, from(&[EXTRACT_PATIENTS, OBSERVATION_PERIOD, TRACKLOSS]), config_digest(&cfg.follow_up), "transform follow_up".to_string()),
            (EXPOSURES, transform::EXPOSURE, from(&[cfg.exposure.input.as_str(), FOLLOW_UP]), config_digest(&cfg.exposure), "transform exposure".to_string()),
        ];
        if let Some(o) = &cfg.outcome {
            v.push((o.name.as_str(), transform::OUTCOME, from(&[o.acts.as_str(), o.diagnoses.as_str()]), config_digest(o), "transform outcome".to_string()));
        }
        v
    };
    for (name, category, sources, digest, op) in derived {
        let c = Cohort::from_events(name, &x.patients, x.events[name].clone(), x.window)?;
        save(c, category.into(), sources, digest, vec![op], &mut lineage)?;
    }

    let mut attrition = vec![AttritionStage {
        name: EXTRACT_PATIENTS.into(),
        subjects: patients.subject_count() as u64,
        rationale: "initial population".into(),
    }];
    let mut current = patients.clone();
    if let (Some(p), Some(prev)) = (&cfg.prevalent, &x.prevalent) {
        let users = Cohort::new("prevalent_users", x.patients.iter().filter(|q| prev.contains(&q.patient_id)).cloned(), Vec::new(), x.window)?;
        let kept = patients.difference(&users);
        let filtered = Cohort::new(FILTER_PATIENTS, kept.subjects().cloned(), Vec::new(), x.window)?;
        let op = format!("difference prevalent users (first dispense before {})", p.cutoff);
        save(filtered.clone(), "filtered_patients".into(), from(&[EXTRACT_PATIENTS, p.input.as_str()]), config_digest(p), vec![op.clone()], &mut lineage)?;
        attrition.push(AttritionStage {
            name: FILTER_PATIENTS.into(),
            subjects: filtered.subject_count() as u64,
            rationale: op,
        });
        current = filtered;
    }
    let mut stage = |current: &mut Cohort, other: &Cohort, name: &str, rationale: &str, keep: bool| {
        *current = if keep { current.intersection(other) } else { current.difference(other) };
        attrition.push(AttritionStage {
            name: name.into(),
            subjects: current.subject_count() as u64,
            rationale: rationale.into(),
        });
    };
    stage(&mut current, &cohorts[FOLLOW_UP], FOLLOW_UP, "subjects with a follow-up period", true);
    stage(&mut current, &cohorts[EXPOSURES], EXPOSURES, "subjects exposed during follow-up", true);
    if let Some(o) = &cfg.outcome {
        stage(&mut current, &cohorts[&o.name], &format!("without_{}", o.name), &format!("subjects without {}", o.name), false);
    }
    lineage.attrition = attrition;

    let meta = out_dir.join(LINEAGE_FILE);
    lineage.write(&meta)?;
    outputs.push(meta);

    let doc = ExtractReportDoc {
        patients: &x.patient_stats,
        extractors: &x.extractor_stats,
        exposure: &x.exposure_stats,
        orphan_events: x.orphan_events,
        cohorts: lineage.cohorts.iter().map(|c| (c.name.as_str(), (c.subjects, c.count))).collect(),
    };
    let mut body = serde_json::to_string_pretty(&doc)?;
    body.push('\n');
    if x.orphan_events > 0 {
        body.push_str(&format!(
            "{}\n",
            Finding::warning("orphan-events", format!("{} events dropped: patient has no demographics", x.orphan_events))
        ));
    }
    let report = out_dir.join(REPORT_FILE);
    write_report_section(&report, "extract", &body)?;
    outputs.push(report);
    Ok((lineage, outputs))
}
