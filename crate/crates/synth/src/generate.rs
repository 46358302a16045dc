//! Synthetic claims star schema.
//!
//! One central `claims` table, medical dimensions `patients`, `drugs`,
//! `stays`, `acts` and `diagnoses`, and an administrative `billing` table
//! that flattening leaves out. Ground truth is accumulated while rows are
//! emitted: every dimension row contributes its event once per flat row it
//! ends up in, which is the product of the other dimensions' fanouts for its
//! claim.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};

use cohortforge_core::config::{
    ExposureEntry, ExtractConfig, ExtractorEntry, FlattenConfig, OutcomeEntry, PrevalentEntry, SchemaFile, TableDecl,
    TracklossEntry, MEDICAL_TAG,
};
use cohortforge_core::extract::transform::{FollowUpSpec, OutcomeSite};
use cohortforge_core::extract::{ColumnMap, ExtractorSpec, PatientColumns};
use cohortforge_core::flatten::{ColumnPrefix, DEFAULT_SPARSITY_THRESHOLD};
use cohortforge_core::table::{ColumnSchema, DataType, TimeUnit};
use cohortforge_core::{Error, Event, Gender, Patient, Result, Timestamp};

use crate::config::{KindProfile, SynthConfig};
use crate::rng::Rng;

pub const SCHEMA_FILE: &str = "schema.toml";
pub const FLATTEN_FILE: &str = "flatten.toml";
pub const EXTRACT_FILE: &str = "extract.toml";
pub const SYNTH_FILE: &str = "synth.toml";

pub const DRUG_PURCHASES: &str = "drug_purchases";
pub const ACTS: &str = "acts";
pub const DIAGNOSES: &str = "diagnoses";
pub const HOSPITAL_STAYS: &str = "hospital_stays";

const MAIN: &str = "DP";
const ASSOCIATED: &str = "DA";

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTable {
    pub decl: TableDecl,
    /// Cells as written; the empty string is a null.
    pub rows: Vec<Vec<String>>,
}

impl GeneratedTable {
    fn new(name: &str, tags: &[&str], keys: &[(&str, &str)], columns: &[(&str, DataType, bool)]) -> Self {
        Self {
            decl: TableDecl {
                name: name.into(),
                file: format!("{name}.csv"),
                tags: tags.iter().map(|t| t.to_string()).collect(),
                keys: keys.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
                columns: columns
                    .iter()
                    .map(|(n, t, nullable)| ColumnSchema::new(*n, *t, *nullable))
                    .collect(),
            },
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.decl.columns.iter().map(|c| c.name.as_str()))?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Validation(e.to_string()))
    }
}

/// What the flatten and extract phases must reproduce.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Truth {
    pub patients: Vec<Patient>,
    /// Extractor cohort name to events, canonical order.
    pub events: BTreeMap<String, Vec<Event>>,
    pub central_rows: u64,
    pub flat_rows: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: SynthConfig,
    pub tables: Vec<GeneratedTable>,
    pub truth: Truth,
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| Error::Config(format!("bad date `{s}`")))
}

fn fmt_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn ts(d: NaiveDate) -> Timestamp {
    Timestamp::from_date(d)
}

fn code(prefix: char, n: u64) -> String {
    format!("{prefix}{:04}", n + 1)
}

fn opt(s: &Option<String>) -> String {
    s.clone().unwrap_or_default()
}

struct ClaimRows {
    drugs: Vec<(Option<String>, Option<f64>)>,
    stay: Option<(String, String, NaiveDate, NaiveDate)>,
    acts: Vec<Option<String>>,
    diagnoses: Vec<(Option<String>, &'static str)>,
}

impl ClaimRows {
    fn fanouts(&self, has_patient: bool) -> [u64; 5] {
        [
            has_patient as u64,
            self.drugs.len() as u64,
            self.stay.is_some() as u64,
            self.acts.len() as u64,
            self.diagnoses.len() as u64,
        ]
    }
}

/// Flat rows a dimension row of dimension `dim` appears in.
fn multiplicity(f: &[u64; 5], dim: usize) -> u64 {
    f.iter()
        .enumerate()
        .filter(|(i, _)| *i != dim)
        .map(|(_, &n)| n.max(1))
        .product()
}

pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    use DataType::*;
    let mut claims = GeneratedTable::new(
        "claims",
        &["central"],
        &[],
        &[("claim_id", Int64, false), ("patient_id", Utf8, true), ("claim_date", Date, true), ("claim_kind", Utf8, false)],
    );
    let mut patients = GeneratedTable::new(
        "patients",
        &[MEDICAL_TAG],
        &[("patient_id", "patient_id")],
        &[("patient_id", Utf8, false), ("gender", Int64, true), ("birth_date", Date, true), ("death_date", Date, true)],
    );
    let mut drugs = GeneratedTable::new(
        "drugs",
        &[MEDICAL_TAG],
        &[("claim_id", "claim_id")],
        &[("claim_id", Int64, false), ("drug_code", Utf8, true), ("quantity", Float64, true)],
    );
    let mut stays = GeneratedTable::new(
        "stays",
        &[MEDICAL_TAG],
        &[("claim_id", "claim_id")],
        &[("claim_id", Int64, false), ("stay_id", Utf8, false), ("stay_code", Utf8, true), ("stay_start", Date, true), ("stay_end", Date, true)],
    );
    let mut acts = GeneratedTable::new(
        "acts",
        &[MEDICAL_TAG],
        &[("claim_id", "claim_id")],
        &[("claim_id", Int64, false), ("act_code", Utf8, true)],
    );
    let mut diagnoses = GeneratedTable::new(
        "diagnoses",
        &[MEDICAL_TAG],
        &[("claim_id", "claim_id")],
        &[("claim_id", Int64, false), ("diag_code", Utf8, true), ("diag_kind", Utf8, false)],
    );
    let mut billing = GeneratedTable::new(
        "billing",
        &["administrative"],
        &[("claim_id", "claim_id")],
        &[("claim_id", Int64, false), ("amount", Int64, false)],
    );

    let start = parse_date(&cfg.study_start)?;
    let end = parse_date(&cfg.study_end)?;
    let lo = start - Duration::days(cfg.lookback_days as i64);
    let hi = end + Duration::days(30);
    let span = (hi - lo).num_days();
    let birth_lo = NaiveDate::from_ymd_opt(1930, 1, 1).expect("valid");
    let birth_span = (NaiveDate::from_ymd_opt(2000, 12, 31).expect("valid") - birth_lo).num_days();
    let kinds: [(&str, &KindProfile); 3] = [
        ("pharmacy", &cfg.mix.pharmacy),
        ("outpatient", &cfg.mix.outpatient),
        ("hospital", &cfg.mix.hospital),
    ];
    let kind_weights: Vec<u32> = kinds.iter().map(|k| k.1.weight).collect();
    let v = &cfg.vocabulary;
    let n = &cfg.nulls;

    let mut truth = Truth::default();
    let mut events: BTreeMap<String, Vec<Event>> = [DRUG_PURCHASES, ACTS, DIAGNOSES, HOSPITAL_STAYS]
        .into_iter()
        .map(|c| (c.to_string(), Vec::new()))
        .collect();
    let mut claim_id: i64 = 0;

    for i in 0..cfg.n_patients {
        let mut r = Rng::stream(cfg.seed, i as u64);
        let pid = format!("P{:07}", i + 1);
        let gender = if r.chance(500) { Gender::Male } else { Gender::Female };
        let birth = birth_lo + Duration::days(r.range(0, birth_span));
        let death = r
            .chance(cfg.death_permille)
            .then(|| start + Duration::days(r.range(0, (end - start).num_days())));
        patients.rows.push(vec![
            pid.clone(),
            gender.code().to_string(),
            fmt_date(birth),
            death.map(fmt_date).unwrap_or_default(),
        ]);
        let a = r.range(0, span);
        let b = r.range(a, span);
        let regular: Vec<u64> = (0..r.range(1, 3)).map(|_| r.below(v.drugs as u64)).collect();
        let n_claims = match cfg.claims_per_patient {
            0 => 0,
            m => r.range(1, 2 * m as i64 - 1),
        };
        let mut seen = false;

        for _ in 0..n_claims {
            claim_id += 1;
            let (kind, profile) = kinds[r.weighted(&kind_weights)];
            let date = lo + Duration::days(r.range(a, b));
            let claim_pid = (!r.chance(n.patient_id)).then(|| pid.clone());
            let claim_date = (!r.chance(n.claim_date)).then_some(date);
            claims.rows.push(vec![
                claim_id.to_string(),
                opt(&claim_pid),
                claim_date.map(fmt_date).unwrap_or_default(),
                kind.to_string(),
            ]);
            if r.chance(cfg.billing_permille) {
                billing.rows.push(vec![claim_id.to_string(), r.range(1, 5000).to_string()]);
            }

            let mut rows = ClaimRows {
                drugs: Vec::new(),
                stay: None,
                acts: Vec::new(),
                diagnoses: Vec::new(),
            };
            for _ in 0..r.weighted(&profile.drugs) {
                let c = if r.chance(800) {
                    regular[r.below(regular.len() as u64) as usize]
                } else {
                    r.below(v.drugs as u64)
                };
                let c = (!r.chance(n.drug_code)).then(|| code('M', c));
                let q = (!r.chance(n.quantity)).then(|| r.range(1, 6) as f64 / 2.0);
                rows.drugs.push((c, q));
            }
            if kind == "hospital" {
                let len = r.range(0, 14);
                rows.stay = Some((format!("S{claim_id}"), code('G', r.below(v.stays as u64)), date, date + Duration::days(len)));
            }
            for _ in 0..r.weighted(&profile.acts) {
                let c = r.below(v.acts as u64);
                rows.acts.push((!r.chance(n.act_code)).then(|| code('A', c)));
            }
            for k in 0..r.weighted(&profile.diagnoses) {
                let c = r.below(v.diagnoses as u64);
                let dk = if kind == "hospital" && k > 0 { ASSOCIATED } else { MAIN };
                rows.diagnoses.push(((!r.chance(n.diag_code)).then(|| code('D', c)), dk));
            }

            let cid = claim_id.to_string();
            for (c, q) in &rows.drugs {
                drugs.rows.push(vec![cid.clone(), opt(c), q.map(|q| format!("{q}")).unwrap_or_default()]);
            }
            if let Some((sid, sc, s, e)) = &rows.stay {
                stays.rows.push(vec![cid.clone(), sid.clone(), sc.clone(), fmt_date(*s), fmt_date(*e)]);
            }
            for c in &rows.acts {
                acts.rows.push(vec![cid.clone(), opt(c)]);
            }
            for (c, k) in &rows.diagnoses {
                diagnoses.rows.push(vec![cid.clone(), opt(c), k.to_string()]);
            }

            let f = rows.fanouts(claim_pid.is_some());
            truth.central_rows += 1;
            truth.flat_rows += multiplicity(&f, usize::MAX);
            let Some(p) = &claim_pid else { continue };
            seen = true;
            let group = rows.stay.as_ref().map(|s| s.0.clone());
            let mut push = |cohort: &str, e: Event, times: u64| {
                let list = events.get_mut(cohort).expect("known cohort");
                for _ in 0..times {
                    list.push(e.clone());
                }
            };
            if let Some(d) = claim_date {
                for (c, q) in &rows.drugs {
                    if let Some(c) = c {
                        let e = Event::punctual(p, "drug_purchase", c, q.unwrap_or(1.0), ts(d))?;
                        push(DRUG_PURCHASES, e, multiplicity(&f, 1));
                    }
                }
                for c in rows.acts.iter().flatten() {
                    let e = Event::punctual(p, "medical_act", c, 1.0, ts(d))?.with_group(group.clone());
                    push(ACTS, e, multiplicity(&f, 3));
                }
                for (c, k) in &rows.diagnoses {
                    if let Some(c) = c {
                        let cat = if *k == MAIN { "diagnosis_main" } else { "diagnosis_associated" };
                        let e = Event::punctual(p, cat, c, 1.0, ts(d))?.with_group(group.clone());
                        push(DIAGNOSES, e, multiplicity(&f, 4));
                    }
                }
            }
            if let Some((sid, sc, s, e)) = &rows.stay {
                let ev = Event::continuous(p, "hospital_stay", sc, 1.0, ts(*s), ts(*e))?.with_group(Some(sid.clone()));
                push(HOSPITAL_STAYS, ev, multiplicity(&f, 2));
            }
        }
        if seen {
            truth.patients.push(Patient::new(pid, gender, birth, death)?);
        }
    }
    for e in events.values_mut() {
        cohortforge_core::model::sort_canonical(e);
    }
    truth.events = events;
    Ok(Corpus {
        config: cfg.clone(),
        tables: vec![claims, patients, drugs, stays, acts, diagnoses, billing],
        truth,
    })
}

/// The outcome sites shipped with the generated extraction config.
pub fn outcome_sites() -> Vec<OutcomeSite> {
    let set = |p: char, r: std::ops::Range<u64>| r.map(|i| code(p, i)).collect();
    vec![
        OutcomeSite {
            label: "femur".into(),
            act_codes: set('A', 0..3),
            diagnosis_codes: set('D', 0..3),
        },
        OutcomeSite {
            label: "wrist".into(),
            act_codes: set('A', 3..5),
            diagnosis_codes: set('D', 3..5),
        },
    ]
}

fn extractor(cohort: &str, name: &str, category: &str, columns: ColumnMap) -> ExtractorEntry {
    ExtractorEntry {
        cohort: cohort.into(),
        spec: ExtractorSpec::new(name, category, columns),
        allow_files: BTreeMap::new(),
    }
}

fn filtered(mut e: ExtractorEntry, kind: &str) -> ExtractorEntry {
    e.spec = e.spec.with_filter("diag_kind", &[kind]);
    e
}

fn cols(value: &str, start: &str, end: Option<&str>, group: Option<&str>, weight: Option<&str>) -> ColumnMap {
    ColumnMap {
        patient_id: "patient_id".into(),
        value: value.into(),
        start: start.into(),
        end: end.map(Into::into),
        group_id: group.map(Into::into),
        weight: weight.map(Into::into),
    }
}

impl Corpus {
    pub fn schema(&self) -> SchemaFile {
        SchemaFile {
            tables: self.tables.iter().map(|t| t.decl.clone()).collect(),
        }
    }

    pub fn flatten_config(&self) -> FlattenConfig {
        FlattenConfig {
            input_dir: ".".into(),
            schema: SCHEMA_FILE.into(),
            delimiter: ',',
            central: "claims".into(),
            slice_column: Some("claim_date".into()),
            slice_unit: TimeUnit::Month,
            column_prefix: ColumnPrefix::Collisions,
            sparsity_threshold: DEFAULT_SPARSITY_THRESHOLD,
            strict: false,
            dimensions: None,
        }
    }

    pub fn extract_config(&self) -> Result<ExtractConfig> {
        let mut stays = extractor(HOSPITAL_STAYS, "hospital_stays", "hospital_stay", cols("stay_code", "stay_start", Some("stay_end"), Some("stay_id"), None));
        stays.spec.null_filter.push("stay_end".into());
        let start = parse_date(&self.config.study_start)?;
        let cutoff = start.with_day(1).expect("day 1") + chrono::Months::new(6);
        Ok(ExtractConfig {
            input: None,
            study_start: self.config.study_start.clone(),
            study_end: self.config.study_end.clone(),
            patients: PatientColumns::default(),
            extractors: vec![
                extractor(DRUG_PURCHASES, "drug_purchases", "drug_purchase", cols("drug_code", "claim_date", None, None, Some("quantity"))),
                extractor(ACTS, "medical_acts", "medical_act", cols("act_code", "claim_date", None, Some("stay_id"), None)),
                filtered(extractor(DIAGNOSES, "main_diagnoses", "diagnosis_main", cols("diag_code", "claim_date", None, Some("stay_id"), None)), MAIN),
                filtered(extractor(DIAGNOSES, "associated_diagnoses", "diagnosis_associated", cols("diag_code", "claim_date", None, Some("stay_id"), None)), ASSOCIATED),
                stays,
            ],
            trackloss: TracklossEntry::default(),
            follow_up: FollowUpSpec { delay_days: 0 },
            exposure: ExposureEntry::default(),
            outcome: Some(OutcomeEntry {
                name: "fractures".into(),
                acts: ACTS.into(),
                diagnoses: DIAGNOSES.into(),
                diagnosis_category: "diagnosis_main".into(),
                sites: outcome_sites(),
                codes_file: None,
            }),
            prevalent: Some(PrevalentEntry {
                cutoff: fmt_date(cutoff),
                input: DRUG_PURCHASES.into(),
                codes: None,
            }),
        })
    }

    /// Writes every table as CSV plus the schema, flattening, extraction and
    /// generator configs. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            out.push(p);
            Ok(())
        };
        for t in &self.tables {
            put(&t.decl.file, t.to_csv()?)?;
        }
        put(SCHEMA_FILE, to_toml(&self.schema())?.into_bytes())?;
        put(FLATTEN_FILE, to_toml(&self.flatten_config())?.into_bytes())?;
        put(EXTRACT_FILE, to_toml(&self.extract_config()?)?.into_bytes())?;
        put(SYNTH_FILE, to_toml(&self.config)?.into_bytes())?;
        Ok(out)
    }
}

pub fn to_toml<T: serde::Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_population() {
        let c = generate(&SynthConfig {
            n_patients: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(c.truth.patients.is_empty());
        assert!(c.truth.events.values().all(Vec::is_empty));
        assert!(c.tables.iter().all(|t| t.rows.is_empty()));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            n_patients: 50,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.tables.iter().zip(&b.tables) {
            assert_eq!(x.to_csv().unwrap(), y.to_csv().unwrap());
        }
        assert_eq!(a.truth, b.truth);
        let c = generate(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.tables[0].to_csv().unwrap(), c.tables[0].to_csv().unwrap());
    }

    #[test]
    fn multiplicity_is_product_of_others() {
        assert_eq!(multiplicity(&[1, 2, 1, 3, 0], 1), 3);
        assert_eq!(multiplicity(&[1, 2, 1, 3, 0], usize::MAX), 6);
        assert_eq!(multiplicity(&[0, 0, 0, 0, 0], usize::MAX), 1);
    }
}
