//! Descriptive statistics over cohorts, with a registry that caches results
//! per cohort, and attrition flowcharts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortFlow};
use crate::error::{Error, Result};
use crate::extract::lineage::Lineage;
use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub stat_name: String,
    pub cohort_name: String,
    pub key_names: Vec<String>,
    pub rows: Vec<(Vec<String>, f64)>,
    pub x_label: String,
    pub y_label: String,
}

impl StatReport {
    pub fn total(&self) -> f64 {
        self.rows.iter().map(|(_, v)| v).sum()
    }

    pub fn get(&self, key: &[&str]) -> Option<f64> {
        self.rows
            .iter()
            .find(|(k, _)| k.iter().map(String::as_str).eq(key.iter().copied()))
            .map(|(_, v)| *v)
    }

    /// `key1,...,value` with a header row.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.key_names.iter().map(String::as_str).collect();
        header.push("value");
        w.write_record(&header)?;
        for (k, v) in &self.rows {
            let mut rec: Vec<String> = k.clone();
            rec.push(render_number(*v));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<stats csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{} on {}: {} rows, total {} ({} by {})",
            self.stat_name,
            self.cohort_name,
            self.rows.len(),
            render_number(self.total()),
            self.y_label,
            self.x_label
        )
    }
}

fn render_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Parameters shared by all statistics of a registry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatParams {
    /// Age reference; the cohort window start when unset.
    pub reference_date: Option<Timestamp>,
    pub bucket_years: u32,
}

impl Default for StatParams {
    fn default() -> Self {
        Self {
            reference_date: None,
            bucket_years: 5,
        }
    }
}

pub type StatFn = dyn Fn(&Cohort, &StatParams) -> StatReport + Send + Sync;

pub struct StatsRegistry {
    params: StatParams,
    stats: RwLock<BTreeMap<String, Arc<StatFn>>>,
    cache: Mutex<HashMap<(u64, String), Arc<StatReport>>>,
    computes: AtomicU64,
}

pub const BUILTIN_STATS: [&str; 8] = [
    "distribution_by_gender_age_bucket",
    "distribution_by_gender",
    "events_per_subject",
    "distinct_codes",
    "events_per_month",
    "duration_histogram",
    "events_per_category",
    "subjects_per_code",
];

impl StatsRegistry {
    pub fn empty(params: StatParams) -> Self {
        Self {
            params,
            stats: RwLock::new(BTreeMap::new()),
            cache: Mutex::new(HashMap::new()),
            computes: AtomicU64::new(0),
        }
    }

    pub fn with_builtins(params: StatParams) -> Self {
        let r = Self::empty(params);
        let fns: [fn(&Cohort, &StatParams) -> StatReport; 8] = [
            distribution_by_gender_age_bucket,
            distribution_by_gender,
            events_per_subject,
            distinct_codes,
            events_per_month,
            duration_histogram,
            events_per_category,
            subjects_per_code,
        ];
        for (name, f) in BUILTIN_STATS.iter().zip(fns) {
            r.register(name, f).expect("builtin names are unique");
        }
        r
    }

    pub fn register<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&Cohort, &StatParams) -> StatReport + Send + Sync + 'static,
    {
        let mut stats = self.stats.write().expect("stats registry");
        if stats.contains_key(name) {
            return Err(Error::Duplicate(format!("statistic `{name}`")));
        }
        stats.insert(name.to_string(), Arc::new(f));
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.stats.read().expect("stats registry").keys().cloned().collect()
    }

    /// Computes or returns the cached report for this cohort identity.
    pub fn compute(&self, name: &str, cohort: &Cohort) -> Result<Arc<StatReport>> {
        let key = (cohort.id(), name.to_string());
        if let Some(r) = self.cache.lock().expect("stats cache").get(&key) {
            return Ok(Arc::clone(r));
        }
        let f = self
            .stats
            .read()
            .expect("stats registry")
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("unknown statistic `{name}`")))?;
        let report = Arc::new(f(cohort, &self.params));
        self.computes.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.cache.lock().expect("stats cache");
        Ok(Arc::clone(cache.entry(key).or_insert(report)))
    }

    pub fn compute_count(&self) -> u64 {
        self.computes.load(Ordering::Relaxed)
    }
}

fn report<K: ToKey>(stat: &str, c: &Cohort, keys: &[&str], x: &str, y: &str, rows: BTreeMap<K, f64>) -> StatReport {
    StatReport {
        stat_name: stat.into(),
        cohort_name: c.name().into(),
        key_names: keys.iter().map(|s| s.to_string()).collect(),
        rows: rows.into_iter().map(|(k, v)| (k.to_key(), v)).collect(),
        x_label: x.into(),
        y_label: y.into(),
    }
}

trait ToKey {
    fn to_key(&self) -> Vec<String>;
}

impl ToKey for String {
    fn to_key(&self) -> Vec<String> {
        vec![self.clone()]
    }
}

impl ToKey for i64 {
    fn to_key(&self) -> Vec<String> {
        vec![self.to_string()]
    }
}

impl ToKey for (String, String) {
    fn to_key(&self) -> Vec<String> {
        vec![self.0.clone(), self.1.clone()]
    }
}

impl ToKey for (String, i64) {
    fn to_key(&self) -> Vec<String> {
        vec![self.0.clone(), self.1.to_string()]
    }
}

/// Whole years from `birth` to `at`.
pub fn age_years(birth: chrono::NaiveDate, at: chrono::NaiveDate) -> i64 {
    let mut years = (at.year() - birth.year()) as i64;
    if (at.month(), at.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    years
}

pub fn distribution_by_gender_age_bucket(c: &Cohort, p: &StatParams) -> StatReport {
    let at = p.reference_date.unwrap_or(c.window().0).date();
    let width = p.bucket_years.max(1) as i64;
    let mut rows: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for s in c.subjects() {
        let bucket = age_years(s.birth_date, at).div_euclid(width) * width;
        *rows.entry((s.gender.label().to_string(), bucket)).or_default() += 1.0;
    }
    report("distribution_by_gender_age_bucket", c, &["gender", "age_bucket"], "age bucket", "subjects", rows)
}

pub fn distribution_by_gender(c: &Cohort, _: &StatParams) -> StatReport {
    let mut rows: BTreeMap<String, f64> = BTreeMap::new();
    for s in c.subjects() {
        *rows.entry(s.gender.label().to_string()).or_default() += 1.0;
    }
    report("distribution_by_gender", c, &["gender"], "gender", "subjects", rows)
}

/// Number of subjects per event count, including subjects without events.
pub fn events_per_subject(c: &Cohort, _: &StatParams) -> StatReport {
    let mut per: HashMap<&str, i64> = c.subjects().map(|s| (s.patient_id.as_str(), 0)).collect();
    for e in c.events() {
        *per.entry(&e.patient_id).or_default() += 1;
    }
    let mut rows: BTreeMap<i64, f64> = BTreeMap::new();
    for n in per.into_values() {
        *rows.entry(n).or_default() += 1.0;
    }
    report("events_per_subject", c, &["events"], "events", "subjects", rows)
}

pub fn distinct_codes(c: &Cohort, _: &StatParams) -> StatReport {
    let mut sets: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for e in c.events() {
        sets.entry(e.category.clone()).or_default().insert(&e.value);
    }
    let rows = sets.into_iter().map(|(k, v)| (k, v.len() as f64)).collect();
    report("distinct_codes", c, &["category"], "category", "distinct codes", rows)
}

pub fn events_per_month(c: &Cohort, _: &StatParams) -> StatReport {
    let mut rows: BTreeMap<String, f64> = BTreeMap::new();
    for e in c.events() {
        *rows.entry(format!("{:04}-{:02}", e.start.year(), e.start.month())).or_default() += 1.0;
    }
    report("events_per_month", c, &["month"], "month", "events", rows)
}

/// Events per whole-day duration; punctual events count as 0 days.
pub fn duration_histogram(c: &Cohort, _: &StatParams) -> StatReport {
    let mut rows: BTreeMap<i64, f64> = BTreeMap::new();
    for e in c.events() {
        let days = (e.end_or_start().unix_seconds() - e.start.unix_seconds()).div_euclid(86_400);
        *rows.entry(days).or_default() += 1.0;
    }
    report("duration_histogram", c, &["duration_days"], "duration (days)", "events", rows)
}

pub fn events_per_category(c: &Cohort, _: &StatParams) -> StatReport {
    let mut rows: BTreeMap<String, f64> = BTreeMap::new();
    for e in c.events() {
        *rows.entry(e.category.clone()).or_default() += 1.0;
    }
    report("events_per_category", c, &["category"], "category", "events", rows)
}

pub fn subjects_per_code(c: &Cohort, _: &StatParams) -> StatReport {
    let mut sets: BTreeMap<(String, String), BTreeSet<&str>> = BTreeMap::new();
    for e in c.events() {
        sets.entry((e.category.clone(), e.value.clone()))
            .or_default()
            .insert(&e.patient_id);
    }
    let rows = sets.into_iter().map(|(k, v)| (k, v.len() as f64)).collect();
    report("subjects_per_code", c, &["category", "code"], "code", "subjects", rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flowchart {
    pub stages: Vec<(String, u64)>,
    /// `transitions[i]` leads into stage `i + 1`: (dropped, rationale).
    pub transitions: Vec<(u64, String)>,
}

impl Flowchart {
    fn build(stages: Vec<(String, u64)>, rationales: Vec<String>) -> Result<Self> {
        let mut transitions = Vec::new();
        for (w, why) in stages.windows(2).zip(rationales) {
            let dropped = w[0].1.checked_sub(w[1].1).ok_or_else(|| {
                Error::Validation(format!(
                    "stage `{}` has more subjects ({}) than `{}` ({})",
                    w[1].0, w[1].1, w[0].0, w[0].1
                ))
            })?;
            transitions.push((dropped, why));
        }
        Ok(Self { stages, transitions })
    }

    /// One line per stage: `name<TAB>count<TAB>dropped<TAB>rationale`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (name, count)) in self.stages.iter().enumerate() {
            let (dropped, why) = match i {
                0 => (0, "initial population"),
                _ => {
                    let t = &self.transitions[i - 1];
                    (t.0, t.1.as_str())
                }
            };
            writeln!(s, "{name}\t{count}\t{dropped}\t{why}").expect("string write");
        }
        s
    }
}

pub fn flowchart_from_flow(f: &CohortFlow) -> Flowchart {
    let stages = f
        .steps()
        .enumerate()
        .map(|(i, c)| (stage_name(i, c), c.subject_count() as u64))
        .collect();
    Flowchart::build(stages, f.rationales().to_vec()).expect("intersections never grow")
}

fn stage_name(i: usize, c: &Cohort) -> String {
    match c.operations().last() {
        Some(op) if i > 0 => op.operand.clone(),
        _ => c.name().to_string(),
    }
}

/// Flowchart of the attrition recorded during extraction.
pub fn flowchart_from_metadata(doc: &Lineage) -> Result<Flowchart> {
    if doc.attrition.is_empty() {
        return Err(Error::Validation("lineage document records no attrition".into()));
    }
    let stages = doc.attrition.iter().map(|s| (s.name.clone(), s.subjects)).collect();
    let rationales = doc.attrition.iter().skip(1).map(|s| s.rationale.clone()).collect();
    Flowchart::build(stages, rationales)
}
