//! Reference extraction over the normalized CSV tables.
//!
//! Deliberately naive: rows are strings, each central row is joined to its
//! dimension rows by plain nested iteration (dimension rows are indexed by
//! key so the loops stay tractable), and every transformer is written from
//! its textual definition. Exposures are computed by rasterizing covered
//! days on a half-day grid rather than by merging intervals.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{Months, NaiveDate};

use cohortforge_core::config::{ExtractConfig, FlattenPlan};
use cohortforge_core::extract::transform::{ExposureSpec, ExposureStrategy, OutcomeSite};
use cohortforge_core::extract::{ExtractorSpec, OnMissingCode};
use cohortforge_core::model::sort_canonical;
use cohortforge_core::table::{ColumnSchema, DataType};
use cohortforge_core::{Error, Event, Gender, Patient, Result, Timestamp};

/// A table as lists of normalized text cells; `None` is a null.
#[derive(Debug, Clone, Default)]
pub struct RawTable {
    pub columns: Vec<ColumnSchema>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` not found")))
    }
}

/// Canonical text for a cell of the given type, `None` for null or
/// unparseable input.
pub fn normalize(dtype: DataType, raw: &str) -> Option<String> {
    if raw.is_empty() {
        return None;
    }
    match dtype {
        DataType::Int64 => raw.trim().parse::<i64>().ok().map(|v| v.to_string()),
        DataType::Float64 => raw.trim().parse::<f64>().ok().map(|v| format!("{v:?}")),
        DataType::Date => NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").ok().map(|d| d.to_string()),
        DataType::Utf8 => Some(raw.to_string()),
    }
}

pub fn read_table(path: &Path, columns: &[ColumnSchema], delimiter: u8) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new().delimiter(delimiter).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let pos: Vec<usize> = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("{}: missing column `{}`", path.display(), c.name)))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(columns.len());
        for (c, &p) in columns.iter().zip(&pos) {
            let raw = rec.get(p).unwrap_or("");
            let v = normalize(c.dtype, raw);
            if v.is_none() && !c.nullable {
                return Err(Error::SchemaMismatch(format!(
                    "{}: null or bad value `{raw}` in non-nullable column `{}`",
                    path.display(),
                    c.name
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(RawTable {
        columns: columns.to_vec(),
        rows,
    })
}

/// Central table first, then dimensions in join order.
pub fn read_tables(plan: &FlattenPlan) -> Result<Vec<(String, RawTable, Vec<(String, String)>)>> {
    let join = plan.join_spec()?;
    let mut out = Vec::new();
    let central = plan.schema.table(&join.central)?;
    out.push((join.central.clone(), read_table(&plan.csv_path(&join.central)?, &central.columns, plan.delimiter()?)?, Vec::new()));
    for d in &join.dimensions {
        let decl = plan.schema.table(&d.table)?;
        out.push((d.table.clone(), read_table(&plan.csv_path(&d.table)?, &decl.columns, plan.delimiter()?)?, d.keys.clone()));
    }
    Ok(out)
}

/// Everything the extract phase produces, re-derived independently.
#[derive(Debug, Clone, Default)]
pub struct OracleOutput {
    pub central_rows: u64,
    pub flat_rows: u64,
    pub patients: Vec<Patient>,
    /// Extractor cohorts and transformer outputs by cohort name.
    pub events: BTreeMap<String, Vec<Event>>,
    pub prevalent: Option<BTreeSet<String>>,
}

#[derive(Default)]
struct Votes {
    male: u32,
    female: u32,
    births: BTreeMap<NaiveDate, u32>,
    deaths: Vec<NaiveDate>,
}

struct Joiner {
    columns: Vec<(String, DataType)>,
    dims: Vec<Dim>,
}

struct Dim {
    table: RawTable,
    left: Vec<usize>,
    right: Vec<usize>,
    payload: Vec<usize>,
    index: HashMap<Vec<String>, Vec<usize>>,
}

impl Joiner {
    fn new(tables: &[(String, RawTable, Vec<(String, String)>)]) -> Result<Self> {
        let (_, central, _) = &tables[0];
        let mut columns: Vec<(String, DataType)> = central.columns.iter().map(|c| (c.name.clone(), c.dtype)).collect();
        let mut dims = Vec::new();
        for (name, t, keys) in &tables[1..] {
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (l, r) in keys {
                left.push(
                    columns
                        .iter()
                        .position(|c| c.0 == *l)
                        .ok_or_else(|| Error::SchemaMismatch(format!("join key `{l}` not available for `{name}`")))?,
                );
                right.push(t.index(r)?);
            }
            let payload: Vec<usize> = (0..t.columns.len()).filter(|i| !right.contains(i)).collect();
            for &p in &payload {
                let c = &t.columns[p];
                if columns.iter().any(|x| x.0 == c.name) {
                    return Err(Error::SchemaMismatch(format!(
                        "oracle supports collision-free schemas only; `{}` repeats in `{name}`",
                        c.name
                    )));
                }
                columns.push((c.name.clone(), c.dtype));
            }
            let mut index: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
            for (i, row) in t.rows.iter().enumerate() {
                let key: Option<Vec<String>> = right.iter().map(|&k| row[k].clone()).collect();
                if let Some(k) = key {
                    index.entry(k).or_default().push(i);
                }
            }
            dims.push(Dim {
                table: t.clone(),
                left,
                right,
                payload,
                index,
            });
        }
        Ok(Self { columns, dims })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.0 == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("flat column `{name}` does not exist")))
    }

    /// All flat rows produced by one central row.
    fn expand(&self, central: &[Option<String>]) -> Vec<Vec<Option<String>>> {
        let mut rows = vec![central.to_vec()];
        for d in &self.dims {
            let mut next = Vec::new();
            for row in rows {
                let key: Option<Vec<String>> = d.left.iter().map(|&i| row[i].clone()).collect();
                let matches = key.and_then(|k| d.index.get(&k)).cloned().unwrap_or_default();
                debug_assert!(matches.iter().all(|&m| d.right.iter().zip(&d.left).all(|(&r, &l)| d.table.rows[m][r] == row[l])));
                if matches.is_empty() {
                    let mut r = row.clone();
                    r.extend(d.payload.iter().map(|_| None));
                    next.push(r);
                } else {
                    for m in matches {
                        let mut r = row.clone();
                        r.extend(d.payload.iter().map(|&p| d.table.rows[m][p].clone()));
                        next.push(r);
                    }
                }
            }
            rows = next;
        }
        rows
    }
}

fn to_ts(dtype: DataType, s: &str) -> Result<Timestamp> {
    match dtype {
        DataType::Date => Ok(Timestamp::from_date(
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Validation(e.to_string()))?,
        )),
        DataType::Utf8 => Ok(Timestamp::parse(s)?.to_utc()),
        other => Err(Error::SchemaMismatch(format!("{other} column used as a date"))),
    }
}

fn apply_extractor(j: &Joiner, spec: &ExtractorSpec, row: &[Option<String>], out: &mut Vec<Event>) -> Result<()> {
    for c in &spec.null_filter {
        if row[j.col(c)?].is_none() {
            return Ok(());
        }
    }
    for f in &spec.value_filters {
        let i = j.col(&f.column)?;
        let dtype = j.columns[i].1;
        let Some(v) = &row[i] else { return Ok(()) };
        if !f.allow.iter().any(|a| normalize(dtype, a).as_ref() == Some(v)) {
            return Ok(());
        }
    }
    let c = &spec.columns;
    let get = |name: &str| -> Result<(Option<String>, DataType)> {
        let i = j.col(name)?;
        Ok((row[i].clone(), j.columns[i].1))
    };
    let (Some(pid), _) = get(&c.patient_id)? else {
        return Err(Error::Validation("null patient".into()));
    };
    let (Some(raw), _) = get(&c.value)? else {
        return Err(Error::Validation("null value".into()));
    };
    let (Some(s), st) = get(&c.start)? else {
        return Err(Error::Validation("null start".into()));
    };
    let start = to_ts(st, &s)?;
    let end = match &c.end {
        Some(e) => match get(e)? {
            (Some(v), t) => Some(to_ts(t, &v)?),
            (None, _) => None,
        },
        None => None,
    };
    let group = match &c.group_id {
        Some(g) => get(g)?.0,
        None => None,
    };
    let weight = match &c.weight {
        Some(w) => match get(w)?.0 {
            Some(v) => v.parse::<f64>().map_err(|e| Error::Validation(e.to_string()))?,
            None => 1.0,
        },
        None => 1.0,
    };
    let codes = match &spec.granularity {
        None => vec![raw],
        Some(m) => match (m.get(&raw), spec.on_missing_code) {
            (Some(v), _) => v.clone(),
            (None, OnMissingCode::Skip) => return Ok(()),
            (None, OnMissingCode::Error) => return Err(Error::Validation(format!("unmapped code `{raw}`"))),
        },
    };
    for v in codes {
        out.push(Event {
            patient_id: pid.clone(),
            category: spec.category.clone(),
            group_id: group.clone(),
            value: v,
            weight,
            start,
            end,
        });
    }
    Ok(())
}

fn date(ts: Timestamp) -> NaiveDate {
    ts.date()
}

fn day_ts(d: NaiveDate) -> Timestamp {
    Timestamp::from_date(d)
}

/// Runs every extractor and transformer of `cfg` over the normalized tables
/// described by `plan`.
pub fn oracle_extract(plan: &FlattenPlan, cfg: &ExtractConfig) -> Result<OracleOutput> {
    let tables = read_tables(plan)?;
    oracle_extract_tables(&tables, cfg)
}

pub fn oracle_extract_tables(tables: &[(String, RawTable, Vec<(String, String)>)], cfg: &ExtractConfig) -> Result<OracleOutput> {
    let j = Joiner::new(tables)?;
    let pc = &cfg.patients;
    let (pid_c, g_c, b_c, d_c) = (j.col(&pc.patient_id)?, j.col(&pc.gender)?, j.col(&pc.birth_date)?, j.col(&pc.death_date)?);
    let mut out = OracleOutput::default();
    let mut votes: BTreeMap<String, Votes> = BTreeMap::new();
    let mut raw: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for e in &cfg.extractors {
        raw.entry(e.cohort.clone()).or_default();
    }

    for central in &tables[0].1.rows {
        out.central_rows += 1;
        for row in j.expand(central) {
            out.flat_rows += 1;
            if let Some(p) = &row[pid_c] {
                let v = votes.entry(p.clone()).or_default();
                match row[g_c].as_deref() {
                    Some("1") => v.male += 1,
                    Some("2") => v.female += 1,
                    _ => {}
                }
                let as_date = |i: usize| row[i].as_deref().and_then(|s| to_ts(j.columns[i].1, s).ok()).map(date);
                if let Some(b) = as_date(b_c) {
                    *v.births.entry(b).or_default() += 1;
                }
                if let Some(d) = as_date(d_c) {
                    v.deaths.push(d);
                }
            }
            for e in &cfg.extractors {
                apply_extractor(&j, &e.spec, &row, raw.get_mut(&e.cohort).expect("seeded"))?;
            }
        }
    }

    for (id, v) in votes {
        let mut birth: Option<(NaiveDate, u32)> = None;
        for (d, n) in v.births {
            if birth.is_none_or(|(_, m)| n > m) {
                birth = Some((d, n));
            }
        }
        let Some((birth, _)) = birth else { continue };
        let gender = if v.male > v.female {
            Gender::Male
        } else if v.female > v.male {
            Gender::Female
        } else {
            Gender::Unknown
        };
        out.patients.push(Patient::new(id, gender, birth, v.deaths.into_iter().min())?);
    }
    let known: BTreeSet<&str> = out.patients.iter().map(|p| p.patient_id.as_str()).collect();
    for evs in raw.values_mut() {
        evs.retain(|e| known.contains(e.patient_id.as_str()));
        sort_canonical(evs);
    }

    let study_start = Timestamp::parse(&cfg.study_start)?;
    let study_end = Timestamp::parse(&cfg.study_end)?;
    let input = |n: &str| raw.get(n).cloned().ok_or_else(|| Error::Config(format!("no cohort `{n}`")));
    let all: Vec<Event> = raw.values().flatten().cloned().collect();
    let obs = observation(&all, study_start, study_end);
    let drugs = input(&cfg.trackloss.input)?;
    let lost = trackloss(&drugs, study_end, cfg.trackloss.spec.gap_months, cfg.trackloss.spec.purchase_duration);
    let fu = follow_up(&out.patients, &obs, &lost, cfg.follow_up.delay_days);
    let exp = exposure(&input(&cfg.exposure.input)?, &fu, cfg.exposure.spec);
    let mut events = raw.clone();
    events.insert("observation_period".into(), obs);
    events.insert("trackloss".into(), lost);
    events.insert("follow_up".into(), fu);
    events.insert("exposures".into(), exp);
    if let Some(o) = &cfg.outcome {
        let main: Vec<Event> = input(&o.diagnoses)?.into_iter().filter(|d| d.category == o.diagnosis_category).collect();
        events.insert(o.name.clone(), outcome(&input(&o.acts)?, &main, &o.sites));
    }
    if let Some(p) = &cfg.prevalent {
        let cutoff = Timestamp::parse(&p.cutoff)?;
        out.prevalent = Some(prevalent(&input(&p.input)?, cutoff, p.codes.as_ref()));
    }
    for e in events.values_mut() {
        sort_canonical(e);
    }
    out.events = events;
    Ok(out)
}

fn patients_of(events: &[Event]) -> BTreeMap<&str, Vec<&Event>> {
    let mut m: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in events {
        m.entry(&e.patient_id).or_default().push(e);
    }
    m
}

pub fn observation(events: &[Event], study_start: Timestamp, study_end: Timestamp) -> Vec<Event> {
    let mut out = Vec::new();
    for (p, evs) in patients_of(events) {
        let first = evs.iter().map(|e| e.start).min().expect("non-empty");
        let s = if first > study_start { first } else { study_start };
        if s <= study_end {
            out.push(cont(p, "observation_period", "observation_period", s, study_end));
        }
    }
    out
}

fn cont(p: &str, cat: &str, value: &str, s: Timestamp, e: Timestamp) -> Event {
    Event {
        patient_id: p.into(),
        category: cat.into(),
        group_id: None,
        value: value.into(),
        weight: 1.0,
        start: s,
        end: Some(e),
    }
}

fn plus_months(d: NaiveDate, m: u32) -> NaiveDate {
    d.checked_add_months(Months::new(m)).expect("in range")
}

pub fn trackloss(dispenses: &[Event], study_end: Timestamp, gap_months: u32, duration: u32) -> Vec<Event> {
    let mut out = Vec::new();
    for (p, evs) in patients_of(dispenses) {
        let mut days: Vec<NaiveDate> = evs.iter().map(|e| date(e.start)).collect();
        days.sort();
        // probe points: every dispense after the first, then the study end
        let mut probes: Vec<NaiveDate> = days[1..].to_vec();
        probes.push(date(study_end));
        for (k, probe) in probes.iter().enumerate() {
            let cover = days[..=k].iter().map(|d| *d + chrono::Duration::days(duration as i64)).max().expect("k+1 dispenses");
            if *probe > plus_months(cover, gap_months) {
                out.push(Event {
                    patient_id: p.into(),
                    category: "trackloss".into(),
                    group_id: None,
                    value: "trackloss".into(),
                    weight: 1.0,
                    start: day_ts(cover),
                    end: None,
                });
                break;
            }
        }
    }
    out
}

pub fn follow_up(patients: &[Patient], obs: &[Event], lost: &[Event], delay: u32) -> Vec<Event> {
    let mut out = Vec::new();
    for o in obs {
        let start = o.start.add_days(delay as i64);
        let mut end = o.end.expect("continuous");
        for p in patients.iter().filter(|p| p.patient_id == o.patient_id) {
            if let Some(d) = p.death_date {
                end = end.min(day_ts(d));
            }
        }
        for t in lost.iter().filter(|t| t.patient_id == o.patient_id) {
            end = end.min(t.start);
        }
        if start <= end {
            out.push(cont(&o.patient_id, "follow_up", "follow_up", start, end));
        }
    }
    out
}

/// Exposure episodes by rasterization: each day is cell `2k`, the boundary
/// after it cell `2k + 1`. A dispense covers cells `2d..=2(d + duration)`;
/// uncovered runs shorter than `2 * gap` between covered cells are filled;
/// each maximal covered run is one candidate episode.
pub fn exposure(dispenses: &[Event], follow_ups: &[Event], spec: ExposureSpec) -> Vec<Event> {
    let mut groups: BTreeMap<(&str, &str), Vec<i64>> = BTreeMap::new();
    for d in dispenses {
        groups.entry((&d.patient_id, &d.value)).or_default().push(d.start.days_since_epoch());
    }
    let mut out = Vec::new();
    for ((p, drug), days) in groups {
        let Some(f) = follow_ups.iter().find(|f| f.patient_id == p) else { continue };
        let (fs, fe) = (f.start.days_since_epoch(), f.end_or_start().days_since_epoch());
        let days: Vec<i64> = days.into_iter().filter(|d| fs <= *d && *d <= fe).collect();
        if days.len() < spec.min_purchases as usize || days.is_empty() {
            continue;
        }
        let first = *days.iter().min().expect("non-empty");
        if spec.strategy == ExposureStrategy::Unlimited {
            out.push(cont(p, "exposure", drug, Timestamp::from_days(first), Timestamp::from_days(fe)));
            continue;
        }
        let dur = spec.purchase_duration as i64;
        let last = days.iter().max().expect("non-empty") + dur;
        let base = 2 * first;
        let mut cells = vec![false; (2 * last - base + 1) as usize];
        for &d in &days {
            for c in 2 * d..=2 * (d + dur) {
                cells[(c - base) as usize] = true;
            }
        }
        let mut i = 0;
        while i < cells.len() {
            if cells[i] {
                i += 1;
                continue;
            }
            let mut k = i;
            while k < cells.len() && !cells[k] {
                k += 1;
            }
            if i > 0 && k < cells.len() && ((k - i) as i64) < 2 * spec.gap_tolerance as i64 {
                cells[i..k].iter_mut().for_each(|c| *c = true);
            }
            i = k;
        }
        let mut i = 0;
        while i < cells.len() {
            if !cells[i] {
                i += 1;
                continue;
            }
            let mut k = i;
            while k < cells.len() && cells[k] {
                k += 1;
            }
            let (s, e) = ((base + i as i64) / 2, (base + k as i64 - 1) / 2);
            let n = days.iter().filter(|&&d| s <= d && d <= e).count();
            if n >= spec.min_purchases as usize {
                out.push(cont(p, "exposure", drug, Timestamp::from_days(s.max(fs)), Timestamp::from_days(e.min(fe))));
            }
            i = k;
        }
    }
    out
}

pub fn outcome(acts: &[Event], main_diagnoses: &[Event], sites: &[OutcomeSite]) -> Vec<Event> {
    let mut found: BTreeMap<(String, String, Option<String>, Option<NaiveDate>), Timestamp> = BTreeMap::new();
    for site in sites {
        for a in acts.iter().filter(|a| site.act_codes.contains(&a.value)) {
            for d in main_diagnoses.iter().filter(|d| site.diagnosis_codes.contains(&d.value)) {
                if a.patient_id != d.patient_id {
                    continue;
                }
                let key = match &a.group_id {
                    Some(g) if d.group_id.as_ref() == Some(g) => (Some(g.clone()), None),
                    None if date(a.start) == date(d.start) => (None, Some(date(a.start))),
                    _ => continue,
                };
                let k = (a.patient_id.clone(), site.label.clone(), key.0, key.1);
                let t = found.entry(k).or_insert(a.start);
                if a.start < *t {
                    *t = a.start;
                }
            }
        }
    }
    found
        .into_iter()
        .map(|((p, label, g, _), t)| Event {
            patient_id: p,
            category: "outcome".into(),
            group_id: g,
            value: label,
            weight: 1.0,
            start: t,
            end: None,
        })
        .collect()
}

pub fn prevalent(dispenses: &[Event], cutoff: Timestamp, codes: Option<&BTreeSet<String>>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (p, evs) in patients_of(dispenses) {
        let first = evs
            .iter()
            .filter(|e| codes.is_none_or(|c| c.contains(&e.value)))
            .map(|e| e.start)
            .min();
        if first.is_some_and(|t| t < cutoff) {
            out.insert(p.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cohortforge_core::extract::ColumnMap;

    fn tables(rows: &[(&str, &str, &str)]) -> Vec<(String, RawTable, Vec<(String, String)>)> {
        let central = RawTable {
            columns: vec![
                ColumnSchema::new("patient_id", DataType::Utf8, true),
                ColumnSchema::new("code", DataType::Utf8, true),
                ColumnSchema::new("day", DataType::Date, true),
            ],
            rows: rows
                .iter()
                .map(|(p, c, d)| vec![normalize(DataType::Utf8, p), normalize(DataType::Utf8, c), normalize(DataType::Date, d)])
                .collect(),
        };
        let patients = RawTable {
            columns: vec![
                ColumnSchema::new("pid", DataType::Utf8, false),
                ColumnSchema::new("gender", DataType::Int64, true),
                ColumnSchema::new("birth_date", DataType::Date, true),
                ColumnSchema::new("death_date", DataType::Date, true),
            ],
            rows: vec![vec![Some("a".into()), Some("1".into()), Some("1950-01-01".into()), None]],
        };
        vec![
            ("c".into(), central, vec![]),
            ("p".into(), patients, vec![("patient_id".into(), "pid".into())]),
        ]
    }

    fn config() -> ExtractConfig {
        let spec = ExtractorSpec::new(
            "x",
            "drug_purchase",
            ColumnMap {
                patient_id: "patient_id".into(),
                value: "code".into(),
                start: "day".into(),
                end: None,
                group_id: None,
                weight: None,
            },
        );
        let text = format!(
            "study_start = \"2010-01-01\"\nstudy_end = \"2010-12-31\"\n[[extractors]]\ncohort = \"drug_purchases\"\n{}",
            toml::to_string(&spec).unwrap().replace("[columns]", "[extractors.columns]")
        );
        ExtractConfig::parse(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn empty_tables_give_nothing() {
        let out = oracle_extract_tables(&tables(&[]), &config()).unwrap();
        assert_eq!(out.flat_rows, 0);
        assert!(out.patients.is_empty());
        assert!(out.events.values().all(Vec::is_empty));
    }

    #[test]
    fn one_matching_row_one_event() {
        let out = oracle_extract_tables(&tables(&[("a", "M1", "2010-02-03"), ("", "M1", "2010-02-03"), ("a", "", "2010-02-03")]), &config()).unwrap();
        assert_eq!(out.flat_rows, 3);
        assert_eq!(out.events["drug_purchases"].len(), 1);
        assert_eq!(out.patients.len(), 1);
        assert_eq!(out.events["observation_period"].len(), 1);
    }

    #[test]
    fn rasterized_gap_boundary() {
        let fu = [cont("a", "follow_up", "follow_up", Timestamp::from_days(0), Timestamp::from_days(1000))];
        let d = |day| Event::punctual("a", "drug_purchase", "X", 1.0, Timestamp::from_days(day)).unwrap();
        let spec = ExposureSpec {
            purchase_duration: 10,
            gap_tolerance: 5,
            ..ExposureSpec::default()
        };
        // covers [0,10]; next dispense at 15 merges, at 16 does not
        assert_eq!(exposure(&[d(0), d(15)], &fu, spec).len(), 1);
        assert_eq!(exposure(&[d(0), d(16)], &fu, spec).len(), 2);
        let tight = ExposureSpec { gap_tolerance: 0, ..spec };
        assert_eq!(exposure(&[d(0), d(11)], &fu, tight).len(), 2);
        assert_eq!(exposure(&[d(0), d(10)], &fu, tight).len(), 1);
    }
}
