//! Extractors turn flat-table rows into standardized events; transformers
//! derive richer events from those.
//!
//! An extractor always runs the same four steps: project the referenced
//! columns, drop rows with nulls in the configured columns, keep rows whose
//! filter columns hold an allowed value, then conform each row into zero or
//! more [`Event`]s.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sort_canonical, Event, Timestamp};
use crate::table::{date_from_days, Cell, Table, Value};

pub mod lineage;
pub mod patients;
pub mod transform;

pub use lineage::{Lineage, LineageEntry, SourceRef};
pub use patients::{extract_patients, PatientColumns, PatientStats};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub patient_id: String,
    pub value: String,
    pub start: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
}

impl ColumnMap {
    pub fn referenced(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for c in [&self.patient_id, &self.value, &self.start] {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        for c in [&self.end, &self.group_id, &self.weight].into_iter().flatten() {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        cols
    }
}

/// Rows survive when `column` holds one of `allow`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueFilter {
    pub column: String,
    pub allow: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMissingCode {
    #[default]
    Error,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub name: String,
    pub category: String,
    pub columns: ColumnMap,
    #[serde(default)]
    pub null_filter: Vec<String>,
    #[serde(default)]
    pub value_filters: Vec<ValueFilter>,
    /// Raw code to emitted codes. A code mapping to several classes yields
    /// one event per class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub on_missing_code: OnMissingCode,
}

impl ExtractorSpec {
    pub fn new(name: impl Into<String>, category: impl Into<String>, columns: ColumnMap) -> Self {
        let null_filter = vec![columns.patient_id.clone(), columns.value.clone(), columns.start.clone()];
        Self {
            name: name.into(),
            category: category.into(),
            columns,
            null_filter,
            value_filters: Vec::new(),
            granularity: None,
            on_missing_code: OnMissingCode::Error,
        }
    }

    pub fn with_filter(mut self, column: impl Into<String>, allow: &[&str]) -> Self {
        self.value_filters.push(ValueFilter {
            column: column.into(),
            allow: allow.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    /// Every column the extractor reads, in first-use order.
    pub fn referenced_columns(&self) -> Vec<String> {
        let mut cols = self.columns.referenced();
        for c in self
            .null_filter
            .iter()
            .chain(self.value_filters.iter().map(|f| &f.column))
        {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.category.is_empty() {
            return Err(Error::Config("extractor needs a name and a category".into()));
        }
        if let Some(g) = &self.granularity {
            if let Some((raw, _)) = g.iter().find(|(_, v)| v.is_empty()) {
                return Err(Error::Config(format!(
                    "extractor `{}`: granularity entry `{raw}` maps to no code",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorStats {
    pub input_rows: u64,
    pub after_null_filter: u64,
    pub after_value_filter: u64,
    pub events: u64,
    pub missing_code_rows: u64,
}

impl ExtractorStats {
    fn add(&mut self, o: &ExtractorStats) {
        self.input_rows += o.input_rows;
        self.after_null_filter += o.after_null_filter;
        self.after_value_filter += o.after_value_filter;
        self.events += o.events;
        self.missing_code_rows += o.missing_code_rows;
    }
}

/// Runs one extractor over one table. Output is in row order.
pub fn run_extractor(flat: &Table, spec: &ExtractorSpec) -> Result<(Vec<Event>, ExtractorStats)> {
    spec.validate()?;
    let mut stats = ExtractorStats {
        input_rows: flat.num_rows() as u64,
        ..Default::default()
    };
    let t = flat.project(&spec.referenced_columns())?;
    let t = t.drop_null_rows(&spec.null_filter)?;
    stats.after_null_filter = t.num_rows() as u64;
    let mut t = t;
    for f in &spec.value_filters {
        let dtype = t.schema().field(&f.column).expect("projected").dtype;
        let allow = f
            .allow
            .iter()
            .map(|s| Value::parse_as(dtype, s))
            .collect::<Result<Vec<_>>>()?;
        t = t.filter_rows(&f.column, &allow)?;
    }
    stats.after_value_filter = t.num_rows() as u64;

    let schema = t.schema();
    let idx = |name: &str| schema.require(name);
    let c = &spec.columns;
    let pid = idx(&c.patient_id)?;
    let val = idx(&c.value)?;
    let start = idx(&c.start)?;
    let end = c.end.as_deref().map(idx).transpose()?;
    let group = c.group_id.as_deref().map(idx).transpose()?;
    let weight = c.weight.as_deref().map(idx).transpose()?;

    let mut events = Vec::with_capacity(t.num_rows());
    for row in 0..t.num_rows() {
        let type_err = |column: &str, message: String| Error::Type {
            row: row + 1,
            column: column.to_string(),
            message,
        };
        let required = |ci: usize, name: &str| {
            t.cell(row, ci)
                .render()
                .ok_or_else(|| type_err(name, "required field is null".into()))
        };
        let patient_id = required(pid, &c.patient_id)?;
        let raw_value = required(val, &c.value)?;
        let start_ts = to_timestamp(t.cell(row, start))
            .map_err(|m| type_err(&c.start, m))?
            .ok_or_else(|| type_err(&c.start, "required field is null".into()))?;
        let end_ts = match end {
            Some(ci) => to_timestamp(t.cell(row, ci))
                .map_err(|m| type_err(c.end.as_deref().unwrap_or_default(), m))?,
            None => None,
        };
        let group_id = group.and_then(|ci| t.cell(row, ci).render());
        let w = match weight {
            Some(ci) => match t.cell(row, ci) {
                Cell::Null => 1.0,
                Cell::Int(v) => v as f64,
                Cell::Float(v) => v,
                other => {
                    return Err(type_err(
                        c.weight.as_deref().unwrap_or_default(),
                        format!("weight must be numeric, found {other:?}"),
                    ))
                }
            },
            None => 1.0,
        };

        let codes: Vec<String> = match &spec.granularity {
            None => vec![raw_value],
            Some(map) => match map.get(&raw_value) {
                Some(v) => v.clone(),
                None => match spec.on_missing_code {
                    OnMissingCode::Skip => {
                        stats.missing_code_rows += 1;
                        continue;
                    }
                    OnMissingCode::Error => {
                        return Err(Error::Validation(format!(
                            "extractor `{}`: code `{raw_value}` is missing from the granularity map",
                            spec.name
                        )))
                    }
                },
            },
        };
        for code in codes {
            let e = Event {
                patient_id: patient_id.clone(),
                category: spec.category.clone(),
                group_id: group_id.clone(),
                value: code,
                weight: w,
                start: start_ts,
                end: end_ts,
            };
            e.validate().map_err(|err| type_err(&c.start, err.to_string()))?;
            events.push(e);
        }
    }
    stats.events = events.len() as u64;
    Ok((events, stats))
}

/// Runs an extractor over every slice in parallel and returns the events in
/// canonical order, so the result does not depend on slicing or workers.
pub fn run_extractor_slices(
    slices: &[Table],
    spec: &ExtractorSpec,
) -> Result<(Vec<Event>, ExtractorStats)> {
    let parts: Vec<(Vec<Event>, ExtractorStats)> = slices
        .par_iter()
        .map(|t| run_extractor(t, spec))
        .collect::<Result<_>>()?;
    let mut stats = ExtractorStats::default();
    let mut events = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    for (e, s) in parts {
        stats.add(&s);
        events.extend(e);
    }
    sort_canonical(&mut events);
    Ok((events, stats))
}

fn to_timestamp(cell: Cell<'_>) -> std::result::Result<Option<Timestamp>, String> {
    match cell {
        Cell::Null => Ok(None),
        Cell::Date(d) => Ok(Some(Timestamp::from_date(date_from_days(d)))),
        Cell::Str(s) => Timestamp::parse(s).map(|t| Some(t.to_utc())).map_err(|e| e.to_string()),
        other => Err(format!("expected a date, found {other:?}")),
    }
}
