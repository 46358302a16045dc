use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gender, Patient};
use crate::table::{date_from_days, Cell, Table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientColumns {
    pub patient_id: String,
    pub gender: String,
    pub birth_date: String,
    pub death_date: String,
}

impl Default for PatientColumns {
    fn default() -> Self {
        Self {
            patient_id: "patient_id".into(),
            gender: "gender".into(),
            birth_date: "birth_date".into(),
            death_date: "death_date".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientStats {
    pub patients: u64,
    /// Ids seen in the flat table without any recorded birth date.
    pub missing_birth_date: u64,
}

/// Votes collected for one patient across rows.
#[derive(Default, Clone)]
struct Tally {
    male: u32,
    female: u32,
    births: HashMap<NaiveDate, u32>,
    death: Option<NaiveDate>,
}

impl Tally {
    fn merge(&mut self, o: Tally) {
        self.male += o.male;
        self.female += o.female;
        for (d, n) in o.births {
            *self.births.entry(d).or_default() += n;
        }
        self.death = match (self.death, o.death) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    fn gender(&self) -> Gender {
        match self.male.cmp(&self.female) {
            std::cmp::Ordering::Greater => Gender::Male,
            std::cmp::Ordering::Less => Gender::Female,
            std::cmp::Ordering::Equal => Gender::Unknown,
        }
    }

    /// Most frequent birth date, earliest on ties.
    fn birth(&self) -> Option<NaiveDate> {
        self.births
            .iter()
            .max_by(|(da, na), (db, nb)| na.cmp(nb).then(db.cmp(da)))
            .map(|(d, _)| *d)
    }
}

fn date_cell(c: Cell<'_>) -> Option<NaiveDate> {
    match c {
        Cell::Date(d) => Some(date_from_days(d)),
        Cell::Str(s) => crate::model::Timestamp::parse(s).ok().map(|t| t.date()),
        _ => None,
    }
}

fn tally_table(t: &Table, cols: &PatientColumns) -> Result<HashMap<String, Tally>> {
    let pid = t.schema().require(&cols.patient_id)?;
    let g = t.schema().require(&cols.gender)?;
    let b = t.schema().require(&cols.birth_date)?;
    let d = t.schema().require(&cols.death_date)?;
    let mut out: HashMap<String, Tally> = HashMap::new();
    for row in 0..t.num_rows() {
        let Some(id) = t.cell(row, pid).render() else {
            continue;
        };
        let tally = out.entry(id).or_default();
        match t.cell(row, g) {
            Cell::Int(1) => tally.male += 1,
            Cell::Int(2) => tally.female += 1,
            Cell::Str("1") => tally.male += 1,
            Cell::Str("2") => tally.female += 1,
            _ => {}
        }
        if let Some(bd) = date_cell(t.cell(row, b)) {
            *tally.births.entry(bd).or_default() += 1;
        }
        if let Some(dd) = date_cell(t.cell(row, d)) {
            tally.death = Some(tally.death.map_or(dd, |x| x.min(dd)));
        }
    }
    Ok(out)
}

/// One patient per distinct id, reconciled across rows: gender by majority
/// of male/female votes (tie gives unknown), birth date by mode (earliest on
/// ties), death date the earliest recorded. Sorted by id.
pub fn extract_patients(slices: &[Table], cols: &PatientColumns) -> Result<(Vec<Patient>, PatientStats)> {
    let parts: Vec<HashMap<String, Tally>> = slices
        .par_iter()
        .map(|t| tally_table(t, cols))
        .collect::<Result<_>>()?;
    let mut all: BTreeMap<String, Tally> = BTreeMap::new();
    for part in parts {
        for (id, t) in part {
            all.entry(id).or_default().merge(t);
        }
    }
    let mut stats = PatientStats::default();
    let mut patients = Vec::with_capacity(all.len());
    for (id, t) in all {
        let Some(birth) = t.birth() else {
            stats.missing_birth_date += 1;
            continue;
        };
        let p = Patient::new(id.clone(), t.gender(), birth, t.death).map_err(|e| Error::Type {
            row: 0,
            column: cols.death_date.clone(),
            message: format!("patient `{id}`: {e}"),
        })?;
        patients.push(p);
    }
    stats.patients = patients.len() as u64;
    Ok((patients, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{table_from_rows, ColumnSchema, DataType, Schema, Value};

    fn table(rows: &[(&str, Option<i64>, Option<&str>, Option<&str>)]) -> Table {
        let schema = Schema::new(vec![
            ColumnSchema::new("patient_id", DataType::Utf8, true),
            ColumnSchema::new("gender", DataType::Int64, true),
            ColumnSchema::new("birth_date", DataType::Date, true),
            ColumnSchema::new("death_date", DataType::Date, true),
        ])
        .unwrap();
        let d = |s: Option<&str>| {
            s.map(|s| Value::Date(crate::table::parse_date_days(s).unwrap()))
                .unwrap_or(Value::Null)
        };
        let rows: Vec<Vec<Value>> = rows
            .iter()
            .map(|(id, g, b, dd)| {
                vec![Value::str(*id), g.map(Value::Int).unwrap_or(Value::Null), d(*b), d(*dd)]
            })
            .collect();
        table_from_rows(schema, &rows).unwrap()
    }

    #[test]
    fn direct_mapping() {
        let t = table(&[("Alice", Some(2), Some("1934-07-27"), None)]);
        let (p, _) = extract_patients(&[t], &PatientColumns::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].gender, Gender::Female);
        assert_eq!(p[0].birth_date.to_string(), "1934-07-27");
    }

    #[test]
    fn reconciliation() {
        let b = Some("1950-01-01");
        let t = table(&[
            ("p", Some(1), b, Some("2012-05-01")),
            ("p", Some(1), Some("1951-01-01"), None),
            ("p", Some(2), b, Some("2011-03-01")),
            ("q", Some(1), Some("1960-01-02"), None),
            ("q", Some(2), Some("1960-01-01"), None),
            ("r", None, None, None),
        ]);
        // splitting rows across slices must not change anything
        let slices = [t.take(&[0, 3]), t.take(&[1, 2, 4, 5])];
        for input in [vec![t.clone()], slices.to_vec()] {
            let (p, st) = extract_patients(&input, &PatientColumns::default()).unwrap();
            assert_eq!(p.len(), 2);
            assert_eq!(st.missing_birth_date, 1);
            assert_eq!(p[0].gender, Gender::Male);
            assert_eq!(p[0].birth_date.to_string(), "1950-01-01");
            assert_eq!(p[0].death_date.unwrap().to_string(), "2011-03-01");
            assert_eq!(p[1].gender, Gender::Unknown);
            assert_eq!(p[1].birth_date.to_string(), "1960-01-01");
        }
    }

    #[test]
    fn missing_demographics() {
        let schema = Schema::new(vec![ColumnSchema::new("patient_id", DataType::Utf8, true)]).unwrap();
        let t = Table::empty(schema);
        assert!(matches!(
            extract_patients(&[t], &PatientColumns::default()),
            Err(Error::UnknownColumn(_))
        ));
    }
}
