//! Patients, events and the timestamps they carry.
//!
//! Every stage of the pipeline speaks in these types. Events are plain
//! value records; collections of them are multisets, so duplicates are kept
//! and comparisons go through [`sort_canonical`].

use std::cmp::Ordering;
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{
    DateTime, Datelike, Duration, FixedOffset, Months, NaiveDate, NaiveTime, SecondsFormat,
    TimeZone, Timelike, Utc,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

/// An instant in time together with the offset it was recorded in.
///
/// Equality and ordering compare instants only. Values built through the
/// event constructors are always normalized to UTC; a non-zero offset means
/// the value came in raw and was never normalized.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<FixedOffset>);

impl Timestamp {
    /// Midnight UTC on `date`.
    pub fn from_date(date: NaiveDate) -> Self {
        Self(date.and_time(NaiveTime::MIN).and_utc().fixed_offset())
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(Self::from_date)
            .ok_or_else(|| Error::Validation(format!("invalid date {year:04}-{month:02}-{day:02}")))
    }

    /// Midnight UTC, `days` after 1970-01-01.
    pub fn from_days(days: i64) -> Self {
        Self::from_date(EPOCH + Duration::days(days))
    }

    /// Converts any zoned value to the same instant expressed in UTC.
    pub fn from_zoned<Tz: TimeZone>(dt: &DateTime<Tz>) -> Self {
        Self(dt.with_timezone(&Utc).fixed_offset())
    }

    /// Keeps the offset as given. Used for raw input that still has to be
    /// checked.
    pub fn with_offset(dt: DateTime<FixedOffset>) -> Self {
        Self(dt)
    }

    pub fn to_utc(self) -> Self {
        Self::from_zoned(&self.0)
    }

    pub fn is_utc(&self) -> bool {
        self.0.offset().local_minus_utc() == 0
    }

    pub fn offset_seconds(&self) -> i32 {
        self.0.offset().local_minus_utc()
    }

    /// Calendar date of the instant in UTC.
    pub fn date(&self) -> NaiveDate {
        self.0.with_timezone(&Utc).date_naive()
    }

    /// Whole days since 1970-01-01 (UTC), rounding toward negative infinity.
    pub fn days_since_epoch(&self) -> i64 {
        (self.date() - EPOCH).num_days()
    }

    pub fn unix_seconds(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn is_midnight_utc(&self) -> bool {
        let utc = self.0.with_timezone(&Utc);
        utc.num_seconds_from_midnight() == 0 && utc.nanosecond() == 0
    }

    pub fn add_days(self, days: i64) -> Self {
        Self(self.0 + Duration::days(days))
    }

    /// Calendar month arithmetic; the day is clamped to the end of shorter
    /// months.
    pub fn add_months(self, months: u32) -> Self {
        Self(
            self.0
                .checked_add_months(Months::new(months))
                .unwrap_or(DateTime::<Utc>::MAX_UTC.fixed_offset()),
        )
    }

    pub fn year(&self) -> i32 {
        self.date().year()
    }

    pub fn month(&self) -> u32 {
        self.date().month()
    }

    pub fn inner(&self) -> DateTime<FixedOffset> {
        self.0
    }

    /// Accepts `YYYY-MM-DD`, `YYYY-MM-DD HH:MM:SS` (read as UTC) and RFC 3339.
    /// RFC 3339 offsets are kept, not normalized.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Self::from_date(d));
        }
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
            return Ok(Self(dt.and_utc().fixed_offset()));
        }
        DateTime::parse_from_rfc3339(s)
            .map(Self)
            .map_err(|_| Error::Validation(format!("unparseable timestamp `{s}`")))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_utc() && self.is_midnight_utc() {
            write!(f, "{}", self.date().format("%Y-%m-%d"))
        } else {
            f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        }
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl From<NaiveDate> for Timestamp {
    fn from(d: NaiveDate) -> Self {
        Self::from_date(d)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Unknown = 0,
    Male = 1,
    Female = 2,
}

impl Gender {
    pub fn code(self) -> i64 {
        self as i64
    }

    /// Codes other than 1 and 2 map to `Unknown`.
    pub fn from_code(code: i64) -> Self {
        match code {
            1 => Gender::Male,
            2 => Gender::Female,
            _ => Gender::Unknown,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Unknown => "unknown",
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub gender: Gender,
    pub birth_date: NaiveDate,
    pub death_date: Option<NaiveDate>,
}

impl Patient {
    pub fn new(
        patient_id: impl Into<String>,
        gender: Gender,
        birth_date: NaiveDate,
        death_date: Option<NaiveDate>,
    ) -> Result<Self> {
        let p = Self {
            patient_id: patient_id.into(),
            gender,
            birth_date,
            death_date,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::Validation("empty patientID".into()));
        }
        if let Some(death) = self.death_date {
            if death < self.birth_date {
                return Err(Error::Interval {
                    start: self.birth_date.to_string(),
                    end: death.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn birth(&self) -> Timestamp {
        Timestamp::from_date(self.birth_date)
    }

    pub fn death(&self) -> Option<Timestamp> {
        self.death_date.map(Timestamp::from_date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub patient_id: String,
    pub category: String,
    pub group_id: Option<String>,
    pub value: String,
    pub weight: f64,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
}

impl Event {
    /// A punctual event: no end, weight as given, no group.
    pub fn punctual(
        patient_id: impl Into<String>,
        category: impl Into<String>,
        value: impl Into<String>,
        weight: f64,
        start: Timestamp,
    ) -> Result<Self> {
        let e = Self {
            patient_id: patient_id.into(),
            category: category.into(),
            group_id: None,
            value: value.into(),
            weight,
            start: start.to_utc(),
            end: None,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn continuous(
        patient_id: impl Into<String>,
        category: impl Into<String>,
        value: impl Into<String>,
        weight: f64,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<Self> {
        let e = Self {
            patient_id: patient_id.into(),
            category: category.into(),
            group_id: None,
            value: value.into(),
            weight,
            start: start.to_utc(),
            end: Some(end.to_utc()),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_group(mut self, group_id: Option<String>) -> Self {
        self.group_id = group_id;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::Validation("empty patientID".into()));
        }
        if self.category.is_empty() {
            return Err(Error::Validation("empty category".into()));
        }
        if self.value.is_empty() {
            return Err(Error::Validation("empty value".into()));
        }
        if !self.weight.is_finite() {
            return Err(Error::Validation(format!("non-finite weight {}", self.weight)));
        }
        if let Some(end) = self.end {
            if end < self.start {
                return Err(Error::Interval {
                    start: self.start.to_string(),
                    end: end.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn is_punctual(&self) -> bool {
        self.end.is_none()
    }

    /// End of the event, or its start when punctual.
    pub fn end_or_start(&self) -> Timestamp {
        self.end.unwrap_or(self.start)
    }

    /// Closed-interval intersection test.
    pub fn overlaps(&self, other: &Event) -> bool {
        self.start <= other.end_or_start() && other.start <= self.end_or_start()
    }

    /// Total order used for every multiset comparison: patient, category,
    /// start, value, group, then end and weight as tie breakers.
    pub fn canonical_cmp(&self, other: &Event) -> Ordering {
        self.patient_id
            .cmp(&other.patient_id)
            .then_with(|| self.category.cmp(&other.category))
            .then_with(|| self.start.cmp(&other.start))
            .then_with(|| self.value.cmp(&other.value))
            .then_with(|| self.group_id.cmp(&other.group_id))
            .then_with(|| self.end.cmp(&other.end))
            .then_with(|| self.weight.total_cmp(&other.weight))
    }
}

pub fn overlaps(a: &Event, b: &Event) -> bool {
    a.overlaps(b)
}

pub fn sort_canonical(events: &mut [Event]) {
    events.sort_unstable_by(Event::canonical_cmp);
}

/// Multiset equality through canonical order.
pub fn same_multiset(a: &[Event], b: &[Event]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a: Vec<&Event> = a.iter().collect();
    let mut b: Vec<&Event> = b.iter().collect();
    a.sort_unstable_by(|x, y| x.canonical_cmp(y));
    b.sort_unstable_by(|x, y| x.canonical_cmp(y));
    a.iter()
        .zip(&b)
        .all(|(x, y)| x.canonical_cmp(y) == Ordering::Equal)
}

pub const EVENT_CSV_HEADER: [&str; 7] = [
    "patientID", "category", "groupID", "value", "weight", "start", "end",
];

/// Shortest representation that reads back to the same value, always with
/// a decimal point for integral weights ("1.0").
pub fn format_weight(w: f64) -> String {
    format!("{w:?}")
}

pub fn write_events_csv<W: io::Write>(out: W, events: &[Event]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_CSV_HEADER)?;
    for e in events {
        let start = e.start.to_string();
        let end = e.end.map(|t| t.to_string()).unwrap_or_default();
        let weight = format_weight(e.weight);
        w.write_record([
            e.patient_id.as_str(),
            e.category.as_str(),
            e.group_id.as_deref().unwrap_or(""),
            e.value.as_str(),
            weight.as_str(),
            start.as_str(),
            end.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<events>", e))?;
    Ok(())
}

pub fn read_events_csv<R: io::Read>(input: R) -> Result<Vec<Event>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(EVENT_CSV_HEADER.iter().copied()) {
        return Err(Error::SchemaMismatch(format!(
            "event CSV header must be `{}`",
            EVENT_CSV_HEADER.join(",")
        )));
    }
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |column: &str, message: String| Error::Type {
            row: i + 1,
            column: column.to_string(),
            message,
        };
        let weight: f64 = rec[4]
            .parse()
            .map_err(|_| bad("weight", format!("not a number: `{}`", &rec[4])))?;
        let start = Timestamp::parse(&rec[5]).map_err(|e| bad("start", e.to_string()))?;
        let end = match &rec[6] {
            "" => None,
            s => Some(Timestamp::parse(s).map_err(|e| bad("end", e.to_string()))?),
        };
        events.push(Event {
            patient_id: rec[0].to_string(),
            category: rec[1].to_string(),
            group_id: (!rec[2].is_empty()).then(|| rec[2].to_string()),
            value: rec[3].to_string(),
            weight,
            start,
            end,
        });
    }
    Ok(events)
}

pub const PATIENT_CSV_HEADER: [&str; 4] = ["patientID", "gender", "birthDate", "deathDate"];

pub fn write_patients_csv<W: io::Write>(out: W, patients: &[Patient]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATIENT_CSV_HEADER)?;
    for p in patients {
        w.write_record([
            p.patient_id.clone(),
            p.gender.code().to_string(),
            p.birth_date.to_string(),
            p.death_date.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<patients>", e))?;
    Ok(())
}

pub fn read_patients_csv<R: io::Read>(input: R) -> Result<Vec<Patient>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |column: &str| Error::Type {
            row: i + 1,
            column: column.to_string(),
            message: "unparseable value".into(),
        };
        let gender = rec[1].parse::<i64>().map_err(|_| bad("gender"))?;
        let birth = NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d").map_err(|_| bad("birthDate"))?;
        let death = match &rec[3] {
            "" => None,
            s => Some(NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad("deathDate"))?),
        };
        out.push(Patient::new(&rec[0], Gender::from_code(gender), birth, death)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    #[test]
    fn punctual_constructor() {
        let e = Event::punctual("Bob", "act", "CCAM123", 1.0, ts("2014-03-04")).unwrap();
        assert!(e.is_punctual());
        assert_eq!(e.end, None);
        assert_eq!(e.group_id, None);
        assert!(Event::punctual("", "act", "X", 1.0, ts("2014-03-04")).is_err());
        assert!(Event::punctual("A", "", "X", 1.0, ts("2014-03-04")).is_err());
        assert!(Event::punctual("A", "act", "", 1.0, ts("2014-03-04")).is_err());
        assert!(Event::punctual("A", "act", "X", f64::NAN, ts("2014-03-04")).is_err());
    }

    #[test]
    fn alice_drug_a_rows() {
        let p = Event::punctual("Alice", "drug_purchase", "DrugA", 1.0, ts("2013-08-08")).unwrap();
        assert_eq!(p.start.to_string(), "2013-08-08");
        let e = Event::continuous(
            "Alice",
            "exposure",
            "DrugA",
            1.0,
            ts("2013-08-08"),
            ts("2013-10-07"),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "patientID,category,groupID,value,weight,start,end\n\
             Alice,exposure,,DrugA,1.0,2013-08-08,2013-10-07\n"
        );
    }

    #[test]
    fn continuous_intervals() {
        let t = ts("2014-01-01");
        let zero = Event::continuous("A", "x", "c", 1.0, t, t).unwrap();
        assert_eq!(zero.end, Some(zero.start));
        let err = Event::continuous("A", "x", "c", 1.0, t.add_days(1), t).unwrap_err();
        assert!(matches!(err, Error::Interval { .. }));
    }

    #[test]
    fn overlap_is_closed() {
        let d = |n| Timestamp::from_days(n);
        let iv = |a, b| Event::continuous("p", "x", "c", 1.0, d(a), d(b)).unwrap();
        assert!(overlaps(&iv(1, 5), &iv(5, 9)));
        assert!(!overlaps(&iv(1, 2), &iv(3, 4)));
        let point = Event::punctual("p", "x", "c", 1.0, d(4)).unwrap();
        assert!(overlaps(&point, &iv(1, 5)));
        assert!(overlaps(&iv(1, 5), &point));
    }

    #[test]
    fn zoned_input_is_normalized() {
        let paris = FixedOffset::east_opt(2 * 3600).unwrap();
        let local = paris.with_ymd_and_hms(2014, 3, 4, 2, 0, 0).unwrap();
        let e = Event::punctual("A", "act", "X", 1.0, Timestamp::with_offset(local)).unwrap();
        assert!(e.start.is_utc());
        assert_eq!(e.start, ts("2014-03-04"));
        assert_eq!(e.start.to_string(), "2014-03-04");
        let utc = Utc.with_ymd_and_hms(2014, 3, 4, 0, 0, 0).unwrap();
        assert_eq!(Timestamp::from_zoned(&local), Timestamp::from_zoned(&utc));
    }

    #[test]
    fn timestamps_with_time_print_rfc3339() {
        let t = ts("2014-03-04 10:30:00");
        assert_eq!(t.to_string(), "2014-03-04T10:30:00Z");
        assert_eq!(ts(&t.to_string()), t);
        let raw = ts("2014-03-04T10:30:00+02:00");
        assert!(!raw.is_utc());
        assert_eq!(raw.to_utc().to_string(), "2014-03-04T08:30:00Z");
    }

    #[test]
    fn days_roundtrip() {
        for d in [-800, -1, 0, 1, 16000, 20000] {
            assert_eq!(Timestamp::from_days(d).days_since_epoch(), d);
        }
        assert_eq!(ts("2013-01-31").add_months(1), ts("2013-02-28"));
    }

    #[test]
    fn patient_invariants() {
        let b = NaiveDate::from_ymd_opt(1934, 7, 27).unwrap();
        assert!(Patient::new("Alice", Gender::Female, b, None).is_ok());
        assert!(Patient::new("", Gender::Female, b, None).is_err());
        let before = NaiveDate::from_ymd_opt(1930, 1, 1).unwrap();
        assert!(Patient::new("Alice", Gender::Female, b, Some(before)).is_err());
        assert_eq!(Gender::from_code(2), Gender::Female);
        assert_eq!(Gender::from_code(7), Gender::Unknown);
    }

    #[test]
    fn canonical_sort_keeps_duplicates() {
        let e = Event::punctual("A", "act", "X", 1.0, ts("2014-01-01")).unwrap();
        let f = Event::punctual("A", "act", "W", 1.0, ts("2014-01-02")).unwrap();
        let a = vec![e.clone(), f.clone(), e.clone()];
        let b = vec![e.clone(), e.clone(), f.clone()];
        assert!(same_multiset(&a, &b));
        assert!(!same_multiset(&a, &[e.clone(), f.clone(), f.clone()]));
        let mut s = a.clone();
        sort_canonical(&mut s);
        assert_eq!(s, b);
    }

    #[test]
    fn event_csv_roundtrip() {
        let events = vec![
            Event::punctual("B,ob", "act", "X\"1", 2.5, ts("2014-01-01T10:00:00Z"))
                .unwrap()
                .with_group(Some("S1".into())),
            Event::continuous("A", "hospital_stay", "S", 1.0, ts("2014-01-01"), ts("2014-01-09"))
                .unwrap(),
        ];
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &events).unwrap();
        assert_eq!(read_events_csv(buf.as_slice()).unwrap(), events);
    }
}
