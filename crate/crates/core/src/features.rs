//! Dense tensor export of cohorts.
//!
//! Tensor file layout (little-endian):
//!
//! ```text
//! "SCLT1" | dtype u8 (0 = f64, 1 = i64) | ndim u8 | dims u64 * ndim | payload
//! ```
//!
//! The payload is row-major. A sidecar text file maps codes to columns and
//! patient ids to rows.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::finding::Finding;
use crate::model::{Event, Timestamp};

pub const TENSOR_MAGIC: &[u8; 5] = b"SCLT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapping {
    pub code_index: BTreeMap<String, usize>,
    pub bucket_days: u32,
    pub window: (Timestamp, Timestamp),
}

impl FeatureMapping {
    pub fn new(codes: impl IntoIterator<Item = String>, bucket_days: u32, window: (Timestamp, Timestamp)) -> Result<Self> {
        if bucket_days == 0 {
            return Err(Error::Config("bucket width must be positive".into()));
        }
        if window.0 > window.1 {
            return Err(Error::Interval {
                start: window.0.to_string(),
                end: window.1.to_string(),
            });
        }
        let mut sorted: Vec<String> = codes.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        let code_index = sorted.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
        Ok(Self {
            code_index,
            bucket_days,
            window,
        })
    }

    /// Codes of every event in the cohort, over the cohort window.
    pub fn from_cohort(c: &Cohort, bucket_days: u32) -> Result<Self> {
        Self::new(c.events().iter().map(|e| e.value.clone()), bucket_days, c.window())
    }

    pub fn n_codes(&self) -> usize {
        self.code_index.len()
    }

    pub fn n_buckets(&self) -> usize {
        let span = self.window.1.days_since_epoch() - self.window.0.days_since_epoch();
        (span / self.bucket_days as i64) as usize + 1
    }

    fn bucket_of_day(&self, day: i64) -> usize {
        ((day - self.window.0.days_since_epoch()) / self.bucket_days as i64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl DenseTensor {
    pub fn zeros_f64(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: TensorData::F64(vec![0.0; n]),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::I64(_) => None,
        }
    }

    pub fn sum(&self) -> f64 {
        match &self.data {
            TensorData::F64(v) => v.iter().sum(),
            TensorData::I64(v) => v.iter().map(|x| *x as f64).sum(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.shape.len() + 8 * self.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(match self.data {
            TensorData::F64(_) => 0,
            TensorData::I64(_) => 1,
        });
        out.push(self.shape.len() as u8);
        for d in &self.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(format!("tensor: {m}"));
        if b.len() < 7 || &b[..5] != TENSOR_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let dtype = b[5];
        let ndim = b[6] as usize;
        let mut pos = 7;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let raw = b.get(pos..pos + 8).ok_or_else(|| corrupt("truncated dims"))?;
            shape.push(u64::from_le_bytes(raw.try_into().expect("8 bytes")) as usize);
            pos += 8;
        }
        let n: usize = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| corrupt("shape overflows"))?;
        let payload = &b[pos..];
        if Some(payload.len()) != n.checked_mul(8) {
            return Err(corrupt("payload length does not match shape"));
        }
        let words = payload.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
        let data = match dtype {
            0 => TensorData::F64(words.map(f64::from_le_bytes).collect()),
            1 => TensorData::I64(words.map(i64::from_le_bytes).collect()),
            d => return Err(corrupt(&format!("unknown dtype {d}"))),
        };
        Ok(Self { shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// What to do with events failing a sanity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InvalidPolicy {
    #[default]
    Fail,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rasterization {
    /// A continuous event adds its weight once to every bucket it touches.
    #[default]
    Indicator,
    /// A continuous event adds its weight times the days it covers in the
    /// bucket (end day included).
    DurationWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOutput {
    pub tensor: DenseTensor,
    pub patients: Vec<String>,
    pub dropped: usize,
    pub findings: Vec<Finding>,
}

impl FeatureOutput {
    /// `patient<TAB>id<TAB>row` and `code<TAB>code<TAB>column` lines.
    pub fn sidecar(&self, m: &FeatureMapping) -> String {
        let mut s = String::new();
        for (i, p) in self.patients.iter().enumerate() {
            writeln!(s, "patient\t{p}\t{i}").expect("string write");
        }
        for (c, i) in &m.code_index {
            writeln!(s, "code\t{c}\t{i}").expect("string write");
        }
        s
    }
}

pub fn parse_sidecar(text: &str) -> Result<(Vec<String>, BTreeMap<String, usize>)> {
    let mut patients = Vec::new();
    let mut codes = BTreeMap::new();
    for line in text.lines() {
        let parts: Vec<&str> = line.split('\t').collect();
        let [kind, key, idx] = parts[..] else {
            return Err(Error::Corrupt(format!("sidecar line `{line}`")));
        };
        let idx: usize = idx.parse().map_err(|_| Error::Corrupt(format!("sidecar index `{idx}`")))?;
        match kind {
            "patient" if idx == patients.len() => patients.push(key.to_string()),
            "code" => {
                codes.insert(key.to_string(), idx);
            }
            _ => return Err(Error::Corrupt(format!("sidecar line `{line}`"))),
        }
    }
    Ok((patients, codes))
}

/// Per-event checks: outside the cohort window, non-UTC timestamps,
/// unknown patient, end before start, code missing from the mapping.
pub fn check_event(e: &Event, c: &Cohort, m: &FeatureMapping) -> Vec<Finding> {
    let mut f = Vec::new();
    let (ws, we) = c.window();
    let describe = || format!("{} {} {} at {}", e.patient_id, e.category, e.value, e.start);
    if e.start < ws || e.end_or_start() > we {
        f.push(Finding::error("outside-window", format!("{} is outside [{ws}, {we}]", describe())));
    }
    if !e.start.is_utc() || e.end.is_some_and(|t| !t.is_utc()) {
        f.push(Finding::error("non-utc", format!("{} is not UTC-normalized", describe())));
    }
    if c.subject(&e.patient_id).is_none() {
        f.push(Finding::error("unknown-patient", format!("{}: patient is not a subject", describe())));
    }
    if e.end.is_some_and(|t| t < e.start) {
        f.push(Finding::error("end-before-start", format!("{} ends before it starts", describe())));
    }
    if !m.code_index.contains_key(&e.value) {
        f.push(Finding::error("unknown-code", format!("{}: code has no column", describe())));
    }
    f
}

pub fn sanity_check(c: &Cohort, m: &FeatureMapping) -> Vec<Finding> {
    c.events().iter().flat_map(|e| check_event(e, c, m)).collect()
}

fn rows_and_valid<'a>(c: &'a Cohort, m: &FeatureMapping, policy: InvalidPolicy) -> Result<(Vec<String>, HashMap<&'a str, usize>, Vec<&'a Event>, usize, Vec<Finding>)> {
    let patients: Vec<String> = c.subjects().map(|p| p.patient_id.clone()).collect();
    let row_of: HashMap<&str, usize> = c
        .subjects()
        .enumerate()
        .map(|(i, p)| (p.patient_id.as_str(), i))
        .collect();
    let mut valid = Vec::with_capacity(c.events().len());
    let mut findings = Vec::new();
    let mut dropped = 0;
    for e in c.events() {
        let f = check_event(e, c, m);
        if f.is_empty() {
            valid.push(e);
        } else {
            dropped += 1;
            findings.extend(f);
        }
    }
    if policy == InvalidPolicy::Fail && !findings.is_empty() {
        return Err(Error::SanityCheck(findings));
    }
    Ok((patients, row_of, valid, dropped, findings))
}

/// `(n_patients, n_codes)`: each cell sums the weights of the patient's
/// events with that code. Rows follow sorted patient ids.
pub fn build_count_matrix(c: &Cohort, m: &FeatureMapping, policy: InvalidPolicy) -> Result<FeatureOutput> {
    let (patients, row_of, valid, dropped, findings) = rows_and_valid(c, m, policy)?;
    let k = m.n_codes();
    let mut t = DenseTensor::zeros_f64(vec![patients.len(), k]);
    let TensorData::F64(data) = &mut t.data else { unreachable!() };
    for e in valid {
        data[row_of[e.patient_id.as_str()] * k + m.code_index[&e.value]] += e.weight;
    }
    Ok(FeatureOutput {
        tensor: t,
        patients,
        dropped,
        findings,
    })
}

/// `(n_patients, n_buckets, n_codes)`. A punctual event adds its weight to
/// the bucket of its start; a continuous one covers every bucket its closed
/// day range touches.
pub fn build_event_tensor(c: &Cohort, m: &FeatureMapping, policy: InvalidPolicy, raster: Rasterization) -> Result<FeatureOutput> {
    let (patients, row_of, valid, dropped, findings) = rows_and_valid(c, m, policy)?;
    let (nb, k) = (m.n_buckets(), m.n_codes());
    let mut t = DenseTensor::zeros_f64(vec![patients.len(), nb, k]);
    let TensorData::F64(data) = &mut t.data else { unreachable!() };
    let w0 = m.window.0.days_since_epoch();
    let bd = m.bucket_days as i64;
    for e in valid {
        let base = row_of[e.patient_id.as_str()] * nb * k + m.code_index[&e.value];
        let first_day = e.start.days_since_epoch();
        match e.end {
            None => data[base + m.bucket_of_day(first_day) * k] += e.weight,
            Some(end) => {
                let last_day = end.days_since_epoch();
                for b in m.bucket_of_day(first_day)..=m.bucket_of_day(last_day) {
                    let add = match raster {
                        Rasterization::Indicator => e.weight,
                        Rasterization::DurationWeighted => {
                            let lo = first_day.max(w0 + b as i64 * bd);
                            let hi = last_day.min(w0 + (b as i64 + 1) * bd - 1);
                            e.weight * (hi - lo + 1) as f64
                        }
                    };
                    data[base + b * k] += add;
                }
            }
        }
    }
    Ok(FeatureOutput {
        tensor: t,
        patients,
        dropped,
        findings,
    })
}
