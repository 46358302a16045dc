use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::bitmap::Bitmap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Int64,
    Float64,
    Date,
    #[serde(rename = "string")]
    Utf8,
}

impl DataType {
    pub fn code(self) -> u8 {
        match self {
            DataType::Int64 => 0,
            DataType::Float64 => 1,
            DataType::Date => 2,
            DataType::Utf8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DataType::Int64,
            1 => DataType::Float64,
            2 => DataType::Date,
            3 => DataType::Utf8,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::Int64 => "int64",
            DataType::Float64 => "float64",
            DataType::Date => "date",
            DataType::Utf8 => "string",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub dtype: DataType,
    #[serde(default = "default_nullable")]
    pub nullable: bool,
}

fn default_nullable() -> bool {
    true
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, dtype: DataType, nullable: bool) -> Self {
        Self {
            name: name.into(),
            dtype,
            nullable,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Schema {
    columns: Vec<ColumnSchema>,
    index: HashMap<String, usize>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let mut index = HashMap::with_capacity(columns.len());
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::SchemaMismatch("empty column name".into()));
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(Error::SchemaMismatch(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(Self { columns, index })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn field(&self, name: &str) -> Option<&ColumnSchema> {
        self.index_of(name).map(|i| &self.columns[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// Offsets plus concatenated UTF-8 bytes. `offsets.len() == len + 1`.
#[derive(Clone, PartialEq, Eq)]
pub struct StringArray {
    offsets: Vec<usize>,
    data: String,
}

impl Default for StringArray {
    fn default() -> Self {
        Self {
            offsets: vec![0],
            data: String::new(),
        }
    }
}

impl StringArray {
    pub fn with_capacity(rows: usize, bytes: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Self {
            offsets,
            data: String::with_capacity(bytes),
        }
    }

    pub(crate) fn from_parts(offsets: Vec<usize>, data: String) -> Self {
        debug_assert!(!offsets.is_empty());
        Self { offsets, data }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> &str {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn push(&mut self, s: &str) {
        self.data.push_str(s);
        self.offsets.push(self.data.len());
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn data(&self) -> &str {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        (0..self.len()).map(move |i| self.get(i))
    }
}

impl fmt::Debug for StringArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    /// Days since 1970-01-01.
    Date(Vec<i32>),
    Utf8(StringArray),
}

impl ColumnData {
    pub fn empty(dtype: DataType, capacity: usize) -> Self {
        match dtype {
            DataType::Int64 => ColumnData::Int64(Vec::with_capacity(capacity)),
            DataType::Float64 => ColumnData::Float64(Vec::with_capacity(capacity)),
            DataType::Date => ColumnData::Date(Vec::with_capacity(capacity)),
            DataType::Utf8 => ColumnData::Utf8(StringArray::with_capacity(capacity, capacity * 8)),
        }
    }

    pub fn dtype(&self) -> DataType {
        match self {
            ColumnData::Int64(_) => DataType::Int64,
            ColumnData::Float64(_) => DataType::Float64,
            ColumnData::Date(_) => DataType::Date,
            ColumnData::Utf8(_) => DataType::Utf8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int64(v) => v.len(),
            ColumnData::Float64(v) => v.len(),
            ColumnData::Date(v) => v.len(),
            ColumnData::Utf8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A typed value vector with its validity bitmap. Null slots hold a
/// placeholder (zero or empty string) in the value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    data: ColumnData,
    validity: Bitmap,
}

impl Column {
    pub fn new(data: ColumnData, validity: Bitmap) -> Result<Self> {
        if data.len() != validity.len() {
            return Err(Error::SchemaMismatch(format!(
                "column has {} values but {} validity bits",
                data.len(),
                validity.len()
            )));
        }
        Ok(Self { data, validity })
    }

    pub fn all_valid(data: ColumnData) -> Self {
        let validity = Bitmap::new_valid(data.len());
        Self { data, validity }
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    pub fn validity(&self) -> &Bitmap {
        &self.validity
    }

    pub fn dtype(&self) -> DataType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.validity.get(i)
    }

    pub fn null_count(&self) -> usize {
        self.validity.count_null()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Cell<'_> {
        if !self.validity.get(i) {
            return Cell::Null;
        }
        match &self.data {
            ColumnData::Int64(v) => Cell::Int(v[i]),
            ColumnData::Float64(v) => Cell::Float(v[i]),
            ColumnData::Date(v) => Cell::Date(v[i]),
            ColumnData::Utf8(v) => Cell::Str(v.get(i)),
        }
    }

    /// Gathers rows by index; `None` produces a null slot.
    pub fn gather(&self, idx: &[Option<usize>]) -> Column {
        let mut b = ColumnBuilder::new(self.dtype(), idx.len());
        for ix in idx {
            match ix {
                Some(i) => b.push_cell(self.get(*i)),
                None => b.push_null(),
            }
        }
        b.finish()
    }

    pub fn take(&self, idx: &[usize]) -> Column {
        let mut validity = Bitmap::with_capacity(idx.len());
        for &i in idx {
            validity.push(self.validity.get(i));
        }
        let data = match &self.data {
            ColumnData::Int64(v) => ColumnData::Int64(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Float64(v) => ColumnData::Float64(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Date(v) => ColumnData::Date(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Utf8(v) => {
                let mut out = StringArray::with_capacity(idx.len(), idx.len() * 8);
                for &i in idx {
                    out.push(v.get(i));
                }
                ColumnData::Utf8(out)
            }
        };
        Column { data, validity }
    }

    pub fn concat(parts: &[&Column], dtype: DataType) -> Column {
        let rows = parts.iter().map(|c| c.len()).sum();
        let mut b = ColumnBuilder::new(dtype, rows);
        for p in parts {
            b.extend_from(p);
        }
        b.finish()
    }
}

/// Borrowed view of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Null,
    Int(i64),
    Float(f64),
    Date(i32),
    Str(&'a str),
}

impl Cell<'_> {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn to_value(&self) -> Value {
        match *self {
            Cell::Null => Value::Null,
            Cell::Int(v) => Value::Int(v),
            Cell::Float(v) => Value::Float(v),
            Cell::Date(v) => Value::Date(v),
            Cell::Str(s) => Value::Str(s.to_string()),
        }
    }

    /// Text rendering used when a cell becomes an event field.
    pub fn render(&self) -> Option<String> {
        match *self {
            Cell::Null => None,
            Cell::Int(v) => Some(v.to_string()),
            Cell::Float(v) => Some(format!("{v:?}")),
            Cell::Date(d) => Some(date_from_days(d).to_string()),
            Cell::Str(s) => Some(s.to_string()),
        }
    }
}

/// Owned cell value. Floats compare and hash by bit pattern so values can
/// live in sets.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Date(i32),
    Str(String),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    /// Parses config text as a value of `dtype`.
    pub fn parse_as(dtype: DataType, s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("`{s}` is not a valid {dtype}"));
        Ok(match dtype {
            DataType::Int64 => Value::Int(s.trim().parse().map_err(|_| bad())?),
            DataType::Float64 => Value::Float(s.trim().parse().map_err(|_| bad())?),
            DataType::Date => Value::Date(parse_date_days(s.trim()).ok_or_else(bad)?),
            DataType::Utf8 => Value::Str(s.to_string()),
        })
    }

    pub fn date(d: NaiveDate) -> Self {
        Value::Date(days_from_date(d))
    }

    pub fn dtype(&self) -> Option<DataType> {
        Some(match self {
            Value::Null => return None,
            Value::Int(_) => DataType::Int64,
            Value::Float(_) => DataType::Float64,
            Value::Date(_) => DataType::Date,
            Value::Str(_) => DataType::Utf8,
        })
    }

    pub fn as_cell(&self) -> Cell<'_> {
        match self {
            Value::Null => Cell::Null,
            Value::Int(v) => Cell::Int(*v),
            Value::Float(v) => Cell::Float(*v),
            Value::Date(v) => Cell::Date(*v),
            Value::Str(s) => Cell::Str(s),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Date(a), Value::Date(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Null => {}
            Value::Int(v) => v.hash(state),
            Value::Float(v) => v.to_bits().hash(state),
            Value::Date(v) => v.hash(state),
            Value::Str(s) => s.hash(state),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Nulls first, then by type, then by value.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Int(_) => 1,
                Value::Float(_) => 2,
                Value::Date(_) => 3,
                Value::Str(_) => 4,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)).then(Ordering::Equal),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_cell().render() {
            Some(s) => f.write_str(&s),
            None => f.write_str(""),
        }
    }
}

pub struct ColumnBuilder {
    data: ColumnData,
    validity: Bitmap,
}

impl ColumnBuilder {
    pub fn new(dtype: DataType, capacity: usize) -> Self {
        Self {
            data: ColumnData::empty(dtype, capacity),
            validity: Bitmap::with_capacity(capacity),
        }
    }

    pub fn dtype(&self) -> DataType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.validity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_null(&mut self) {
        match &mut self.data {
            ColumnData::Int64(v) => v.push(0),
            ColumnData::Float64(v) => v.push(0.0),
            ColumnData::Date(v) => v.push(0),
            ColumnData::Utf8(v) => v.push(""),
        }
        self.validity.push(false);
    }

    pub fn push_i64(&mut self, x: i64) {
        match &mut self.data {
            ColumnData::Int64(v) => v.push(x),
            _ => panic!("push_i64 on {} column", self.dtype()),
        }
        self.validity.push(true);
    }

    pub fn push_f64(&mut self, x: f64) {
        match &mut self.data {
            ColumnData::Float64(v) => v.push(x),
            _ => panic!("push_f64 on {} column", self.dtype()),
        }
        self.validity.push(true);
    }

    pub fn push_date(&mut self, days: i32) {
        match &mut self.data {
            ColumnData::Date(v) => v.push(days),
            _ => panic!("push_date on {} column", self.dtype()),
        }
        self.validity.push(true);
    }

    pub fn push_str(&mut self, s: &str) {
        match &mut self.data {
            ColumnData::Utf8(v) => v.push(s),
            _ => panic!("push_str on {} column", self.dtype()),
        }
        self.validity.push(true);
    }

    /// Pushes a cell of the builder's type or null; other types panic.
    pub fn push_cell(&mut self, c: Cell<'_>) {
        match c {
            Cell::Null => self.push_null(),
            Cell::Int(v) => self.push_i64(v),
            Cell::Float(v) => self.push_f64(v),
            Cell::Date(v) => self.push_date(v),
            Cell::Str(s) => self.push_str(s),
        }
    }

    /// Type-checked push.
    pub fn push_value(&mut self, v: &Value) -> Result<()> {
        match v.dtype() {
            Some(t) if t != self.dtype() => Err(Error::SchemaMismatch(format!(
                "cannot store {t} value in {} column",
                self.dtype()
            ))),
            _ => {
                self.push_cell(v.as_cell());
                Ok(())
            }
        }
    }

    pub fn extend_from(&mut self, col: &Column) {
        match (&mut self.data, col.data()) {
            (ColumnData::Int64(a), ColumnData::Int64(b)) => a.extend_from_slice(b),
            (ColumnData::Float64(a), ColumnData::Float64(b)) => a.extend_from_slice(b),
            (ColumnData::Date(a), ColumnData::Date(b)) => a.extend_from_slice(b),
            (ColumnData::Utf8(a), ColumnData::Utf8(b)) => {
                for s in b.iter() {
                    a.push(s);
                }
            }
            (a, b) => panic!("extend {} column with {}", a.dtype(), b.dtype()),
        }
        self.validity.extend_from(col.validity());
    }

    pub fn finish(self) -> Column {
        Column {
            data: self.data,
            validity: self.validity,
        }
    }
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

pub fn days_from_date(d: NaiveDate) -> i32 {
    (d - EPOCH).num_days() as i32
}

pub fn date_from_days(days: i32) -> NaiveDate {
    EPOCH + Duration::days(days as i64)
}

/// Fast path for `YYYY-MM-DD`; anything else is rejected.
pub fn parse_date_days(s: &str) -> Option<i32> {
    let b = s.as_bytes();
    if b.len() == 10 && b[4] == b'-' && b[7] == b'-' {
        let num = |r: std::ops::Range<usize>| -> Option<u32> {
            let mut n = 0u32;
            for &c in &b[r] {
                if !c.is_ascii_digit() {
                    return None;
                }
                n = n * 10 + (c - b'0') as u32;
            }
            Some(n)
        };
        let d = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?;
        return Some(days_from_date(d));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_rejects_duplicates_and_empty_names() {
        let c = |n: &str| ColumnSchema::new(n, DataType::Int64, true);
        assert!(Schema::new(vec![c("a"), c("b")]).is_ok());
        assert!(Schema::new(vec![c("a"), c("a")]).is_err());
        assert!(Schema::new(vec![c("")]).is_err());
    }

    #[test]
    fn date_parsing() {
        assert_eq!(parse_date_days("1970-01-02"), Some(1));
        assert_eq!(parse_date_days("1969-12-31"), Some(-1));
        assert_eq!(parse_date_days("2013-02-30"), None);
        assert_eq!(parse_date_days("2013-2-3"), None);
        assert_eq!(date_from_days(parse_date_days("2013-08-08").unwrap()).to_string(), "2013-08-08");
    }

    #[test]
    fn builder_type_check() {
        let mut b = ColumnBuilder::new(DataType::Utf8, 2);
        assert!(b.push_value(&Value::Int(3)).is_err());
        b.push_value(&Value::str("x")).unwrap();
        b.push_value(&Value::Null).unwrap();
        let c = b.finish();
        assert_eq!(c.get(0), Cell::Str("x"));
        assert_eq!(c.get(1), Cell::Null);
        assert_eq!(c.null_count(), 1);
    }

    #[test]
    fn value_hash_eq_for_floats() {
        use std::collections::HashSet;
        let s: HashSet<Value> = [Value::Float(1.5), Value::Float(1.5), Value::Int(1)].into();
        assert_eq!(s.len(), 2);
    }
}
