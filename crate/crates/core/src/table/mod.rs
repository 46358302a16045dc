//! Typed columnar tables with validity bitmaps.
//!
//! A [`Table`] is immutable once built. Columns sit behind `Arc`, so
//! [`Table::project`] is a pointer copy and never touches values. The
//! remaining extractor primitives ([`Table::drop_null_rows`] and
//! [`Table::filter_rows`]) build a row index list from bitmaps or values and
//! gather once.

mod bitmap;
mod column;
pub mod container;
pub mod csv;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bitmap::Bitmap;
pub use column::{
    date_from_days, days_from_date, parse_date_days, Cell, Column, ColumnBuilder, ColumnData,
    ColumnSchema, DataType, Schema, StringArray, Value,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Table {
    schema: Arc<Schema>,
    columns: Vec<Arc<Column>>,
    rows: usize,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.schema == other.schema
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| Arc::ptr_eq(a, b) || a == b)
    }
}

impl Table {
    pub fn new(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        Self::from_arcs(Arc::new(schema), columns.into_iter().map(Arc::new).collect(), None)
    }

    /// `rows` only matters for zero-column tables.
    pub fn from_arcs(
        schema: Arc<Schema>,
        columns: Vec<Arc<Column>>,
        rows: Option<usize>,
    ) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "schema has {} columns, got {}",
                schema.len(),
                columns.len()
            )));
        }
        let n = columns.first().map(|c| c.len()).or(rows).unwrap_or(0);
        for (c, s) in columns.iter().zip(schema.columns()) {
            if c.len() != n {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` has {} rows, expected {n}",
                    s.name,
                    c.len()
                )));
            }
            if c.dtype() != s.dtype {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` declared {} but holds {}",
                    s.name,
                    s.dtype,
                    c.dtype()
                )));
            }
            if !s.nullable && !c.validity().all_valid() {
                return Err(Error::SchemaMismatch(format!(
                    "non-nullable column `{}` contains nulls",
                    s.name
                )));
            }
        }
        Ok(Self {
            schema,
            columns,
            rows: n,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = schema
            .columns()
            .iter()
            .map(|c| Arc::new(Column::all_valid(ColumnData::empty(c.dtype, 0))))
            .collect();
        Self {
            schema: Arc::new(schema),
            columns,
            rows: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Arc<Column>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.schema.require(name)?])
    }

    pub fn column_at(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell<'_> {
        self.columns[col].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.get(row).to_value()).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.rows).map(|r| self.row(r)).collect()
    }

    /// Rows sorted lexicographically; the comparison key for "canonically
    /// equal" tables.
    pub fn canonical_rows(&self) -> Vec<Vec<Value>> {
        let mut rows = self.rows();
        rows.sort();
        rows
    }

    /// Column subset in the requested order. No value is read.
    pub fn project<S: AsRef<str>>(&self, names: &[S]) -> Result<Table> {
        let mut fields = Vec::with_capacity(names.len());
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let i = self.schema.require(n.as_ref())?;
            fields.push(self.schema.columns()[i].clone());
            cols.push(Arc::clone(&self.columns[i]));
        }
        Table::from_arcs(Arc::new(Schema::new(fields)?), cols, Some(self.rows))
    }

    /// Drops every row with a null in any listed column. Only bitmaps are
    /// consulted.
    pub fn drop_null_rows<S: AsRef<str>>(&self, names: &[S]) -> Result<Table> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.schema.require(n.as_ref()))
            .collect::<Result<_>>()?;
        if idx.iter().all(|&i| self.columns[i].validity().all_valid()) {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.rows)
            .filter(|&r| idx.iter().all(|&i| self.columns[i].is_valid(r)))
            .collect();
        Ok(self.take(&keep))
    }

    /// Keeps rows whose value in `name` is in `allow`. Nulls never match.
    pub fn filter_rows(&self, name: &str, allow: &[Value]) -> Result<Table> {
        let ci = self.schema.require(name)?;
        let col = &self.columns[ci];
        let dtype = col.dtype();
        for v in allow {
            if let Some(t) = v.dtype() {
                if t != dtype {
                    return Err(Error::SchemaMismatch(format!(
                        "filter on {dtype} column `{name}` with {t} value `{v}`"
                    )));
                }
            }
        }
        let keep: Vec<usize> = match col.data() {
            ColumnData::Utf8(strings) => {
                let set: HashSet<&str> = allow
                    .iter()
                    .filter_map(|v| match v {
                        Value::Str(s) => Some(s.as_str()),
                        _ => None,
                    })
                    .collect();
                (0..self.rows)
                    .filter(|&r| col.is_valid(r) && set.contains(strings.get(r)))
                    .collect()
            }
            _ => {
                let set: HashSet<&Value> = allow.iter().filter(|v| !v.is_null()).collect();
                (0..self.rows)
                    .filter(|&r| {
                        let v = col.get(r).to_value();
                        !v.is_null() && set.contains(&v)
                    })
                    .collect()
            }
        };
        Ok(self.take(&keep))
    }

    pub fn take(&self, idx: &[usize]) -> Table {
        let columns = self.columns.iter().map(|c| Arc::new(c.take(idx))).collect();
        Table {
            schema: Arc::clone(&self.schema),
            columns,
            rows: idx.len(),
        }
    }

    /// Row-wise concatenation; all parts must share a schema.
    pub fn concat(schema: &Schema, parts: &[Table]) -> Result<Table> {
        for p in parts {
            if p.schema() != schema {
                return Err(Error::SchemaConflict(
                    "concatenating tables with different schemas".into(),
                ));
            }
        }
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let columns = schema
            .columns()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let cols: Vec<&Column> = parts.iter().map(|p| p.columns[i].as_ref()).collect();
                Arc::new(Column::concat(&cols, f.dtype))
            })
            .collect();
        Ok(Table {
            schema: Arc::new(schema.clone()),
            columns,
            rows,
        })
    }

    /// Appends a column; used for the synthetic row id.
    pub fn with_column(&self, field: ColumnSchema, col: Column) -> Result<Table> {
        let mut fields = self.schema.columns().to_vec();
        fields.push(field);
        let mut cols = self.columns.clone();
        cols.push(Arc::new(col));
        Table::from_arcs(Arc::new(Schema::new(fields)?), cols, Some(self.rows))
    }

    pub fn non_null_counts(&self) -> Vec<(String, usize)> {
        self.schema
            .columns()
            .iter()
            .zip(&self.columns)
            .map(|(f, c)| (f.name.clone(), c.validity().count_valid()))
            .collect()
    }
}

/// Row-oriented construction, mostly for tests and small inputs.
pub fn table_from_rows(schema: Schema, rows: &[Vec<Value>]) -> Result<Table> {
    let mut builders: Vec<ColumnBuilder> = schema
        .columns()
        .iter()
        .map(|c| ColumnBuilder::new(c.dtype, rows.len()))
        .collect();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != builders.len() {
            return Err(Error::SchemaMismatch(format!(
                "row {r} has {} cells, expected {}",
                row.len(),
                builders.len()
            )));
        }
        for (b, v) in builders.iter_mut().zip(row) {
            b.push_value(v)?;
        }
    }
    let cols: Vec<Column> = builders.into_iter().map(ColumnBuilder::finish).collect();
    let n = rows.len();
    Table::from_arcs(
        Arc::new(schema),
        cols.into_iter().map(Arc::new).collect(),
        Some(n),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    None,
    Month,
    Year,
}

/// Calendar bucket of a slice. Orders chronologically with the unsliced
/// bucket (null slice dates) last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    All,
    Year(i32),
    Month(i32, u32),
    Unsliced,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::All => f.write_str("all"),
            Period::Year(y) => write!(f, "{y:04}"),
            Period::Month(y, m) => write!(f, "{y:04}-{m:02}"),
            Period::Unsliced => f.write_str("unsliced"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartitionedTable {
    pub unit: TimeUnit,
    pub slices: BTreeMap<Period, Table>,
}

impl PartitionedTable {
    pub fn total_rows(&self) -> usize {
        self.slices.values().map(Table::num_rows).sum()
    }
}
