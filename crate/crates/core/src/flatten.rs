//! Star-schema denormalization.
//!
//! The central table gets a synthetic row id, is cut into calendar slices,
//! and every slice is left-joined against each dimension in the configured
//! order. Slices are independent and run on the current rayon pool; their
//! results are appended to the output container in period order, so the
//! bytes written do not depend on the number of workers.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finding::Finding;
use crate::table::container::{encode_chunk, ContainerWriter};
use crate::table::{
    date_from_days, Cell, Column, ColumnBuilder, ColumnData, ColumnSchema, DataType,
    PartitionedTable, Period, Schema, Table, TimeUnit,
};

/// Name of the injected central row id column.
pub const ROW_ID: &str = "_row_id";

pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionJoin {
    pub table: String,
    /// `(column in the accumulated table, column in the dimension)` pairs.
    pub keys: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub central: String,
    pub dimensions: Vec<DimensionJoin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlicingSpec {
    pub date_column: Option<String>,
    pub unit: TimeUnit,
}

impl SlicingSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn by(column: impl Into<String>, unit: TimeUnit) -> Self {
        Self {
            date_column: Some(column.into()),
            unit,
        }
    }
}

/// How dimension columns are named in the flat table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnPrefix {
    /// Keep the dimension's column name unless it is already taken, then use
    /// `<dim>__<col>`.
    #[default]
    Collisions,
    /// Always use `<dim>__<col>`.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    pub dimension: String,
    pub rows_before: u64,
    pub rows_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStat {
    pub period: String,
    pub central_rows: u64,
    pub flat_rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatteningReport {
    pub central_table: String,
    pub central_row_count: u64,
    pub flat_row_count: u64,
    pub expansion_factor: f64,
    pub per_stage: Vec<StageStat>,
    pub per_column_non_null: BTreeMap<String, u64>,
    pub distinct_central_keys_in: u64,
    pub distinct_central_keys_out: u64,
    pub slices: Vec<SliceStat>,
}

impl FlatteningReport {
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Period of every row; `Unsliced` for null dates.
pub fn slice_central(central: &Table, slicing: &SlicingSpec) -> Result<PartitionedTable> {
    let mut slices = BTreeMap::new();
    let column = match (slicing.unit, &slicing.date_column) {
        (TimeUnit::None, _) => {
            slices.insert(Period::All, central.clone());
            return Ok(PartitionedTable {
                unit: TimeUnit::None,
                slices,
            });
        }
        (_, None) => {
            return Err(Error::Config(
                "slicing unit set without a date column".into(),
            ))
        }
        (_, Some(c)) => c,
    };
    let col = central.column(column)?;
    let days = match col.data() {
        ColumnData::Date(d) => d,
        other => {
            return Err(Error::SchemaMismatch(format!(
                "slice column `{column}` must be date, found {}",
                other.dtype()
            )))
        }
    };
    let mut groups: BTreeMap<Period, Vec<usize>> = BTreeMap::new();
    // consecutive rows usually share a period; memoize the last lookup
    let mut last: Option<(i32, Period)> = None;
    for (r, &d) in days.iter().enumerate() {
        let p = if !col.is_valid(r) {
            Period::Unsliced
        } else if let Some((ld, lp)) = last.filter(|(ld, _)| *ld == d) {
            debug_assert_eq!(ld, d);
            lp
        } else {
            let date = date_from_days(d);
            let p = match slicing.unit {
                TimeUnit::Month => {
                    use chrono::Datelike;
                    Period::Month(date.year(), date.month())
                }
                TimeUnit::Year => {
                    use chrono::Datelike;
                    Period::Year(date.year())
                }
                TimeUnit::None => unreachable!(),
            };
            last = Some((d, p));
            p
        };
        groups.entry(p).or_default().push(r);
    }
    for (p, idx) in groups {
        slices.insert(p, central.take(&idx));
    }
    Ok(PartitionedTable {
        unit: slicing.unit,
        slices,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum KeyCell<'a> {
    Int(i64),
    Float(u64),
    Date(i32),
    Str(&'a str),
}

impl<'a> KeyCell<'a> {
    fn from_cell(c: Cell<'a>) -> Option<Self> {
        Some(match c {
            Cell::Null => return None,
            Cell::Int(v) => KeyCell::Int(v),
            Cell::Float(v) => KeyCell::Float(v.to_bits()),
            Cell::Date(v) => KeyCell::Date(v),
            Cell::Str(s) => KeyCell::Str(s),
        })
    }
}

// Plain enum so the type stays covariant and dimension keys can be probed with
// shorter-lived slice keys.
#[derive(Clone, PartialEq, Eq, Hash)]
enum Key<'a> {
    One(KeyCell<'a>),
    Many(Vec<KeyCell<'a>>),
}

fn build_key<'a>(cells: impl Iterator<Item = Cell<'a>>, n: usize) -> Option<Key<'a>> {
    if n == 1 {
        let mut cells = cells;
        return KeyCell::from_cell(cells.next()?).map(Key::One);
    }
    let mut v = Vec::with_capacity(n);
    for c in cells {
        v.push(KeyCell::from_cell(c)?);
    }
    Some(Key::Many(v))
}

// shortens the index's key lifetime to that of the probe
fn lookup<'b>(index: &'b HashMap<Key<'b>, Vec<u32>>, key: &Key<'b>) -> Option<&'b Vec<u32>> {
    index.get(key)
}

/// Where a column of the accumulated table lives.
#[derive(Clone, Copy)]
enum Source {
    Central(usize),
    Dim { stage: usize, column: usize },
}

struct PreparedDim<'a> {
    name: String,
    table: &'a Table,
    left_keys: Vec<Source>,
    index: HashMap<Key<'a>, Vec<u32>>,
    /// Dimension columns carried into the output.
    carried: Vec<usize>,
}

/// A join plan: output schema plus hash indexes of every dimension. Built
/// once and shared by all slice workers.
pub struct Flattener<'a> {
    central_schema: Schema,
    dims: Vec<PreparedDim<'a>>,
    output: Arc<Schema>,
    sources: Vec<Source>,
}

impl<'a> Flattener<'a> {
    pub fn new(
        central: &Schema,
        dims: &'a BTreeMap<String, Table>,
        join: &JoinSpec,
        prefix: ColumnPrefix,
    ) -> Result<Self> {
        let mut central_fields = central.columns().to_vec();
        if central.index_of(ROW_ID).is_some() {
            return Err(Error::SchemaMismatch(format!(
                "central table already has a `{ROW_ID}` column"
            )));
        }
        central_fields.push(ColumnSchema::new(ROW_ID, DataType::Int64, false));
        let central_schema = Schema::new(central_fields)?;

        let mut out_fields: Vec<ColumnSchema> = central_schema.columns().to_vec();
        let mut sources: Vec<Source> = (0..out_fields.len()).map(Source::Central).collect();
        let mut names: HashMap<String, usize> = out_fields
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();

        let mut prepared = Vec::with_capacity(join.dimensions.len());
        for (stage, dj) in join.dimensions.iter().enumerate() {
            let table = dims.get(&dj.table).ok_or_else(|| {
                Error::Config(format!("dimension table `{}` was not provided", dj.table))
            })?;
            if dj.keys.is_empty() {
                return Err(Error::Config(format!("dimension `{}` has no join keys", dj.table)));
            }
            let mut left_keys = Vec::new();
            let mut right_idx = Vec::new();
            for (l, r) in &dj.keys {
                let li = *names.get(l).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "join key `{l}` for `{}` not found in the accumulated table",
                        dj.table
                    ))
                })?;
                let ri = table.schema().index_of(r).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "join key `{r}` not found in dimension `{}`",
                        dj.table
                    ))
                })?;
                let lt = out_fields[li].dtype;
                let rt = table.schema().columns()[ri].dtype;
                if lt != rt {
                    return Err(Error::SchemaMismatch(format!(
                        "join key types differ: `{l}` is {lt}, `{}.{r}` is {rt}",
                        dj.table
                    )));
                }
                left_keys.push(sources[li]);
                right_idx.push(ri);
            }

            let mut index: HashMap<Key<'a>, Vec<u32>> = HashMap::new();
            for row in 0..table.num_rows() {
                let cells = right_idx.iter().map(|&ri| table.column_at(ri).get(row));
                if let Some(key) = build_key(cells, right_idx.len()) {
                    index.entry(key).or_default().push(row as u32);
                }
            }

            let mut carried = Vec::new();
            for (ci, f) in table.schema().columns().iter().enumerate() {
                if right_idx.contains(&ci) {
                    continue;
                }
                let prefixed = format!("{}__{}", dj.table, f.name);
                let name = match prefix {
                    ColumnPrefix::All => prefixed,
                    ColumnPrefix::Collisions if names.contains_key(&f.name) => prefixed,
                    ColumnPrefix::Collisions => f.name.clone(),
                };
                if names.contains_key(&name) {
                    return Err(Error::SchemaMismatch(format!(
                        "column name `{name}` collides even after prefixing"
                    )));
                }
                names.insert(name.clone(), out_fields.len());
                out_fields.push(ColumnSchema::new(name, f.dtype, true));
                sources.push(Source::Dim { stage, column: ci });
                carried.push(ci);
            }
            prepared.push(PreparedDim {
                name: dj.table.clone(),
                table,
                left_keys,
                index,
                carried,
            });
        }
        Ok(Self {
            central_schema,
            dims: prepared,
            output: Arc::new(Schema::new(out_fields)?),
            sources,
        })
    }

    pub fn output_schema(&self) -> &Schema {
        &self.output
    }

    /// Adds the row id column, numbering rows in central order.
    pub fn with_row_ids(&self, central: &Table) -> Result<Table> {
        let ids = ColumnData::Int64((0..central.num_rows() as i64).collect());
        let t = central.with_column(
            ColumnSchema::new(ROW_ID, DataType::Int64, false),
            Column::all_valid(ids),
        )?;
        if t.schema() != &self.central_schema {
            return Err(Error::SchemaMismatch(
                "central table does not match the join plan".into(),
            ));
        }
        Ok(t)
    }

    /// Joins one slice (which already carries row ids).
    pub fn join_slice(&self, slice: &Table) -> Result<(Table, Vec<(u64, u64)>)> {
        let mut base: Vec<usize> = (0..slice.num_rows()).collect();
        let mut picks: Vec<Vec<Option<u32>>> = Vec::with_capacity(self.dims.len());
        let mut stage_counts = Vec::with_capacity(self.dims.len());

        for dim in &self.dims {
            let before = base.len();
            let mut next_base = Vec::with_capacity(before);
            let mut next_picks: Vec<Vec<Option<u32>>> =
                vec![Vec::with_capacity(before); picks.len()];
            let mut mine = Vec::with_capacity(before);
            for r in 0..before {
                let cells = dim.left_keys.iter().map(|src| match *src {
                    Source::Central(c) => slice.column_at(c).get(base[r]),
                    Source::Dim { stage, column } => match picks[stage][r] {
                        Some(dr) => self.dims[stage].table.column_at(column).get(dr as usize),
                        None => Cell::Null,
                    },
                });
                let key = build_key(cells, dim.left_keys.len());
                let matches = key.and_then(|k| lookup(&dim.index, &k));
                match matches {
                    Some(rows) => {
                        for &m in rows {
                            next_base.push(base[r]);
                            for (np, p) in next_picks.iter_mut().zip(&picks) {
                                np.push(p[r]);
                            }
                            mine.push(Some(m));
                        }
                    }
                    None => {
                        next_base.push(base[r]);
                        for (np, p) in next_picks.iter_mut().zip(&picks) {
                            np.push(p[r]);
                        }
                        mine.push(None);
                    }
                }
            }
            next_picks.push(mine);
            stage_counts.push((before as u64, next_base.len() as u64));
            base = next_base;
            picks = next_picks;
        }

        let mut columns = Vec::with_capacity(self.sources.len());
        for src in &self.sources {
            let col = match *src {
                Source::Central(c) => slice.column_at(c).take(&base),
                Source::Dim { stage, column } => {
                    let dcol = self.dims[stage].table.column_at(column);
                    let mut b = ColumnBuilder::new(dcol.dtype(), base.len());
                    for p in &picks[stage] {
                        match p {
                            Some(dr) => b.push_cell(dcol.get(*dr as usize)),
                            None => b.push_null(),
                        }
                    }
                    b.finish()
                }
            };
            columns.push(Arc::new(col));
        }
        let n = base.len();
        Ok((
            Table::from_arcs(Arc::clone(&self.output), columns, Some(n))?,
            stage_counts,
        ))
    }

    fn dim_names(&self) -> Vec<String> {
        self.dims
            .iter()
            .map(|d| {
                debug_assert!(d.carried.len() <= d.table.num_columns());
                d.name.clone()
            })
            .collect()
    }
}

/// Result of flattening without touching the file system.
pub struct FlatOutput {
    pub slices: Vec<(Period, Table)>,
    pub report: FlatteningReport,
}

impl FlatOutput {
    pub fn schema(&self) -> Option<&Schema> {
        self.slices.first().map(|(_, t)| t.schema())
    }

    pub fn concat(&self, schema: &Schema) -> Result<Table> {
        let parts: Vec<Table> = self.slices.iter().map(|(_, t)| t.clone()).collect();
        if parts.is_empty() {
            return Ok(Table::empty(schema.clone()));
        }
        Table::concat(schema, &parts)
    }
}

pub fn flatten_in_memory(
    central: &Table,
    dims: &BTreeMap<String, Table>,
    join: &JoinSpec,
    slicing: &SlicingSpec,
    prefix: ColumnPrefix,
) -> Result<FlatOutput> {
    let (out, _) = run(central, dims, join, slicing, prefix, false)?;
    Ok(out)
}

/// Flattens and writes the result to a `CFT1` container at `out_path`.
pub fn flatten(
    central: &Table,
    dims: &BTreeMap<String, Table>,
    join: &JoinSpec,
    slicing: &SlicingSpec,
    prefix: ColumnPrefix,
    out_path: &Path,
) -> Result<FlatteningReport> {
    let (out, encoded) = run(central, dims, join, slicing, prefix, true)?;
    let schema = Flattener::new(central.schema(), dims, join, prefix)?
        .output_schema()
        .clone();
    let mut w = ContainerWriter::create(out_path, &schema)?;
    for chunk in encoded {
        w.append_encoded(&chunk)?;
    }
    w.finish()?;
    Ok(out.report)
}

fn run(
    central: &Table,
    dims: &BTreeMap<String, Table>,
    join: &JoinSpec,
    slicing: &SlicingSpec,
    prefix: ColumnPrefix,
    encode: bool,
) -> Result<(FlatOutput, Vec<Vec<u8>>)> {
    let plan = Flattener::new(central.schema(), dims, join, prefix)?;
    let with_ids = plan.with_row_ids(central)?;
    let parts = slice_central(&with_ids, slicing)?;
    let slices: Vec<(Period, Table)> = parts.slices.into_iter().collect();

    let joined: Vec<(Table, Vec<(u64, u64)>, Vec<u8>)> = slices
        .par_iter()
        .map(|(_, t)| {
            let (flat, stages) = plan.join_slice(t)?;
            let bytes = if encode { encode_chunk(&flat)? } else { Vec::new() };
            Ok((flat, stages, bytes))
        })
        .collect::<Result<_>>()?;

    let central_rows = central.num_rows() as u64;
    let mut per_stage: Vec<StageStat> = plan
        .dim_names()
        .into_iter()
        .map(|dimension| StageStat {
            dimension,
            rows_before: 0,
            rows_after: 0,
        })
        .collect();
    let mut per_column_non_null: BTreeMap<String, u64> = plan
        .output_schema()
        .names()
        .map(|n| (n.to_string(), 0))
        .collect();
    let mut seen = vec![false; central.num_rows()];
    let mut slice_stats = Vec::with_capacity(slices.len());
    let mut out_slices = Vec::with_capacity(slices.len());
    let mut encoded = Vec::with_capacity(slices.len());
    let row_id_col = plan.output_schema().require(ROW_ID)?;
    let mut flat_rows = 0u64;

    for ((period, central_slice), (flat, stages, bytes)) in slices.into_iter().zip(joined) {
        for (acc, (b, a)) in per_stage.iter_mut().zip(stages) {
            acc.rows_before += b;
            acc.rows_after += a;
        }
        for (name, n) in flat.non_null_counts() {
            *per_column_non_null.get_mut(&name).expect("known column") += n as u64;
        }
        if let ColumnData::Int64(ids) = flat.column_at(row_id_col).data() {
            for &id in ids {
                if let Some(s) = seen.get_mut(id as usize) {
                    *s = true;
                }
            }
        }
        flat_rows += flat.num_rows() as u64;
        slice_stats.push(SliceStat {
            period: period.to_string(),
            central_rows: central_slice.num_rows() as u64,
            flat_rows: flat.num_rows() as u64,
        });
        out_slices.push((period, flat));
        encoded.push(bytes);
    }

    let distinct_out = seen.iter().filter(|&&s| s).count() as u64;
    let expansion_factor = if central_rows == 0 {
        1.0
    } else {
        flat_rows as f64 / central_rows as f64
    };
    let report = FlatteningReport {
        central_table: join.central.clone(),
        central_row_count: central_rows,
        flat_row_count: flat_rows,
        expansion_factor,
        per_stage,
        per_column_non_null,
        distinct_central_keys_in: central_rows,
        distinct_central_keys_out: distinct_out,
        slices: slice_stats,
    };
    if report.distinct_central_keys_out != report.distinct_central_keys_in
        || report.flat_row_count < report.central_row_count
    {
        return Err(Error::Integrity(format!(
            "left join lost central rows: {} of {} row ids in output, {} flat rows",
            report.distinct_central_keys_out, report.distinct_central_keys_in, report.flat_row_count
        )));
    }
    Ok((
        FlatOutput {
            slices: out_slices,
            report,
        },
        encoded,
    ))
}

/// Post-hoc checks on a report: lost central keys, shrinkage and
/// block-sparsity loss (expansion above `sparsity_threshold`).
pub fn verify_flattening(report: &FlatteningReport, sparsity_threshold: f64) -> Vec<Finding> {
    let mut findings = Vec::new();
    if report.distinct_central_keys_out < report.distinct_central_keys_in {
        findings.push(Finding::error(
            "central-keys-lost",
            format!(
                "{} distinct central keys in, {} out",
                report.distinct_central_keys_in, report.distinct_central_keys_out
            ),
        ));
    }
    if report.central_row_count > 0 && report.expansion_factor < 1.0 {
        findings.push(Finding::error(
            "expansion-below-one",
            format!(
                "flat table has fewer rows ({}) than the central table ({})",
                report.flat_row_count, report.central_row_count
            ),
        ));
    }
    if report.expansion_factor > sparsity_threshold {
        findings.push(Finding::warning(
            "block-sparsity",
            format!(
                "expansion factor {:.2} exceeds {sparsity_threshold}: dimensions multiply each other instead of filling disjoint blocks",
                report.expansion_factor
            ),
        ));
    }
    findings
}
