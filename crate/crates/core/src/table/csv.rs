//! CSV ingestion into typed tables.
//!
//! Dialect: RFC 4180 quoting, UTF-8, one header row, configurable single
//! byte delimiter. An empty cell is a null. The body is cut at record
//! boundaries and the pieces are parsed on the current rayon pool.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{parse_date_days, Cell, Column, ColumnBuilder, DataType, Schema, Table};
use crate::error::{Error, Result};

const MIN_CHUNK_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CsvLoadStats {
    pub rows: usize,
    /// Null cells per column, including coerced ones.
    pub null_cells: BTreeMap<String, usize>,
    /// Cells that failed to parse in nullable columns and became null.
    pub coerced_cells: BTreeMap<String, usize>,
}

impl CsvLoadStats {
    pub fn total_coerced(&self) -> usize {
        self.coerced_cells.values().sum()
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, delimiter: u8) -> Result<(Table, CsvLoadStats)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, schema, delimiter)
}

struct ChunkOut {
    columns: Vec<Column>,
    rows: usize,
    nulls: Vec<usize>,
    coerced: Vec<usize>,
}

struct LocalError {
    row: usize,
    column: String,
    message: String,
}

pub fn parse_csv(bytes: &[u8], schema: &Schema, delimiter: u8) -> Result<(Table, CsvLoadStats)> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let header_end = next_record_end(bytes, 0);
    let mut hr = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .from_reader(&bytes[..header_end]);
    let header = match hr.records().next() {
        Some(rec) => rec?,
        None => return Err(Error::SchemaMismatch("CSV has no header row".into())),
    };

    // schema column -> position in the file
    let mut positions = Vec::with_capacity(schema.len());
    for field in schema.columns() {
        let hits: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim() == field.name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => positions.push(*i),
            [] => {
                return Err(Error::SchemaMismatch(format!(
                    "CSV header is missing column `{}`",
                    field.name
                )))
            }
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "CSV header repeats column `{}`",
                    field.name
                )))
            }
        }
    }
    let width = header.len();

    let body = &bytes[header_end..];
    let chunks = split_records(body, rayon::current_num_threads() * 4);
    let parsed: Vec<std::result::Result<ChunkOut, LocalError>> = chunks
        .par_iter()
        .map(|c| parse_chunk(c, schema, &positions, width, delimiter))
        .collect();

    let mut outs = Vec::with_capacity(parsed.len());
    let mut seen = 0usize;
    for p in parsed {
        match p {
            Ok(out) => {
                seen += out.rows;
                outs.push(out);
            }
            Err(e) => {
                return Err(Error::Type {
                    row: seen + e.row,
                    column: e.column,
                    message: e.message,
                })
            }
        }
    }

    let rows: usize = outs.iter().map(|o| o.rows).sum();
    let mut stats = CsvLoadStats {
        rows,
        ..Default::default()
    };
    let mut columns = Vec::with_capacity(schema.len());
    for (ci, field) in schema.columns().iter().enumerate() {
        let parts: Vec<&Column> = outs.iter().map(|o| &o.columns[ci]).collect();
        let col = if parts.len() == 1 {
            parts[0].clone()
        } else {
            Column::concat(&parts, field.dtype)
        };
        columns.push(Arc::new(col));
        let nulls: usize = outs.iter().map(|o| o.nulls[ci]).sum();
        let coerced: usize = outs.iter().map(|o| o.coerced[ci]).sum();
        stats.null_cells.insert(field.name.clone(), nulls);
        if coerced > 0 {
            stats.coerced_cells.insert(field.name.clone(), coerced);
        }
    }
    let table = Table::from_arcs(Arc::new(schema.clone()), columns, Some(rows))?;
    Ok((table, stats))
}

/// End (exclusive) of the record starting at `from`, honoring quotes.
fn next_record_end(bytes: &[u8], from: usize) -> usize {
    let mut quoted = false;
    for (i, &b) in bytes[from..].iter().enumerate() {
        match b {
            b'"' => quoted = !quoted,
            b'\n' if !quoted => return from + i + 1,
            _ => {}
        }
    }
    bytes.len()
}

fn split_records(body: &[u8], pieces: usize) -> Vec<&[u8]> {
    if body.is_empty() {
        return vec![body];
    }
    let target = (body.len() / pieces.max(1)).max(MIN_CHUNK_BYTES);
    let mut out = Vec::new();
    let mut start = 0;
    let mut quoted = false;
    let mut i = 0;
    while i < body.len() {
        match body[i] {
            b'"' => quoted = !quoted,
            b'\n' if !quoted && i + 1 - start >= target => {
                out.push(&body[start..=i]);
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    if start < body.len() {
        out.push(&body[start..]);
    }
    out
}

fn parse_chunk(
    chunk: &[u8],
    schema: &Schema,
    positions: &[usize],
    width: usize,
    delimiter: u8,
) -> std::result::Result<ChunkOut, LocalError> {
    let estimate = chunk.len() / 32 + 1;
    let mut builders: Vec<ColumnBuilder> = schema
        .columns()
        .iter()
        .map(|c| ColumnBuilder::new(c.dtype, estimate))
        .collect();
    let mut nulls = vec![0usize; schema.len()];
    let mut coerced = vec![0usize; schema.len()];
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(chunk);
    let mut record = ::csv::ByteRecord::new();
    let mut row = 0usize;
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                return Err(LocalError {
                    row: row + 1,
                    column: String::new(),
                    message: e.to_string(),
                })
            }
        }
        row += 1;
        // a lone blank line reads as one empty field
        if record.len() == 1 && record[0].is_empty() && width != 1 {
            row -= 1;
            continue;
        }
        if record.len() != width {
            return Err(LocalError {
                row,
                column: String::new(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (ci, field) in schema.columns().iter().enumerate() {
            let raw = &record[positions[ci]];
            let b = &mut builders[ci];
            let text = match std::str::from_utf8(raw) {
                Ok(t) => t,
                Err(_) => {
                    return Err(LocalError {
                        row,
                        column: field.name.clone(),
                        message: "invalid UTF-8".into(),
                    })
                }
            };
            if text.is_empty() {
                if !field.nullable {
                    return Err(LocalError {
                        row,
                        column: field.name.clone(),
                        message: "empty cell in non-nullable column".into(),
                    });
                }
                b.push_null();
                nulls[ci] += 1;
                continue;
            }
            match parse_cell(text, field.dtype) {
                Some(cell) => b.push_cell(cell),
                None if field.nullable => {
                    b.push_null();
                    nulls[ci] += 1;
                    coerced[ci] += 1;
                }
                None => {
                    return Err(LocalError {
                        row,
                        column: field.name.clone(),
                        message: format!("cannot parse `{text}` as {}", field.dtype),
                    })
                }
            }
        }
    }
    Ok(ChunkOut {
        columns: builders.into_iter().map(ColumnBuilder::finish).collect(),
        rows: row,
        nulls,
        coerced,
    })
}

fn parse_cell(text: &str, dtype: DataType) -> Option<Cell<'_>> {
    match dtype {
        DataType::Utf8 => Some(Cell::Str(text)),
        DataType::Int64 => text.trim().parse().ok().map(Cell::Int),
        DataType::Float64 => text
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|f| f.is_finite())
            .map(Cell::Float),
        DataType::Date => parse_date_days(text.trim()).map(Cell::Date),
    }
}

/// Writes `table` in the same dialect `load_csv` reads.
pub fn write_csv<W: io::Write>(table: &Table, out: W, delimiter: u8) -> Result<()> {
    let mut w = ::csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record(table.schema().names())?;
    let mut record = Vec::with_capacity(table.num_columns());
    for r in 0..table.num_rows() {
        record.clear();
        for c in table.columns() {
            record.push(c.get(r).render().unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
