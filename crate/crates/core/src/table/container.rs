//! The `CFT1` columnar container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFT1"
//! u32 column count
//!   per column: u32 name length, name bytes (UTF-8), u8 dtype, u8 nullable
//! chunk*
//!   u64 row count
//!   u8  codec (0 = none)
//!   per column:
//!     ceil(rows / 8) validity bytes, LSB first
//!     payload: int64 -> rows * i64, float64 -> rows * f64, date -> rows * i32,
//!              string -> (rows + 1) * u32 offsets then the UTF-8 bytes
//! footer
//!   u64 file offset of each chunk
//!   u32 chunk count
//!   u32 CRC32 of every byte before this field
//! ```
//!
//! Dtype codes: 0 int64, 1 float64, 2 date, 3 string.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::{Bitmap, Column, ColumnData, ColumnSchema, DataType, Schema, StringArray, Table};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFT1";
pub const CODEC_NONE: u8 = 0;

pub fn encode_header(schema: &Schema) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + schema.len() * 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(schema.len() as u32).to_le_bytes());
    for c in schema.columns() {
        out.extend_from_slice(&(c.name.len() as u32).to_le_bytes());
        out.extend_from_slice(c.name.as_bytes());
        out.push(c.dtype.code());
        out.push(c.nullable as u8);
    }
    out
}

/// Serializes one chunk. Safe to call from many threads; only the final
/// write has to be ordered.
pub fn encode_chunk(table: &Table) -> Result<Vec<u8>> {
    let rows = table.num_rows();
    let mut out = Vec::with_capacity(16 + rows * table.num_columns() * 9);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.push(CODEC_NONE);
    for col in table.columns() {
        out.extend_from_slice(col.validity().as_bytes());
        match col.data() {
            ColumnData::Int64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Float64(v) => {
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()))
            }
            ColumnData::Date(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Utf8(s) => {
                if s.data().len() > u32::MAX as usize {
                    return Err(Error::Validation(
                        "string column chunk exceeds 4 GiB; split the chunk".into(),
                    ));
                }
                for &o in s.offsets() {
                    out.extend_from_slice(&(o as u32).to_le_bytes());
                }
                out.extend_from_slice(s.data().as_bytes());
            }
        }
    }
    Ok(out)
}

pub struct ContainerWriter {
    path: PathBuf,
    out: BufWriter<File>,
    crc: crc32fast::Hasher,
    pos: u64,
    schema: Schema,
    offsets: Vec<u64>,
}

impl ContainerWriter {
    pub fn create(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = Self {
            out: BufWriter::with_capacity(1 << 20, file),
            path,
            crc: crc32fast::Hasher::new(),
            pos: 0,
            schema: schema.clone(),
            offsets: Vec::new(),
        };
        w.write_raw(&encode_header(schema))?;
        Ok(w)
    }

    /// Reopens a finished container for more chunks. The footer is dropped
    /// and rewritten by [`ContainerWriter::finish`].
    pub fn open_append(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_layout(&bytes)?;
        if &parsed.schema != schema {
            return Err(Error::SchemaConflict(format!(
                "{} holds a different schema",
                path.display()
            )));
        }
        let body_end = parsed.body_end as u64;
        let mut crc = crc32fast::Hasher::new();
        crc.update(&bytes[..parsed.body_end]);
        let mut file = OpenOptions::new()
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.set_len(body_end).map_err(|e| Error::io(&path, e))?;
        file.seek(SeekFrom::Start(body_end))
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::with_capacity(1 << 20, file),
            path,
            crc,
            pos: body_end,
            schema: parsed.schema,
            offsets: parsed.offsets,
        })
    }

    fn write_raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.out
            .write_all(bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        self.crc.update(bytes);
        self.pos += bytes.len() as u64;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn append(&mut self, table: &Table) -> Result<()> {
        if table.schema() != &self.schema {
            return Err(Error::SchemaConflict(format!(
                "chunk schema [{}] does not match container schema [{}]",
                table.schema().names().collect::<Vec<_>>().join(","),
                self.schema.names().collect::<Vec<_>>().join(",")
            )));
        }
        let bytes = encode_chunk(table)?;
        self.append_encoded(&bytes)
    }

    /// Appends bytes produced by [`encode_chunk`] for a table with this
    /// writer's schema.
    pub fn append_encoded(&mut self, chunk: &[u8]) -> Result<()> {
        self.offsets.push(self.pos);
        self.write_raw(chunk)
    }

    pub fn finish(mut self) -> Result<()> {
        let mut footer = Vec::with_capacity(self.offsets.len() * 8 + 4);
        for o in &self.offsets {
            footer.extend_from_slice(&o.to_le_bytes());
        }
        footer.extend_from_slice(&(self.offsets.len() as u32).to_le_bytes());
        self.write_raw(&footer)?;
        let crc = self.crc.clone().finalize();
        self.out
            .write_all(&crc.to_le_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

pub fn write_container(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let mut w = ContainerWriter::create(path, table.schema())?;
    w.append(table)?;
    w.finish()
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Table> {
    let r = ContainerReader::open(path)?;
    r.read_all()
}

struct Layout {
    schema: Schema,
    offsets: Vec<u64>,
    /// Start of the footer.
    body_end: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return Err(Error::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_layout(bytes: &[u8]) -> Result<Layout> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    if crc32fast::hash(&bytes[..crc_at]) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let count = u32::from_le_bytes(bytes[crc_at - 4..crc_at].try_into().unwrap()) as usize;
    let footer_len = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(4))
        .filter(|&n| n <= crc_at - 4)
        .ok_or_else(|| Error::Corrupt("chunk count out of range".into()))?;
    let body_end = crc_at - footer_len;

    let mut cur = Cursor {
        bytes,
        pos: 4,
        end: body_end,
    };
    let ncols = cur.u32()? as usize;
    let mut fields = Vec::with_capacity(ncols.min(4096));
    for _ in 0..ncols {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Corrupt("column name is not UTF-8".into()))?
            .to_string();
        let dtype = DataType::from_code(cur.u8()?)
            .ok_or_else(|| Error::Corrupt(format!("unknown dtype for `{name}`")))?;
        let nullable = match cur.u8()? {
            0 => false,
            1 => true,
            _ => return Err(Error::Corrupt("bad nullable flag".into())),
        };
        fields.push(ColumnSchema::new(name, dtype, nullable));
    }
    let schema = Schema::new(fields).map_err(|e| Error::Corrupt(e.to_string()))?;
    let header_end = cur.pos;

    let mut offsets = Vec::with_capacity(count);
    let mut fc = Cursor {
        bytes,
        pos: body_end,
        end: crc_at - 4,
    };
    for _ in 0..count {
        let o = fc.u64()?;
        if (o as usize) < header_end || o as usize >= body_end {
            return Err(Error::Corrupt(format!("chunk offset {o} out of range")));
        }
        offsets.push(o);
    }
    if offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Corrupt("chunk offsets not increasing".into()));
    }
    Ok(Layout {
        schema,
        offsets,
        body_end,
    })
}

/// Read-side handle. The whole file is held in memory and verified on open.
pub struct ContainerReader {
    bytes: Vec<u8>,
    layout: Layout,
}

impl ContainerReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let layout = parse_layout(&bytes)?;
        Ok(Self { bytes, layout })
    }

    pub fn schema(&self) -> &Schema {
        &self.layout.schema
    }

    pub fn num_chunks(&self) -> usize {
        self.layout.offsets.len()
    }

    pub fn read_chunk(&self, i: usize) -> Result<Table> {
        let start = self.layout.offsets[i] as usize;
        let end = self
            .layout
            .offsets
            .get(i + 1)
            .map(|&o| o as usize)
            .unwrap_or(self.layout.body_end);
        decode_chunk(&self.bytes, start, end, &self.layout.schema)
    }

    /// All chunks in append order, decoded in parallel.
    pub fn read_chunks(&self) -> Result<Vec<Table>> {
        (0..self.num_chunks())
            .into_par_iter()
            .map(|i| self.read_chunk(i))
            .collect()
    }

    pub fn read_all(&self) -> Result<Table> {
        let chunks = self.read_chunks()?;
        if chunks.is_empty() {
            return Ok(Table::empty(self.layout.schema.clone()));
        }
        Table::concat(&self.layout.schema, &chunks)
    }
}

fn decode_chunk(bytes: &[u8], start: usize, end: usize, schema: &Schema) -> Result<Table> {
    let mut cur = Cursor {
        bytes,
        pos: start,
        end,
    };
    let rows = usize::try_from(cur.u64()?).map_err(|_| Error::Corrupt("row count".into()))?;
    if rows > end - start {
        return Err(Error::Corrupt(format!("implausible row count {rows}")));
    }
    let codec = cur.u8()?;
    if codec != CODEC_NONE {
        return Err(Error::Corrupt(format!("unsupported codec {codec}")));
    }
    let mut columns = Vec::with_capacity(schema.len());
    for field in schema.columns() {
        let validity = Bitmap::from_bytes(cur.take(rows.div_ceil(8))?.to_vec(), rows);
        if !field.nullable && !validity.all_valid() {
            return Err(Error::Corrupt(format!(
                "nulls in non-nullable column `{}`",
                field.name
            )));
        }
        let data = match field.dtype {
            DataType::Int64 => ColumnData::Int64(
                cur.take(rows * 8)?
                    .chunks_exact(8)
                    .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DataType::Float64 => ColumnData::Float64(
                cur.take(rows * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DataType::Date => ColumnData::Date(
                cur.take(rows * 4)?
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DataType::Utf8 => {
                let offsets: Vec<usize> = cur
                    .take((rows + 1) * 4)?
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                    .collect();
                if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Corrupt(format!(
                        "bad string offsets in `{}`",
                        field.name
                    )));
                }
                let data = cur.take(offsets[rows])?;
                let data = std::str::from_utf8(data)
                    .map_err(|_| Error::Corrupt(format!("invalid UTF-8 in `{}`", field.name)))?;
                if offsets.iter().any(|&o| !data.is_char_boundary(o)) {
                    return Err(Error::Corrupt(format!(
                        "string offset splits a character in `{}`",
                        field.name
                    )));
                }
                ColumnData::Utf8(StringArray::from_parts(offsets, data.to_string()))
            }
        };
        columns.push(Arc::new(Column::new(data, validity)?));
    }
    if cur.pos != end {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after chunk",
            end - cur.pos
        )));
    }
    Table::from_arcs(Arc::new(schema.clone()), columns, Some(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{table_from_rows, Value};

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::new("id", DataType::Int64, false),
            ColumnSchema::new("code", DataType::Utf8, true),
            ColumnSchema::new("day", DataType::Date, true),
            ColumnSchema::new("w", DataType::Float64, true),
        ])
        .unwrap()
    }

    fn rows(from: i64, n: i64) -> Table {
        let rows: Vec<Vec<Value>> = (from..from + n)
            .map(|i| {
                vec![
                    Value::Int(i),
                    if i % 3 == 0 { Value::Null } else { Value::str(format!("c{i}é")) },
                    if i % 4 == 0 { Value::Null } else { Value::Date(i as i32) },
                    Value::Float(i as f64 / 3.0),
                ]
            })
            .collect();
        table_from_rows(schema(), &rows).unwrap()
    }

    #[test]
    fn empty_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.cft");
        let t = Table::empty(schema());
        write_container(&t, &p).unwrap();
        let back = read_container(&p).unwrap();
        assert_eq!(back.num_rows(), 0);
        assert_eq!(back.schema(), t.schema());
    }

    #[test]
    fn header_bytes_are_exact() {
        let s = Schema::new(vec![ColumnSchema::new("ab", DataType::Date, true)]).unwrap();
        assert_eq!(
            encode_header(&s),
            [b'C', b'F', b'T', b'1', 1, 0, 0, 0, 2, 0, 0, 0, b'a', b'b', 2, 1]
        );
    }

    #[test]
    fn two_chunks_in_order_then_append_more() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cft");
        let mut w = ContainerWriter::create(&p, &schema()).unwrap();
        w.append(&rows(0, 5)).unwrap();
        w.append(&rows(5, 5)).unwrap();
        w.finish().unwrap();
        let r = ContainerReader::open(&p).unwrap();
        assert_eq!(r.num_chunks(), 2);
        assert_eq!(r.read_all().unwrap().rows(), rows(0, 10).rows());

        let mut w = ContainerWriter::open_append(&p, &schema()).unwrap();
        w.append(&rows(10, 3)).unwrap();
        w.finish().unwrap();
        assert_eq!(read_container(&p).unwrap().rows(), rows(0, 13).rows());
    }

    #[test]
    fn schema_conflict_on_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cft");
        let mut w = ContainerWriter::create(&p, &schema()).unwrap();
        let other = Schema::new(vec![ColumnSchema::new("id", DataType::Int64, false)]).unwrap();
        let t = table_from_rows(other.clone(), &[vec![Value::Int(1)]]).unwrap();
        assert!(matches!(w.append(&t), Err(Error::SchemaConflict(_))));
        w.finish().unwrap();
        assert!(matches!(
            ContainerWriter::open_append(&p, &other),
            Err(Error::SchemaConflict(_))
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cft");
        write_container(&rows(0, 20), &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut flipped = good.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(
            ContainerReader::from_bytes(flipped),
            Err(Error::Corrupt(_))
        ));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(
            ContainerReader::from_bytes(magic),
            Err(Error::Corrupt(_))
        ));
        assert!(ContainerReader::from_bytes(good[..good.len() - 3].to_vec()).is_err());
    }
}
