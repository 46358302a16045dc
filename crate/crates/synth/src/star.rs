//! Small random star schemas for join-level checks.
//!
//! The central table has a date column for slicing and two nullable key
//! columns; each dimension joins on one or both keys, with duplicate,
//! unmatched and null keys and occasionally a payload column whose name
//! collides with the central table.

use std::collections::BTreeMap;

use cohortforge_core::flatten::{DimensionJoin, JoinSpec};
use cohortforge_core::table::{table_from_rows, ColumnSchema, DataType, Schema, Table, Value};
use cohortforge_core::Result;

use crate::rng::Rng;

pub const DATE_COLUMN: &str = "day";

#[derive(Debug, Clone)]
pub struct RandomStar {
    pub central: Table,
    pub dims: BTreeMap<String, Table>,
    pub join: JoinSpec,
}

fn maybe(r: &mut Rng, null_permille: u32, v: Value) -> Value {
    if r.chance(null_permille) {
        Value::Null
    } else {
        v
    }
}

pub fn random_star(seed: u64) -> Result<RandomStar> {
    let mut r = Rng::stream(seed, 0x57A2);
    let domain = r.range(1, 12);
    let n_central = r.range(0, 150) as usize;
    let central_schema = Schema::new(vec![
        ColumnSchema::new("cid", DataType::Int64, false),
        ColumnSchema::new("ka", DataType::Utf8, true),
        ColumnSchema::new("kb", DataType::Int64, true),
        ColumnSchema::new(DATE_COLUMN, DataType::Date, true),
        ColumnSchema::new("val", DataType::Float64, true),
    ])?;
    let mut rows = Vec::with_capacity(n_central);
    for i in 0..n_central {
        let ka = Value::str(format!("a{}", r.range(0, domain)));
        let kb = Value::Int(r.range(0, domain));
        // about three years of days starting 2012-01-01
        let day = Value::Date(15340 + r.range(0, 1100) as i32);
        let val = Value::Float(r.range(-50, 50) as f64 / 4.0);
        rows.push(vec![
            Value::Int(i as i64),
            maybe(&mut r, 100, ka),
            maybe(&mut r, 100, kb),
            maybe(&mut r, 80, day),
            maybe(&mut r, 200, val),
        ]);
    }
    let central = table_from_rows(central_schema, &rows)?;

    let mut dims = BTreeMap::new();
    let mut joins = Vec::new();
    for d in 0..r.range(1, 3) {
        let name = format!("dim{d}");
        let (use_a, use_b) = match r.below(3) {
            0 => (true, false),
            1 => (false, true),
            _ => (true, true),
        };
        let mut cols = Vec::new();
        let mut keys = Vec::new();
        if use_a {
            cols.push(ColumnSchema::new("a_key", DataType::Utf8, true));
            keys.push(("ka".to_string(), "a_key".to_string()));
        }
        if use_b {
            cols.push(ColumnSchema::new("b_key", DataType::Int64, true));
            keys.push(("kb".to_string(), "b_key".to_string()));
        }
        cols.push(ColumnSchema::new(format!("p{d}"), DataType::Utf8, true));
        let collide = r.chance(300);
        if collide {
            cols.push(ColumnSchema::new("val", DataType::Int64, true));
        }
        let mut drows = Vec::new();
        for j in 0..r.range(0, 3 * domain) {
            let mut row = Vec::new();
            if use_a {
                let v = Value::str(format!("a{}", r.range(0, domain + 2)));
                row.push(maybe(&mut r, 50, v));
            }
            if use_b {
                let v = Value::Int(r.range(0, domain + 2));
                row.push(maybe(&mut r, 50, v));
            }
            row.push(maybe(&mut r, 100, Value::str(format!("{name}-{j}"))));
            if collide {
                row.push(Value::Int(j));
            }
            drows.push(row);
        }
        dims.insert(name.clone(), table_from_rows(Schema::new(cols)?, &drows)?);
        joins.push(DimensionJoin { table: name, keys });
    }
    Ok(RandomStar {
        central,
        dims,
        join: JoinSpec {
            central: "central".into(),
            dimensions: joins,
        },
    })
}

/// Σ over central rows of Π over dimensions of max(1, matching rows),
/// counted by scanning every dimension row for every central row.
pub fn expected_flat_rows(star: &RandomStar) -> u64 {
    let cs = star.central.schema();
    let mut total = 0u64;
    for row in star.central.rows() {
        let mut product = 1u64;
        for j in &star.join.dimensions {
            let dim = &star.dims[&j.table];
            let ds = dim.schema();
            let mut matches = 0u64;
            for drow in dim.rows() {
                let all = j.keys.iter().all(|(l, r)| {
                    let lv = &row[cs.index_of(l).expect("central key")];
                    let rv = &drow[ds.index_of(r).expect("dimension key")];
                    !matches!(lv, Value::Null) && lv == rv
                });
                matches += all as u64;
            }
            product *= matches.max(1);
        }
        total += product;
    }
    total
}
