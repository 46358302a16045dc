//! Cohort algebra scripts: one statement per line, `#` starts a comment.
//!
//! ```text
//! metadata out/lineage.meta
//! load exposures
//! load extract_patients as base
//! load fractures
//! final = exposures intersect base
//! final = final difference fractures
//! flow base exposures
//! save final
//! ```
//!
//! `save` writes `cohorts/<alias>/` under the output directory, `flow`
//! writes `flowchart.tsv`, and every `save` or `describe` adds a line to the
//! `cohort` section of `report.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Result;

use cohortforge_core::cohort::{Cohort, CohortCollection, CohortFlow};
use cohortforge_core::pipeline::{write_report_section, COHORTS_DIR, REPORT_FILE};
use cohortforge_core::stats::flowchart_from_flow;
use cohortforge_core::Error;

use crate::commands::FLOWCHART_FILE;
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Metadata(String),
    Load { name: String, alias: String },
    Op { target: String, left: String, op: Op, right: String },
    Flow(Vec<String>),
    Save(String),
    Describe(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Intersect,
    Union,
    Difference,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("script line {line}: {msg}"))
}

pub fn parse(text: &str) -> std::result::Result<Vec<(usize, Stmt)>, Error> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let w: Vec<&str> = line.split_whitespace().collect();
        let stmt = match w[..] {
            ["metadata", p] => Stmt::Metadata(p.into()),
            ["load", name] => Stmt::Load {
                name: name.into(),
                alias: name.into(),
            },
            ["load", name, "as", alias] => Stmt::Load {
                name: name.into(),
                alias: alias.into(),
            },
            [target, "=", left, op, right] => {
                let op = match op {
                    "intersect" | "intersection" => Op::Intersect,
                    "union" => Op::Union,
                    "difference" | "minus" => Op::Difference,
                    other => return Err(bad(n, format!("unknown operation `{other}`"))),
                };
                Stmt::Op {
                    target: target.into(),
                    left: left.into(),
                    op,
                    right: right.into(),
                }
            }
            ["flow", ..] if w.len() >= 2 => Stmt::Flow(w[1..].iter().map(|s| s.to_string()).collect()),
            ["save", a] => Stmt::Save(a.into()),
            ["describe", a] => Stmt::Describe(a.into()),
            _ => return Err(bad(n, format!("cannot parse `{line}`"))),
        };
        out.push((n, stmt));
    }
    Ok(out)
}

/// Executes a parsed script. Relative metadata paths resolve against `base`.
pub fn execute(stmts: &[(usize, Stmt)], base: &Path, out: &Path, m: &mut Manifest) -> Result<()> {
    let mut coll: Option<CohortCollection> = None;
    let mut vars: BTreeMap<String, Cohort> = BTreeMap::new();
    let mut report = String::new();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let get = |vars: &BTreeMap<String, Cohort>, n: usize, a: &str| -> std::result::Result<Cohort, Error> {
        vars.get(a).cloned().ok_or_else(|| bad(n, format!("`{a}` is not defined")))
    };
    let line = |alias: &str, c: &Cohort| format!("{alias}\t{}\t{}\t{}\n", c.subject_count(), c.events().len(), c.describe());

    for (n, s) in stmts {
        let n = *n;
        match s {
            Stmt::Metadata(p) => {
                let p = base.join(p);
                m.inputs.push(p.clone());
                let c = CohortCollection::from_metadata(&p)?;
                for f in c.findings() {
                    eprintln!("{f}");
                }
                coll = Some(c);
            }
            Stmt::Load { name, alias } => {
                let c = coll.as_ref().ok_or_else(|| bad(n, "`load` before `metadata`"))?;
                vars.insert(alias.clone(), (*c.get(name)?).clone());
            }
            Stmt::Op { target, left, op, right } => {
                let (l, r) = (get(&vars, n, left)?, get(&vars, n, right)?);
                let c = match op {
                    Op::Intersect => l.intersection(&r),
                    Op::Union => l.union(&r),
                    Op::Difference => l.difference(&r),
                };
                for f in c.findings().iter().skip(l.findings().len()) {
                    eprintln!("{f}");
                }
                vars.insert(target.clone(), c);
            }
            Stmt::Flow(names) => {
                let cs = names.iter().map(|a| get(&vars, n, a)).collect::<std::result::Result<Vec<_>, _>>()?;
                let refs: Vec<&Cohort> = cs.iter().collect();
                let flow = CohortFlow::new(&refs)?;
                let p = out.join(FLOWCHART_FILE);
                fs::write(&p, flowchart_from_flow(&flow).to_text()).map_err(|e| Error::io(&p, e))?;
                m.outputs.push(p);
            }
            Stmt::Save(a) => {
                let c = get(&vars, n, a)?;
                let dir = out.join(COHORTS_DIR).join(a);
                c.save(&dir)?;
                m.outputs.push(dir);
                report.push_str(&line(a, &c));
            }
            Stmt::Describe(a) => report.push_str(&line(a, &get(&vars, n, a)?)),
        }
    }
    let p = out.join(REPORT_FILE);
    write_report_section(&p, "cohort", &report)?;
    m.outputs.push(p);
    Ok(())
}

pub fn run_file(path: &Path, out: &Path, m: &mut Manifest) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stmts = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let t = std::time::Instant::now();
    execute(&stmts, base, out, m)?;
    m.timings.push(("script".into(), t.elapsed()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_statements() {
        let s = parse("metadata x.meta # lineage\n\nload a as b\nc = b minus a\nflow a b\nsave c\n").unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s[1].1, Stmt::Load { name: "a".into(), alias: "b".into() });
        assert_eq!(
            s[2].1,
            Stmt::Op {
                target: "c".into(),
                left: "b".into(),
                op: Op::Difference,
                right: "a".into()
            }
        );
        assert_eq!(s[4], (6, Stmt::Save("c".into())));
    }

    #[test]
    fn rejects_garbage() {
        let e = parse("load\n").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        assert!(parse("x = a xor b").is_err());
    }
}
