use std::fs;

use anyhow::{Context, Result};

use cohortforge_core::cohort::CohortCollection;
use cohortforge_core::config::{ExtractConfig, FlattenConfig};
use cohortforge_core::features::{build_count_matrix, build_event_tensor, FeatureMapping, InvalidPolicy, Rasterization};
use cohortforge_core::pipeline::{run_extract, run_flatten, write_report_section, REPORT_FILE};
use cohortforge_core::stats::{flowchart_from_metadata, StatParams, StatsRegistry, BUILTIN_STATS};
use cohortforge_core::{Error, Timestamp};
use cohortforge_synth::{generate, SynthConfig};

use crate::manifest::Manifest;
use crate::{Command, ExportArgs, Preset, StatsArgs, SynthArgs};

pub const FLOWCHART_FILE: &str = "flowchart.tsv";

pub fn run(cmd: &Command, m: &mut Manifest) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, m),
        Command::Flatten(a) => {
            m.config = Some(a.config.clone());
            let plan = FlattenConfig::load(&a.config)?;
            for t in std::iter::once(plan.config.central.clone()).chain(plan.dimension_names()) {
                m.inputs.push(plan.csv_path(&t)?);
            }
            let r = run_flatten(&plan, &a.out)?;
            m.timings(&r.timings.0);
            m.outputs.extend(r.outputs);
            log::info!("flattened {} central rows into {}", r.report.central_row_count, r.report.flat_row_count);
            for f in &r.findings {
                eprintln!("{f}");
            }
            Ok(())
        }
        Command::Extract(a) => {
            m.config = Some(a.config.clone());
            let cfg = ExtractConfig::load(&a.config)?;
            m.inputs.push(cfg.input.clone().unwrap_or_else(|| a.out.join(cohortforge_core::pipeline::FLAT_FILE)));
            let r = run_extract(&cfg, &a.out)?;
            m.timings(&r.timings.0);
            m.outputs.extend(r.outputs);
            log::info!("extracted {} cohorts", r.lineage.cohorts.len());
            Ok(())
        }
        Command::Cohort(a) => {
            m.config = Some(a.config.clone());
            crate::script::run_file(&a.config, &a.out, m)
        }
        Command::Stats(a) => stats(a, m),
        Command::Export(a) => export(a, m),
    }
}

fn synth(a: &SynthArgs, m: &mut Manifest) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            m.config = Some(p.clone());
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => match a.preset {
            Preset::Mixed => SynthConfig::default(),
            Preset::Dcir => SynthConfig::dcir_like(),
            Preset::Pmsi => SynthConfig::pmsi_like(),
        },
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.patients {
        cfg.n_patients = n;
    }
    let t = std::time::Instant::now();
    let corpus = generate(&cfg)?;
    m.timings.push(("generate".into(), t.elapsed()));
    let t = std::time::Instant::now();
    m.outputs.extend(corpus.write(&a.out)?);
    m.timings.push(("write".into(), t.elapsed()));
    Ok(())
}

fn stats(a: &StatsArgs, m: &mut Manifest) -> Result<()> {
    m.inputs.push(a.metadata.clone());
    let coll = CohortCollection::from_metadata(&a.metadata)?;
    let names: Vec<String> = if a.cohort.is_empty() {
        coll.cohorts_names().into_iter().collect()
    } else {
        a.cohort.clone()
    };
    let stats: Vec<String> = if a.stat.is_empty() {
        BUILTIN_STATS.iter().map(|s| s.to_string()).collect()
    } else {
        a.stat.clone()
    };
    let reference_date = a.reference_date.as_deref().map(Timestamp::parse).transpose()?;
    let reg = StatsRegistry::with_builtins(StatParams {
        reference_date,
        bucket_years: a.bucket_years,
    });
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut summary = String::new();
    let t = std::time::Instant::now();
    for name in &names {
        let c = coll.get(name)?;
        for s in &stats {
            let r = reg.compute(s, &c)?;
            let p = a.out.join(format!("{name}.{s}.csv"));
            let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            r.write_csv(std::io::BufWriter::new(f))?;
            summary.push_str(&r.summary());
            summary.push('\n');
            m.outputs.push(p);
        }
    }
    m.timings.push(("stats".into(), t.elapsed()));
    for f in coll.findings() {
        summary.push_str(&format!("{f}\n"));
    }
    if !coll.lineage().attrition.is_empty() {
        let p = a.out.join(FLOWCHART_FILE);
        fs::write(&p, flowchart_from_metadata(coll.lineage())?.to_text()).map_err(|e| Error::io(&p, e))?;
        m.outputs.push(p);
    }
    let report = a.out.join(REPORT_FILE);
    write_report_section(&report, "stats", &summary)?;
    m.outputs.push(report);
    Ok(())
}

fn export(a: &ExportArgs, m: &mut Manifest) -> Result<()> {
    m.inputs.push(a.metadata.clone());
    let coll = CohortCollection::from_metadata(&a.metadata)?;
    let policy = if a.drop_invalid { InvalidPolicy::Drop } else { InvalidPolicy::Fail };
    let raster = if a.duration_weighted {
        Rasterization::DurationWeighted
    } else {
        Rasterization::Indicator
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut body = String::new();
    let t = std::time::Instant::now();
    for name in &a.cohort {
        let c = coll.get(name)?;
        let map = FeatureMapping::from_cohort(&c, a.bucket_days)?;
        let counts = build_count_matrix(&c, &map, policy).with_context(|| format!("cohort `{name}`"))?;
        let events = build_event_tensor(&c, &map, policy, raster).with_context(|| format!("cohort `{name}`"))?;
        let write = |suffix: &str, bytes: &[u8], m: &mut Manifest| -> Result<()> {
            let p = a.out.join(format!("{name}.{suffix}"));
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            m.outputs.push(p);
            Ok(())
        };
        write("count.sclt", &counts.tensor.to_bytes(), m)?;
        write("events.sclt", &events.tensor.to_bytes(), m)?;
        write("index.txt", events.sidecar(&map).as_bytes(), m)?;
        body.push_str(&format!(
            "{name}\tshape={:?}\tdropped={}\ttotal={}\n",
            events.tensor.shape,
            events.dropped,
            counts.tensor.sum()
        ));
        for f in &events.findings {
            body.push_str(&format!("{f}\n"));
        }
    }
    m.timings.push(("export".into(), t.elapsed()));
    let report = a.out.join(REPORT_FILE);
    write_report_section(&report, "export", &body)?;
    m.outputs.push(report);
    Ok(())
}
