//! TOML configuration for the schema declaration, flattening and
//! extraction. Relative paths resolve against the directory of the file
//! that mentions them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::transform::{ExposureSpec, FollowUpSpec, OutcomeSite, TracklossSpec};
use crate::extract::{ExtractorSpec, PatientColumns};
use crate::flatten::{ColumnPrefix, DimensionJoin, JoinSpec, SlicingSpec, DEFAULT_SPARSITY_THRESHOLD};
use crate::table::{ColumnSchema, Schema, TimeUnit};

pub const MEDICAL_TAG: &str = "medical";

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDecl {
    pub name: String,
    /// CSV file, relative to the input directory.
    pub file: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// `(column in the accumulated table, column in this table)` pairs used
    /// when this table is joined as a dimension.
    #[serde(default)]
    pub keys: Vec<(String, String)>,
    pub columns: Vec<ColumnSchema>,
}

impl TableDecl {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.columns.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub tables: Vec<TableDecl>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let s: SchemaFile = read_toml(path)?;
        let mut seen = BTreeSet::new();
        for t in &s.tables {
            if !seen.insert(&t.name) {
                return Err(Error::Config(format!("table `{}` declared twice", t.name)));
            }
            t.schema()?;
        }
        Ok(s)
    }

    pub fn table(&self, name: &str) -> Result<&TableDecl> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("table `{name}` is not declared in the schema file")))
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_threshold() -> f64 {
    DEFAULT_SPARSITY_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenConfig {
    pub input_dir: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub central: String,
    #[serde(default)]
    pub slice_column: Option<String>,
    #[serde(default)]
    pub slice_unit: TimeUnit,
    #[serde(default)]
    pub column_prefix: ColumnPrefix,
    #[serde(default = "default_threshold")]
    pub sparsity_threshold: f64,
    /// Treat warnings as integrity failures.
    #[serde(default)]
    pub strict: bool,
    /// Dimension tables in join order; defaults to every table tagged
    /// `medical` in schema-file order.
    #[serde(default)]
    pub dimensions: Option<Vec<String>>,
}

/// A flattening config with its paths resolved and schema loaded.
#[derive(Debug, Clone)]
pub struct FlattenPlan {
    pub config: FlattenConfig,
    pub input_dir: PathBuf,
    pub schema: SchemaFile,
}

impl FlattenConfig {
    pub fn load(path: &Path) -> Result<FlattenPlan> {
        let config: FlattenConfig = read_toml(path)?;
        let base = parent(path);
        let schema = SchemaFile::load(&resolve(&base, &config.schema))?;
        let input_dir = resolve(&base, &config.input_dir);
        let plan = FlattenPlan {
            config,
            input_dir,
            schema,
        };
        plan.join_spec()?;
        Ok(plan)
    }
}

impl FlattenPlan {
    pub fn delimiter(&self) -> Result<u8> {
        u8::try_from(self.config.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("delimiter `{}` is not a single ASCII byte", self.config.delimiter)))
    }

    pub fn dimension_names(&self) -> Vec<String> {
        match &self.config.dimensions {
            Some(d) => d.clone(),
            None => self
                .schema
                .tables
                .iter()
                .filter(|t| t.name != self.config.central && t.tags.iter().any(|g| g == MEDICAL_TAG))
                .map(|t| t.name.clone())
                .collect(),
        }
    }

    pub fn join_spec(&self) -> Result<JoinSpec> {
        self.schema.table(&self.config.central)?;
        let mut dimensions = Vec::new();
        for name in self.dimension_names() {
            let t = self.schema.table(&name)?;
            if t.keys.is_empty() {
                return Err(Error::Config(format!("table `{name}` declares no join keys")));
            }
            dimensions.push(DimensionJoin {
                table: name,
                keys: t.keys.clone(),
            });
        }
        Ok(JoinSpec {
            central: self.config.central.clone(),
            dimensions,
        })
    }

    pub fn slicing(&self) -> Result<SlicingSpec> {
        match (self.config.slice_unit, &self.config.slice_column) {
            (TimeUnit::None, _) => Ok(SlicingSpec::none()),
            (unit, Some(c)) => Ok(SlicingSpec::by(c.clone(), unit)),
            (_, None) => Err(Error::Config("slice_unit needs slice_column".into())),
        }
    }

    pub fn csv_path(&self, table: &str) -> Result<PathBuf> {
        Ok(self.input_dir.join(&self.schema.table(table)?.file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEntry {
    /// Cohort the events go to; several extractors may share one.
    pub cohort: String,
    #[serde(flatten)]
    pub spec: ExtractorSpec,
    /// Per value filter column, a CSV whose first column lists allowed
    /// codes; merged into the filter's allow-set.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub allow_files: BTreeMap<String, PathBuf>,
}

fn default_drugs() -> String {
    "drug_purchases".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracklossEntry {
    #[serde(default = "default_drugs")]
    pub input: String,
    #[serde(flatten)]
    pub spec: TracklossSpec,
}

impl Default for TracklossEntry {
    fn default() -> Self {
        Self {
            input: default_drugs(),
            spec: TracklossSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEntry {
    #[serde(default = "default_drugs")]
    pub input: String,
    #[serde(flatten)]
    pub spec: ExposureSpec,
}

impl Default for ExposureEntry {
    fn default() -> Self {
        Self {
            input: default_drugs(),
            spec: ExposureSpec::default(),
        }
    }
}

fn default_outcome_name() -> String {
    "fractures".into()
}

fn default_acts() -> String {
    "acts".into()
}

fn default_diagnoses() -> String {
    "diagnoses".into()
}

fn default_main_category() -> String {
    "diagnosis_main".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    #[serde(default = "default_outcome_name")]
    pub name: String,
    #[serde(default = "default_acts")]
    pub acts: String,
    #[serde(default = "default_diagnoses")]
    pub diagnoses: String,
    #[serde(default = "default_main_category")]
    pub diagnosis_category: String,
    #[serde(default)]
    pub sites: Vec<OutcomeSite>,
    /// CSV with `site,kind,code` rows (`kind` is `act` or `diagnosis`),
    /// merged into `sites`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalentEntry {
    pub cutoff: String,
    #[serde(default = "default_drugs")]
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Flat container; defaults to `flat.cft` in the output directory.
    #[serde(default)]
    pub input: Option<PathBuf>,
    pub study_start: String,
    pub study_end: String,
    #[serde(default)]
    pub patients: PatientColumns,
    pub extractors: Vec<ExtractorEntry>,
    #[serde(default)]
    pub trackloss: TracklossEntry,
    #[serde(default)]
    pub follow_up: FollowUpSpec,
    #[serde(default)]
    pub exposure: ExposureEntry,
    #[serde(default)]
    pub outcome: Option<OutcomeEntry>,
    #[serde(default)]
    pub prevalent: Option<PrevalentEntry>,
}

impl ExtractConfig {
    /// Parses the file and folds referenced code lists into the specs.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExtractConfig = read_toml(path)?;
        let base = parent(path);
        cfg.input = cfg.input.map(|p| resolve(&base, &p));
        cfg.resolve_code_lists(&base)?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExtractConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.input = cfg.input.map(|p| resolve(base, &p));
        cfg.resolve_code_lists(base)?;
        Ok(cfg)
    }

    fn resolve_code_lists(&mut self, base: &Path) -> Result<()> {
        let mut names = BTreeSet::new();
        for e in &mut self.extractors {
            if !names.insert(e.spec.name.clone()) {
                return Err(Error::Config(format!("extractor `{}` declared twice", e.spec.name)));
            }
            if e.spec.null_filter.is_empty() {
                let c = &e.spec.columns;
                e.spec.null_filter = vec![c.patient_id.clone(), c.value.clone(), c.start.clone()];
            }
            for (column, file) in std::mem::take(&mut e.allow_files) {
                let codes = read_code_column(&resolve(base, &file))?;
                let filter = e
                    .spec
                    .value_filters
                    .iter_mut()
                    .find(|f| f.column == column)
                    .ok_or_else(|| Error::Config(format!("allow file for `{column}` without a matching value filter")))?;
                filter.allow.extend(codes);
            }
            e.spec.validate()?;
        }
        if let Some(o) = &mut self.outcome {
            if let Some(file) = o.codes_file.take() {
                merge_outcome_codes(&mut o.sites, &resolve(base, &file))?;
            }
        }
        Ok(())
    }

    /// Cohort names in first-declaration order.
    pub fn extractor_cohorts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.extractors {
            if !out.contains(&e.cohort) {
                out.push(e.cohort.clone());
            }
        }
        out
    }
}

fn read_code_column(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if let Some(c) = rec.get(0).map(str::trim).filter(|c| !c.is_empty()) {
            out.push(c.to_string());
        }
    }
    Ok(out)
}

fn merge_outcome_codes(sites: &mut Vec<OutcomeSite>, path: &Path) -> Result<()> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    for rec in r.records() {
        let rec = rec?;
        let (Some(site), Some(kind), Some(code)) = (rec.get(0), rec.get(1), rec.get(2)) else {
            return Err(Error::Config(format!("{}: expected site,kind,code", path.display())));
        };
        let idx = match sites.iter().position(|s| s.label == site) {
            Some(i) => i,
            None => {
                sites.push(OutcomeSite {
                    label: site.to_string(),
                    act_codes: BTreeSet::new(),
                    diagnosis_codes: BTreeSet::new(),
                });
                sites.len() - 1
            }
        };
        match kind {
            "act" => sites[idx].act_codes.insert(code.to_string()),
            "diagnosis" => sites[idx].diagnosis_codes.insert(code.to_string()),
            other => return Err(Error::Config(format!("{}: unknown code kind `{other}`", path.display()))),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("drugs.csv"), "code\nA\nB\n").unwrap();
        fs::write(dir.path().join("sites.csv"), "site,kind,code\nhip,act,X1\nhip,diagnosis,S72\n").unwrap();
        let text = r#"
study_start = "2010-01-01"
study_end = "2014-12-31"

[[extractors]]
cohort = "drug_purchases"
name = "drug_purchases"
category = "drug_purchase"
columns = { patient_id = "patient_id", value = "drug_code", start = "claim_date" }
value_filters = [{ column = "drug_code", allow = ["C"] }]
allow_files = { drug_code = "drugs.csv" }

[exposure]
purchase_duration = 60

[outcome]
codes_file = "sites.csv"
"#;
        let cfg = ExtractConfig::parse(text, dir.path()).unwrap();
        let e = &cfg.extractors[0];
        assert_eq!(e.spec.value_filters[0].allow, ["C", "A", "B"]);
        assert_eq!(e.spec.null_filter, ["patient_id", "drug_code", "claim_date"]);
        assert_eq!(cfg.exposure.spec.purchase_duration, 60);
        assert_eq!(cfg.exposure.spec.gap_tolerance, 30);
        assert_eq!(cfg.exposure.input, "drug_purchases");
        assert_eq!(cfg.trackloss.spec.gap_months, 4);
        let o = cfg.outcome.unwrap();
        assert_eq!(o.name, "fractures");
        assert!(o.sites[0].act_codes.contains("X1"));
    }

    #[test]
    fn flatten_config_defaults_to_medical_tables() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("schema.toml"),
            r#"
[[tables]]
name = "claims"
file = "claims.csv"
columns = [{ name = "claim_id", dtype = "int64", nullable = false }]

[[tables]]
name = "drugs"
file = "drugs.csv"
tags = ["medical"]
keys = [["claim_id", "claim_id"]]
columns = [{ name = "claim_id", dtype = "int64" }, { name = "drug_code", dtype = "string" }]

[[tables]]
name = "billing"
file = "billing.csv"
tags = ["administrative"]
keys = [["claim_id", "claim_id"]]
columns = [{ name = "claim_id", dtype = "int64" }]
"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("flatten.toml"),
            "input_dir = \".\"\nschema = \"schema.toml\"\ncentral = \"claims\"\n",
        )
        .unwrap();
        let plan = FlattenConfig::load(&dir.path().join("flatten.toml")).unwrap();
        assert_eq!(plan.dimension_names(), ["drugs"]);
        assert_eq!(plan.config.sparsity_threshold, 10.0);
        assert_eq!(plan.slicing().unwrap(), SlicingSpec::none());
        assert!(FlattenConfig::load(&dir.path().join("missing.toml")).is_err());
    }
}
