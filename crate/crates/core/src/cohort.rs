//! Cohorts, their set algebra, and collections loaded from a lineage
//! document.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::extract::lineage::{code_digest, Lineage, LineageEntry};
use crate::finding::Finding;
use crate::model::{read_events_csv, read_patients_csv, write_events_csv, write_patients_csv, Event, Patient, Timestamp};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Intersection,
    Union,
    Difference,
}

impl OpKind {
    fn phrase(self) -> &'static str {
        match self {
            OpKind::Intersection => "with",
            OpKind::Union => "or",
            OpKind::Difference => "without subjects with event",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Intersection => "intersection",
            OpKind::Union => "union",
            OpKind::Difference => "difference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub kind: OpKind,
    pub operand: String,
}

/// A named set of patients with their events in a time window. Immutable;
/// every operation returns a new cohort with a fresh identity.
#[derive(Debug, Clone)]
pub struct Cohort {
    id: u64,
    name: String,
    operations: Vec<Operation>,
    subjects: BTreeMap<String, Patient>,
    events: Vec<Event>,
    window: (Timestamp, Timestamp),
    findings: Vec<Finding>,
}

impl Cohort {
    /// Events whose patient is not among the subjects are rejected.
    pub fn new(
        name: impl Into<String>,
        subjects: impl IntoIterator<Item = Patient>,
        events: Vec<Event>,
        window: (Timestamp, Timestamp),
    ) -> Result<Self> {
        let name = name.into();
        if window.0 > window.1 {
            return Err(Error::Interval {
                start: window.0.to_string(),
                end: window.1.to_string(),
            });
        }
        let subjects: BTreeMap<String, Patient> =
            subjects.into_iter().map(|p| (p.patient_id.clone(), p)).collect();
        if let Some(e) = events.iter().find(|e| !subjects.contains_key(&e.patient_id)) {
            return Err(Error::Validation(format!(
                "cohort `{name}`: event patient `{}` is not a subject",
                e.patient_id
            )));
        }
        Ok(Self {
            id: next_id(),
            name,
            operations: Vec::new(),
            subjects,
            events,
            window,
            findings: Vec::new(),
        })
    }

    /// Cohort made of the given events; subjects are the patients who have
    /// at least one of them.
    pub fn from_events(
        name: impl Into<String>,
        patients: &[Patient],
        events: Vec<Event>,
        window: (Timestamp, Timestamp),
    ) -> Result<Self> {
        let ids: BTreeSet<&str> = events.iter().map(|e| e.patient_id.as_str()).collect();
        let subjects: Vec<Patient> = patients
            .iter()
            .filter(|p| ids.contains(p.patient_id.as_str()))
            .cloned()
            .collect();
        Self::new(name, subjects, events, window)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn operations(&self) -> &[Operation] {
        &self.operations
    }

    pub fn subjects(&self) -> impl Iterator<Item = &Patient> {
        self.subjects.values()
    }

    pub fn subject_ids(&self) -> BTreeSet<&str> {
        self.subjects.keys().map(String::as_str).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&Patient> {
        self.subjects.get(id)
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn window(&self) -> (Timestamp, Timestamp) {
        self.window
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    /// Label used when this cohort is the right operand of an operation.
    fn label(&self) -> String {
        if self.operations.is_empty() {
            self.name.clone()
        } else {
            format!("({})", self.chain())
        }
    }

    fn chain(&self) -> String {
        let mut s = self.name.clone();
        for op in &self.operations {
            s.push(' ');
            s.push_str(op.kind.phrase());
            s.push(' ');
            s.push_str(&op.operand);
        }
        s
    }

    /// Human-readable provenance, e.g. `Events are exposures. Events contain
    /// only subjects with event exposures with extract_patients without
    /// subjects with event fractures.`
    pub fn describe(&self) -> String {
        let mut s = if self.events.is_empty() && self.operations.is_empty() {
            format!("Subjects are {}.", self.name)
        } else {
            format!("Events are {}.", self.name)
        };
        if !self.operations.is_empty() {
            s.push_str(" Events contain only subjects with event ");
            s.push_str(&self.chain());
            s.push('.');
        }
        s
    }

    fn derive(&self, kind: OpKind, other: &Cohort, subjects: BTreeMap<String, Patient>, events: Vec<Event>, window: (Timestamp, Timestamp), findings: Vec<Finding>) -> Cohort {
        let mut operations = self.operations.clone();
        operations.push(Operation {
            kind,
            operand: other.label(),
        });
        let mut all = self.findings.clone();
        all.extend(findings);
        Cohort {
            id: next_id(),
            name: self.name.clone(),
            operations,
            subjects,
            events,
            window,
            findings: all,
        }
    }

    /// Subjects in both; keeps this cohort's events for them.
    pub fn intersection(&self, other: &Cohort) -> Cohort {
        let subjects: BTreeMap<String, Patient> = self
            .subjects
            .iter()
            .filter(|(id, _)| other.subjects.contains_key(*id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let events = self.events_of(&subjects);
        let start = self.window.0.max(other.window.0);
        let end = self.window.1.min(other.window.1);
        let mut findings = Vec::new();
        let window = if start <= end {
            (start, end)
        } else {
            findings.push(Finding::warning(
                "empty-window",
                format!("windows of `{}` and `{}` do not overlap", self.name, other.name),
            ));
            (start, start)
        };
        self.derive(OpKind::Intersection, other, subjects, events, window, findings)
    }

    /// Subjects of this cohort absent from `other`; keeps this cohort's
    /// events for them and its window.
    pub fn difference(&self, other: &Cohort) -> Cohort {
        let subjects: BTreeMap<String, Patient> = self
            .subjects
            .iter()
            .filter(|(id, _)| !other.subjects.contains_key(*id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let events = self.events_of(&subjects);
        self.derive(OpKind::Difference, other, subjects, events, self.window, Vec::new())
    }

    /// Subjects of either; both event multisets. On conflicting patient
    /// records this cohort's record wins.
    pub fn union(&self, other: &Cohort) -> Cohort {
        let mut subjects = self.subjects.clone();
        let mut findings = Vec::new();
        for (id, p) in &other.subjects {
            match subjects.get(id) {
                Some(mine) if mine != p => findings.push(Finding::warning(
                    "demographics-conflict",
                    format!("patient `{id}` differs between `{}` and `{}`; kept the left record", self.name, other.name),
                )),
                Some(_) => {}
                None => {
                    subjects.insert(id.clone(), p.clone());
                }
            }
        }
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        let window = (self.window.0.min(other.window.0), self.window.1.max(other.window.1));
        self.derive(OpKind::Union, other, subjects, events, window, findings)
    }

    fn events_of(&self, subjects: &BTreeMap<String, Patient>) -> Vec<Event> {
        self.events
            .iter()
            .filter(|e| subjects.contains_key(&e.patient_id))
            .cloned()
            .collect()
    }

    /// Writes `subjects.csv` and `events.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let subjects: Vec<Patient> = self.subjects.values().cloned().collect();
        let sp = dir.join("subjects.csv");
        let f = fs::File::create(&sp).map_err(|e| Error::io(&sp, e))?;
        write_patients_csv(std::io::BufWriter::new(f), &subjects)?;
        let ep = dir.join("events.csv");
        let f = fs::File::create(&ep).map_err(|e| Error::io(&ep, e))?;
        write_events_csv(std::io::BufWriter::new(f), &self.events)?;
        Ok(())
    }

    pub fn load(name: &str, dir: &Path, window: (Timestamp, Timestamp)) -> Result<Self> {
        let sp = dir.join("subjects.csv");
        let subjects = read_patients_csv(fs::File::open(&sp).map_err(|e| Error::io(&sp, e))?)?;
        let ep = dir.join("events.csv");
        let events = read_events_csv(fs::File::open(&ep).map_err(|e| Error::io(&ep, e))?)?;
        Self::new(name, subjects, events, window)
    }
}

/// Left fold of subject intersections: stage 0 is the first input, stage i
/// is stage i-1 intersected with input i.
#[derive(Debug, Clone)]
pub struct CohortFlow {
    stages: Vec<Cohort>,
    rationales: Vec<String>,
}

impl CohortFlow {
    pub fn new(inputs: &[&Cohort]) -> Result<Self> {
        let (first, rest) = inputs
            .split_first()
            .ok_or_else(|| Error::Validation("a flow needs at least one cohort".into()))?;
        let mut stages = vec![(*first).clone()];
        let mut rationales = Vec::new();
        for c in rest {
            let next = stages.last().expect("non-empty").intersection(c);
            rationales.push(format!("subjects with {}", c.label()));
            stages.push(next);
        }
        Ok(Self { stages, rationales })
    }

    pub fn steps(&self) -> impl Iterator<Item = &Cohort> {
        self.stages.iter()
    }

    pub fn stages(&self) -> &[Cohort] {
        &self.stages
    }

    /// `rationales()[i]` explains the transition into stage `i + 1`.
    pub fn rationales(&self) -> &[String] {
        &self.rationales
    }
}

/// Cohorts listed in a lineage document, loaded on first access.
pub struct CohortCollection {
    base: PathBuf,
    lineage: Lineage,
    window: (Timestamp, Timestamp),
    findings: Vec<Finding>,
    loaded: Mutex<HashMap<String, Arc<Cohort>>>,
}

impl CohortCollection {
    pub fn from_metadata(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let lineage = Lineage::read(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_lineage(lineage, base)
    }

    pub fn from_lineage(lineage: Lineage, base: PathBuf) -> Result<Self> {
        let mut findings = Vec::new();
        let current = code_digest();
        if !lineage.cohorts.is_empty() && lineage.code_digest != current {
            findings.push(Finding::warning(
                "code-digest-mismatch",
                format!("document was produced by code {}, this is {current}", lineage.code_digest),
            ));
        }
        for c in &lineage.cohorts {
            let dir = base.join(&c.path);
            if !dir.is_dir() {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, format!("storage of cohort `{}` is missing", c.name)),
                ));
            }
            if c.code_digest != current {
                findings.push(Finding::warning(
                    "code-digest-mismatch",
                    format!("cohort `{}` has code digest {}", c.name, c.code_digest),
                ));
            }
        }
        let parse = |s: &str| if s.is_empty() { Ok(Timestamp::from_days(0)) } else { Timestamp::parse(s) };
        let window = (parse(&lineage.study_start)?, parse(&lineage.study_end)?);
        Ok(Self {
            base,
            lineage,
            window,
            findings,
            loaded: Mutex::new(HashMap::new()),
        })
    }

    pub fn cohorts_names(&self) -> BTreeSet<String> {
        self.lineage.cohorts.iter().map(|c| c.name.clone()).collect()
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    pub fn entry(&self, name: &str) -> Option<&LineageEntry> {
        self.lineage.cohorts.iter().find(|c| c.name == name)
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    pub fn get(&self, name: &str) -> Result<Arc<Cohort>> {
        if let Some(c) = self.loaded.lock().expect("cohort cache").get(name) {
            return Ok(Arc::clone(c));
        }
        let entry = self
            .entry(name)
            .ok_or_else(|| Error::Validation(format!("no cohort named `{name}`")))?;
        let c = Cohort::load(name, &self.base.join(&entry.path), self.window)?;
        if c.events().len() as u64 != entry.count {
            return Err(Error::Integrity(format!(
                "cohort `{name}` has {} events, the lineage records {}",
                c.events().len(),
                entry.count
            )));
        }
        let c = Arc::new(c);
        self.loaded
            .lock()
            .expect("cohort cache")
            .entry(name.to_string())
            .or_insert_with(|| Arc::clone(&c));
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gender;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    fn window() -> (Timestamp, Timestamp) {
        (ts("2010-01-01"), ts("2014-12-31"))
    }

    fn patient(id: &str) -> Patient {
        Patient::new(id, Gender::Female, ts("1950-01-01").date(), None).unwrap()
    }

    fn cohort(name: &str, ids: &[&str], with_events: bool) -> Cohort {
        let events = if with_events {
            ids.iter()
                .map(|id| Event::punctual(*id, "exposure", "DrugA", 1.0, ts("2012-01-01")).unwrap())
                .collect()
        } else {
            Vec::new()
        };
        Cohort::new(name, ids.iter().map(|i| patient(i)), events, window()).unwrap()
    }

    #[test]
    fn intersection_basics() {
        let a = cohort("a", &["1", "2", "3"], true);
        let b = cohort("b", &["2", "3", "4"], false);
        let c = a.intersection(&b);
        assert_eq!(c.subject_ids(), ["2", "3"].into());
        assert_eq!(c.events().len(), 2);
        let aa = a.intersection(&a);
        assert_eq!(aa.subject_count(), 3);
        assert_eq!(aa.events().len(), 3);
        assert_ne!(aa.id(), a.id());
    }

    #[test]
    fn union_and_difference() {
        let a = cohort("a", &["1", "2"], true);
        let empty = cohort("e", &[], false);
        let u = a.union(&empty);
        assert_eq!(u.subject_ids(), a.subject_ids());
        assert!(a.difference(&a).subject_ids().is_empty());
        assert!(a.difference(&a).events().is_empty());
        let uu = a.union(&a);
        assert_eq!(uu.events().len(), 4);
        assert!(uu.describe().ends_with("with event a or a."));
    }

    #[test]
    fn event_outside_subjects_rejected() {
        let e = Event::punctual("x", "c", "v", 1.0, ts("2012-01-01")).unwrap();
        assert!(Cohort::new("a", [patient("y")], vec![e], window()).is_err());
    }

    #[test]
    fn disjoint_windows_degenerate() {
        let a = cohort("a", &["1"], false);
        let b = Cohort::new("b", [patient("1")], vec![], (ts("2016-01-01"), ts("2017-01-01"))).unwrap();
        let c = a.intersection(&b);
        assert_eq!(c.window(), (ts("2016-01-01"), ts("2016-01-01")));
        assert_eq!(c.findings().len(), 1);
    }

    #[test]
    fn describe_grammar() {
        let exposures = cohort("exposures", &["1", "2", "3"], true);
        let base = cohort("extract_patients", &["1", "2", "3", "4"], false);
        let fractures = cohort("fractures", &["3"], true);
        assert_eq!(exposures.describe(), "Events are exposures.");
        let fin = exposures.intersection(&base).difference(&fractures);
        assert_eq!(
            fin.describe(),
            "Events are exposures. Events contain only subjects with event exposures with extract_patients without subjects with event fractures."
        );
        let again = exposures.intersection(&base).difference(&fractures);
        assert_eq!(fin.describe(), again.describe());
        assert_eq!(base.describe(), "Subjects are extract_patients.");
    }

    #[test]
    fn flow_stages() {
        let a = cohort("base", &["1", "2", "3", "4"], false);
        let b = cohort("exposed", &["2", "3", "4", "5"], true);
        let c = cohort("final", &["3", "4"], true);
        let f = CohortFlow::new(&[&a, &b, &c]).unwrap();
        let counts: Vec<usize> = f.steps().map(Cohort::subject_count).collect();
        assert_eq!(counts, [4, 3, 2]);
        assert_eq!(f.rationales().len(), 2);
        let one = CohortFlow::new(&[&a]).unwrap();
        assert_eq!(one.stages().len(), 1);
        assert!(CohortFlow::new(&[]).is_err());
    }

    #[test]
    fn save_load_collection() {
        let dir = tempfile::tempdir().unwrap();
        let a = cohort("exposures", &["1", "2"], true);
        a.save(&dir.path().join("cohorts/exposures")).unwrap();
        let mut l = Lineage::new("2010-01-01".into(), "2014-12-31".into());
        l.push(LineageEntry {
            name: "exposures".into(),
            path: "cohorts/exposures".into(),
            category: "exposure".into(),
            sources: vec![],
            count: 2,
            subjects: 2,
            config_digest: String::new(),
            code_digest: code_digest(),
            operations: vec![],
        })
        .unwrap();
        let meta = dir.path().join("lineage.meta");
        l.write(&meta).unwrap();
        let cc = CohortCollection::from_metadata(&meta).unwrap();
        assert!(cc.findings().is_empty());
        assert_eq!(cc.cohorts_names(), ["exposures".to_string()].into());
        let got = cc.get("exposures").unwrap();
        assert_eq!(got.events(), a.events());
        assert!(Arc::ptr_eq(&got, &cc.get("exposures").unwrap()));

        l.cohorts[0].code_digest = "tampered".into();
        l.write(&meta).unwrap();
        let cc = CohortCollection::from_metadata(&meta).unwrap();
        assert_eq!(cc.findings().len(), 1);

        l.cohorts[0].path = "cohorts/missing".into();
        l.write(&meta).unwrap();
        assert!(CohortCollection::from_metadata(&meta).is_err());

        fs::write(&meta, "").unwrap();
        assert!(CohortCollection::from_metadata(&meta).unwrap().cohorts_names().is_empty());
    }
}
