//! Per-patient transformers deriving events from extracted events.
//!
//! All functions are pure, group their input by patient (and drug where it
//! matters) and return events in canonical order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sort_canonical, Event, Patient, Timestamp};

pub const OBSERVATION_PERIOD: &str = "observation_period";
pub const TRACKLOSS: &str = "trackloss";
pub const FOLLOW_UP: &str = "follow_up";
pub const EXPOSURE: &str = "exposure";
pub const OUTCOME: &str = "outcome";

fn by_patient<'a>(events: impl IntoIterator<Item = &'a Event>) -> BTreeMap<&'a str, Vec<&'a Event>> {
    let mut m: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in events {
        m.entry(e.patient_id.as_str()).or_default().push(e);
    }
    m
}

fn finish(mut events: Vec<Event>) -> Vec<Event> {
    sort_canonical(&mut events);
    events
}

/// `[max(study_start, first event), study_end]` per patient with at least
/// one event. Patients whose first event is after `study_end` get none.
pub fn observation_period(events: &[Event], study_start: Timestamp, study_end: Timestamp) -> Result<Vec<Event>> {
    if study_start > study_end {
        return Err(Error::Config(format!(
            "study start {study_start} is after study end {study_end}"
        )));
    }
    let mut first: BTreeMap<&str, Timestamp> = BTreeMap::new();
    for e in events {
        first
            .entry(&e.patient_id)
            .and_modify(|t| *t = (*t).min(e.start))
            .or_insert(e.start);
    }
    let mut out = Vec::with_capacity(first.len());
    for (pid, t) in first {
        let start = t.max(study_start);
        if start <= study_end {
            out.push(Event::continuous(pid, OBSERVATION_PERIOD, OBSERVATION_PERIOD, 1.0, start, study_end)?);
        }
    }
    Ok(finish(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracklossSpec {
    pub gap_months: u32,
    /// Days a single dispense covers.
    pub purchase_duration: u32,
}

impl Default for TracklossSpec {
    fn default() -> Self {
        Self {
            gap_months: 4,
            purchase_duration: 30,
        }
    }
}

/// Running coverage `cover_end = max(dispense + duration)`; the first time
/// the next dispense (or `study_end` after the last one) falls strictly
/// after `cover_end + gap_months`, a trackloss is emitted at `cover_end`.
pub fn trackloss(dispenses: &[Event], study_end: Timestamp, spec: TracklossSpec) -> Result<Vec<Event>> {
    if spec.gap_months == 0 {
        return Err(Error::Config("trackloss gap must be at least one month".into()));
    }
    let duration = spec.purchase_duration as i64;
    let groups: Vec<(&str, Vec<&Event>)> = by_patient(dispenses).into_iter().collect();
    let hits: Vec<(&str, Timestamp)> = groups
        .into_par_iter()
        .filter_map(|(pid, evs)| {
            let mut dates: Vec<Timestamp> = evs.iter().map(|e| e.start).collect();
            dates.sort();
            let mut cover_end = dates[0].add_days(duration);
            for &d in &dates[1..] {
                if d > cover_end.add_months(spec.gap_months) {
                    return Some((pid, cover_end));
                }
                cover_end = cover_end.max(d.add_days(duration));
            }
            (study_end > cover_end.add_months(spec.gap_months)).then_some((pid, cover_end))
        })
        .collect();
    let out = hits
        .into_iter()
        .map(|(pid, t)| Event::punctual(pid, TRACKLOSS, TRACKLOSS, 1.0, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(out))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowUpSpec {
    pub delay_days: u32,
}

/// `[obs.start + delay, min(obs.end, death, earliest trackloss)]`, emitted
/// only when non-empty.
pub fn follow_up(
    patients: &[Patient],
    observations: &[Event],
    tracklosses: &[Event],
    spec: FollowUpSpec,
) -> Result<Vec<Event>> {
    let deaths: HashMap<&str, Timestamp> = patients
        .iter()
        .filter_map(|p| p.death().map(|d| (p.patient_id.as_str(), d)))
        .collect();
    let mut lost: HashMap<&str, Timestamp> = HashMap::new();
    for t in tracklosses {
        lost.entry(&t.patient_id)
            .and_modify(|x| *x = (*x).min(t.start))
            .or_insert(t.start);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for obs in observations {
        if !seen.insert(obs.patient_id.as_str()) {
            return Err(Error::Validation(format!(
                "patient `{}` has more than one observation period",
                obs.patient_id
            )));
        }
        let start = obs.start.add_days(spec.delay_days as i64);
        let mut end = obs.end_or_start();
        for t in [deaths.get(obs.patient_id.as_str()), lost.get(obs.patient_id.as_str())]
            .into_iter()
            .flatten()
        {
            end = end.min(*t);
        }
        if start <= end {
            out.push(Event::continuous(&obs.patient_id, FOLLOW_UP, FOLLOW_UP, 1.0, start, end)?);
        }
    }
    Ok(finish(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureStrategy {
    #[default]
    Limited,
    Unlimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposureSpec {
    pub purchase_duration: u32,
    pub gap_tolerance: u32,
    pub strategy: ExposureStrategy,
    pub min_purchases: u32,
}

impl Default for ExposureSpec {
    fn default() -> Self {
        Self {
            purchase_duration: 30,
            gap_tolerance: 30,
            strategy: ExposureStrategy::Limited,
            min_purchases: 1,
        }
    }
}

impl ExposureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.purchase_duration == 0 {
            return Err(Error::Config("purchase duration must be positive".into()));
        }
        if self.min_purchases == 0 {
            return Err(Error::Config("min purchases must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureStats {
    pub exposures: u64,
    /// Dispenses of patients without a follow-up period.
    pub ignored_dispenses: u64,
}

/// Drug exposures per (patient, drug).
///
/// Only dispenses inside the closed follow-up interval count. Limited: each
/// covers `[d, d + duration]`, consecutive covers closer than the gap
/// tolerance merge, episodes with enough dispenses are clipped to the
/// follow-up. Unlimited: `[first dispense, follow-up end]`.
pub fn exposure(
    dispenses: &[Event],
    follow_ups: &[Event],
    spec: ExposureSpec,
) -> Result<(Vec<Event>, ExposureStats)> {
    spec.validate()?;
    let fu: HashMap<&str, (Timestamp, Timestamp)> = follow_ups
        .iter()
        .map(|f| (f.patient_id.as_str(), (f.start, f.end_or_start())))
        .collect();
    let mut groups: BTreeMap<(&str, &str), Vec<Timestamp>> = BTreeMap::new();
    let mut stats = ExposureStats::default();
    for d in dispenses {
        if fu.contains_key(d.patient_id.as_str()) {
            groups.entry((&d.patient_id, &d.value)).or_default().push(d.start);
        } else {
            stats.ignored_dispenses += 1;
        }
    }
    let groups: Vec<((&str, &str), Vec<Timestamp>)> = groups.into_iter().collect();
    let episodes: Vec<(&str, &str, Timestamp, Timestamp)> = groups
        .into_par_iter()
        .flat_map_iter(|((pid, drug), mut dates)| {
            let (fs, fe) = fu[pid];
            dates.retain(|d| fs <= *d && *d <= fe);
            dates.sort();
            episodes_for(&dates, fs, fe, spec)
                .into_iter()
                .map(move |(s, e)| (pid, drug, s, e))
        })
        .collect();
    let out = episodes
        .into_iter()
        .map(|(pid, drug, s, e)| Event::continuous(pid, EXPOSURE, drug, 1.0, s, e))
        .collect::<Result<Vec<_>>>()?;
    stats.exposures = out.len() as u64;
    Ok((finish(out), stats))
}

fn episodes_for(dates: &[Timestamp], fs: Timestamp, fe: Timestamp, spec: ExposureSpec) -> Vec<(Timestamp, Timestamp)> {
    let min = spec.min_purchases as usize;
    if dates.len() < min {
        return Vec::new();
    }
    match spec.strategy {
        ExposureStrategy::Unlimited => vec![(dates[0], fe)],
        ExposureStrategy::Limited => {
            let dur = spec.purchase_duration as i64;
            let gap = spec.gap_tolerance as i64;
            let mut out = Vec::new();
            let (mut s, mut e, mut n) = (dates[0], dates[0].add_days(dur), 1usize);
            for &d in &dates[1..] {
                if d <= e.add_days(gap) {
                    e = e.max(d.add_days(dur));
                    n += 1;
                } else {
                    if n >= min {
                        out.push((s.max(fs), e.min(fe)));
                    }
                    (s, e, n) = (d, d.add_days(dur), 1);
                }
            }
            if n >= min {
                out.push((s.max(fs), e.min(fe)));
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSite {
    pub label: String,
    pub act_codes: BTreeSet<String>,
    pub diagnosis_codes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeConfig {
    pub sites: Vec<OutcomeSite>,
}

/// One outcome per (patient, site, stay or day): a qualifying act with a
/// stay id needs a qualifying main diagnosis in the same stay; an act
/// without one needs it on the same calendar day. The event starts at the
/// earliest qualifying act of the group.
pub fn outcome(acts: &[Event], main_diagnoses: &[Event], config: &OutcomeConfig) -> Result<Vec<Event>> {
    if config.sites.is_empty() || config.sites.iter().any(|s| s.act_codes.is_empty() || s.diagnosis_codes.is_empty()) {
        return Err(Error::Config("outcome needs at least one site with act and diagnosis codes".into()));
    }
    let diags = by_patient(main_diagnoses);
    let mut out = Vec::new();
    for (pid, pacts) in by_patient(acts) {
        let Some(pdiags) = diags.get(pid) else { continue };
        for site in &config.sites {
            let mut stays = HashSet::new();
            let mut days = HashSet::new();
            for d in pdiags.iter().filter(|d| site.diagnosis_codes.contains(&d.value)) {
                if let Some(g) = &d.group_id {
                    stays.insert(g.as_str());
                }
                days.insert(d.start.date());
            }
            let mut groups: BTreeMap<(Option<&str>, Option<chrono::NaiveDate>), Timestamp> = BTreeMap::new();
            for a in pacts.iter().filter(|a| site.act_codes.contains(&a.value)) {
                let key = match &a.group_id {
                    Some(g) if stays.contains(g.as_str()) => (Some(g.as_str()), None),
                    Some(_) => continue,
                    None if days.contains(&a.start.date()) => (None, Some(a.start.date())),
                    None => continue,
                };
                groups
                    .entry(key)
                    .and_modify(|t| *t = (*t).min(a.start))
                    .or_insert(a.start);
            }
            for ((stay, _), start) in groups {
                out.push(
                    Event::punctual(pid, OUTCOME, &site.label, 1.0, start)?
                        .with_group(stay.map(str::to_string)),
                );
            }
        }
    }
    Ok(finish(out))
}

/// Patients whose earliest dispense (restricted to `codes` when given)
/// is strictly before `cutoff`.
pub fn prevalent_users(dispenses: &[Event], cutoff: Timestamp, codes: Option<&BTreeSet<String>>) -> BTreeSet<String> {
    let mut first: HashMap<&str, Timestamp> = HashMap::new();
    for d in dispenses {
        if codes.is_some_and(|c| !c.contains(&d.value)) {
            continue;
        }
        first
            .entry(&d.patient_id)
            .and_modify(|t| *t = (*t).min(d.start))
            .or_insert(d.start);
    }
    first
        .into_iter()
        .filter(|(_, t)| *t < cutoff)
        .map(|(p, _)| p.to_string())
        .collect()
}
