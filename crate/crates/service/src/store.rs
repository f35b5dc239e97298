//! Patient sessions persisted as append-only JSON-lines journals, one file per patient.
//!
//! Every accepted mutation appends exactly one entry; the patient version is the sequence
//! number of the last entry. Loading a journal replays it from the start.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdm_core::data::locf_fill_timeline;
use tdm_core::pk::{CovariateRecord, Event, EventTimeline, SimulationPlan, LAB_COVARIATES};

pub const MAX_ID_LEN: usize = 64;

/// Laboratory values recorded on one POD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayCovariates {
    pub pod: u32,
    #[serde(default)]
    pub alb: Option<f64>,
    #[serde(default)]
    pub asat: Option<f64>,
    #[serde(default)]
    pub weight: Option<f64>,
}

impl DayCovariates {
    fn record(&self) -> CovariateRecord {
        CovariateRecord {
            alb: self.alb,
            asat: self.asat,
            weight: self.weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Change {
    Create {
        patient_id: String,
        model: String,
        pod_offset: i64,
        transplant_date: Option<NaiveDate>,
        covariates: Vec<DayCovariates>,
        events: Vec<Event>,
    },
    AddEvents {
        events: Vec<Event>,
        covariates: Vec<DayCovariates>,
    },
    /// Replaces the event at `index` in time order.
    EditEvent { index: usize, event: Event },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug)]
pub enum StoreError {
    NotFound(String),
    Exists(String),
    Conflict { expected: u64, current: u64 },
    Invalid(Vec<FieldError>),
    Io(std::io::Error),
    Corrupt(String),
}

impl std::fmt::Display for StoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreError::NotFound(id) => write!(f, "unknown patient {id}"),
            StoreError::Exists(id) => write!(f, "patient {id} already exists"),
            StoreError::Conflict { expected, current } => {
                write!(f, "version {expected} is stale; the patient is at version {current}")
            }
            StoreError::Invalid(errs) => {
                let parts: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
                write!(f, "invalid request ({})", parts.join("; "))
            }
            StoreError::Io(e) => write!(f, "journal I/O failed: {e}"),
            StoreError::Corrupt(m) => write!(f, "corrupt journal: {m}"),
        }
    }
}

impl std::error::Error for StoreError {}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e)
    }
}

/// Immutable view of a patient at one version.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientSnapshot {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    /// Raw timeline: covariates as entered, gaps not filled.
    pub timeline: EventTimeline,
}

/// Timeline ready for simulation: covariate gaps filled and carried through the last event.
pub fn prepared_timeline(raw: &EventTimeline) -> tdm_core::Result<EventTimeline> {
    let mut tl = raw.clone();
    locf_fill_timeline(&mut tl)?;
    Ok(tl)
}

pub fn valid_patient_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= MAX_ID_LEN && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn check_events(events: &[Event], errs: &mut Vec<FieldError>) {
    for (i, ev) in events.iter().enumerate() {
        check_event(ev, &format!("events[{i}]"), errs);
    }
}

fn check_event(ev: &Event, at: &str, errs: &mut Vec<FieldError>) {
    let t = ev.time();
    if !(t.is_finite() && t >= 0.0) {
        errs.push(FieldError::new(
            format!("{at}.time"),
            "must be a finite number of hours >= 0",
        ));
    }
    match ev {
        Event::Dose { amount, .. } => {
            if !(amount.is_finite() && *amount > 0.0) {
                errs.push(FieldError::new(format!("{at}.amount"), "dose must be > 0 mg"));
            }
        }
        Event::Observation { value, mdv, .. } => match (value, mdv) {
            (Some(v), _) if !(v.is_finite() && *v > 0.0) => {
                errs.push(FieldError::new(
                    format!("{at}.value"),
                    "concentration must be > 0 ng/mL",
                ));
            }
            (None, false) => {
                errs.push(FieldError::new(format!("{at}.value"), "required unless mdv is true"));
            }
            _ => {}
        },
    }
}

fn check_covariates(covs: &[DayCovariates], errs: &mut Vec<FieldError>) {
    for (i, c) in covs.iter().enumerate() {
        if c.pod == 0 {
            errs.push(FieldError::new(format!("covariates[{i}].pod"), "must be >= 1"));
        }
        for (name, v) in [("alb", c.alb), ("asat", c.asat), ("weight", c.weight)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    errs.push(FieldError::new(format!("covariates[{i}].{name}"), "must be > 0"));
                }
            }
        }
    }
}

fn merged_covariates(base: &BTreeMap<u32, CovariateRecord>, add: &[DayCovariates]) -> BTreeMap<u32, CovariateRecord> {
    let mut out = base.clone();
    for c in add {
        out.entry(c.pod).or_default().merge(&c.record());
    }
    out
}

/// Timeline after `change`, or the field-level reasons it is rejected.
fn apply(current: Option<&PatientSnapshot>, change: &Change) -> Result<(String, EventTimeline), Vec<FieldError>> {
    let mut errs = Vec::new();
    let (model, tl) = match (change, current) {
        (
            Change::Create {
                patient_id,
                model,
                pod_offset,
                transplant_date,
                covariates,
                events,
            },
            None,
        ) => {
            if !valid_patient_id(patient_id) {
                errs.push(FieldError::new(
                    "patient_id",
                    format!("1 to {MAX_ID_LEN} characters from [A-Za-z0-9_-]"),
                ));
            }
            check_events(events, &mut errs);
            check_covariates(covariates, &mut errs);
            for cov in LAB_COVARIATES {
                if !covariates.iter().any(|c| c.record().get(cov).is_some()) {
                    errs.push(FieldError::new(
                        "covariates",
                        format!("at least one {} value is required", cov.column()),
                    ));
                }
            }
            if !errs.is_empty() {
                return Err(errs);
            }
            let covs = merged_covariates(&BTreeMap::new(), covariates);
            let tl = EventTimeline::new(patient_id.clone(), events.clone(), covs, *pod_offset)
                .map_err(|e| vec![FieldError::new("events", e.to_string())])?
                .with_transplant_date(*transplant_date);
            (model.clone(), tl)
        }
        (Change::AddEvents { events, covariates }, Some(snap)) => {
            check_events(events, &mut errs);
            check_covariates(covariates, &mut errs);
            let existing: Vec<f64> = snap.timeline.observations().map(Event::time).collect();
            for (i, ev) in events.iter().enumerate() {
                if !ev.is_dose() && existing.contains(&ev.time()) {
                    errs.push(FieldError::new(
                        format!("events[{i}].time"),
                        "an observation is already recorded at this time",
                    ));
                }
            }
            if !errs.is_empty() {
                return Err(errs);
            }
            let mut all = snap.timeline.events().to_vec();
            all.extend(events.iter().cloned());
            let covs = merged_covariates(snap.timeline.covariates(), covariates);
            let tl = EventTimeline::new(snap.patient_id.clone(), all, covs, snap.timeline.pod_offset())
                .map_err(|e| vec![FieldError::new("events", e.to_string())])?
                .with_transplant_date(snap.timeline.transplant_date);
            (snap.model.clone(), tl)
        }
        (Change::EditEvent { index, event }, Some(snap)) => {
            let old = snap.timeline.events();
            if *index >= old.len() {
                return Err(vec![FieldError::new(
                    "index",
                    format!("no event {index}; the patient has {}", old.len()),
                )]);
            }
            check_event(event, "event", &mut errs);
            let clash = !event.is_dose()
                && old
                    .iter()
                    .enumerate()
                    .any(|(i, e)| i != *index && !e.is_dose() && e.time() == event.time());
            if clash {
                errs.push(FieldError::new(
                    "event.time",
                    "an observation is already recorded at this time",
                ));
            }
            if !errs.is_empty() {
                return Err(errs);
            }
            let mut all = old.to_vec();
            all[*index] = event.clone();
            let tl = EventTimeline::new(
                snap.patient_id.clone(),
                all,
                snap.timeline.covariates().clone(),
                snap.timeline.pod_offset(),
            )
            .map_err(|e| vec![FieldError::new("event", e.to_string())])?
            .with_transplant_date(snap.timeline.transplant_date);
            (snap.model.clone(), tl)
        }
        _ => {
            return Err(vec![FieldError::new(
                "kind",
                "change does not apply to this patient state",
            )])
        }
    };
    if !tl.events().is_empty() {
        prepared_timeline(&tl)
            .and_then(|p| SimulationPlan::new(&p))
            .map_err(|e| vec![FieldError::new("covariates", e.to_string())])?;
    }
    Ok((model, tl))
}

/// Rebuilds a patient from its journal entries.
pub fn replay(entries: &[JournalEntry]) -> Result<PatientSnapshot, StoreError> {
    let mut snap: Option<PatientSnapshot> = None;
    for (k, entry) in entries.iter().enumerate() {
        let expected = k as u64 + 1;
        if entry.seq != expected {
            return Err(StoreError::Corrupt(format!(
                "entry {k} has seq {}, expected {expected}",
                entry.seq
            )));
        }
        let (model, timeline) = apply(snap.as_ref(), &entry.change).map_err(|errs| {
            StoreError::Corrupt(format!(
                "entry {expected} does not replay: {}",
                StoreError::Invalid(errs)
            ))
        })?;
        snap = Some(PatientSnapshot {
            patient_id: timeline.patient_id.clone(),
            model,
            version: expected,
            timeline,
        });
    }
    snap.ok_or_else(|| StoreError::Corrupt("empty journal".into()))
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, StoreError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| StoreError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

struct Session {
    snapshot: Arc<PatientSnapshot>,
    path: PathBuf,
}

impl Session {
    fn append(&mut self, change: Change) -> Result<Arc<PatientSnapshot>, StoreError> {
        let (model, timeline) = apply(Some(&self.snapshot), &change).map_err(StoreError::Invalid)?;
        let version = self.snapshot.version + 1;
        write_entry(&self.path, version, change, false)?;
        self.snapshot = Arc::new(PatientSnapshot {
            patient_id: self.snapshot.patient_id.clone(),
            model,
            version,
            timeline,
        });
        Ok(self.snapshot.clone())
    }
}

fn write_entry(path: &Path, seq: u64, change: Change, create: bool) -> Result<(), StoreError> {
    let entry = JournalEntry {
        seq,
        at: Utc::now(),
        change,
    };
    let mut line = serde_json::to_string(&entry).map_err(|e| StoreError::Io(e.into()))?;
    line.push('\n');
    let mut f = if create {
        OpenOptions::new().write(true).create_new(true).open(path)?
    } else {
        OpenOptions::new().append(true).open(path)?
    };
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// All patient sessions. Mutations of one patient serialize on its lock; readers take a
/// snapshot and release it.
pub struct Store {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
}

impl Store {
    /// Opens (creating if needed) `<data_dir>/patients` and replays every journal in it.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let dir = data_dir.join("patients");
        fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let snap =
                replay(&read_journal(&path)?).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != snap.patient_id {
                return Err(StoreError::Corrupt(format!(
                    "{} holds patient {}",
                    path.display(),
                    snap.patient_id
                )));
            }
            sessions.insert(
                snap.patient_id.clone(),
                Arc::new(Mutex::new(Session {
                    snapshot: Arc::new(snap),
                    path,
                })),
            );
        }
        log::info!("loaded {} patient journal(s) from {}", sessions.len(), dir.display());
        Ok(Self {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn journal_path(&self, patient_id: &str) -> PathBuf {
        self.dir.join(format!("{patient_id}.jsonl"))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("store lock").keys().cloned().collect()
    }

    pub fn get(&self, patient_id: &str) -> Result<Arc<PatientSnapshot>, StoreError> {
        let session = self
            .sessions
            .read()
            .expect("store lock")
            .get(patient_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(patient_id.to_string()))?;
        let snap = session.lock().expect("session lock").snapshot.clone();
        Ok(snap)
    }

    /// Creates a patient from a `Change::Create`.
    pub fn create(&self, change: Change) -> Result<Arc<PatientSnapshot>, StoreError> {
        let Change::Create { patient_id, .. } = &change else {
            return Err(StoreError::Invalid(vec![FieldError::new(
                "kind",
                "expected a create change",
            )]));
        };
        let patient_id = patient_id.clone();
        let mut sessions = self.sessions.write().expect("store lock");
        if sessions.contains_key(&patient_id) {
            return Err(StoreError::Exists(patient_id));
        }
        let (model, timeline) = apply(None, &change).map_err(StoreError::Invalid)?;
        let path = self.journal_path(&patient_id);
        write_entry(&path, 1, change, true)?;
        let snapshot = Arc::new(PatientSnapshot {
            patient_id: patient_id.clone(),
            model,
            version: 1,
            timeline,
        });
        sessions.insert(
            patient_id,
            Arc::new(Mutex::new(Session {
                snapshot: snapshot.clone(),
                path,
            })),
        );
        Ok(snapshot)
    }

    /// Appends `events` and `covariates` if the patient is still at `expected_version`.
    pub fn add_events(
        &self,
        patient_id: &str,
        expected_version: u64,
        events: Vec<Event>,
        covariates: Vec<DayCovariates>,
    ) -> Result<Arc<PatientSnapshot>, StoreError> {
        self.mutate(patient_id, expected_version, Change::AddEvents { events, covariates })
    }

    /// Replaces event `index` (position in time order) if the patient is still at
    /// `expected_version`.
    pub fn edit_event(
        &self,
        patient_id: &str,
        expected_version: u64,
        index: usize,
        event: Event,
    ) -> Result<Arc<PatientSnapshot>, StoreError> {
        self.mutate(patient_id, expected_version, Change::EditEvent { index, event })
    }

    fn mutate(
        &self,
        patient_id: &str,
        expected_version: u64,
        change: Change,
    ) -> Result<Arc<PatientSnapshot>, StoreError> {
        let session = self
            .sessions
            .read()
            .expect("store lock")
            .get(patient_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(patient_id.to_string()))?;
        let mut s = session.lock().expect("session lock");
        let current = s.snapshot.version;
        if current != expected_version {
            return Err(StoreError::Conflict {
                expected: expected_version,
                current,
            });
        }
        s.append(change)
    }

    /// SHA-256 over every patient's snapshot, in id order.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        for id in self.ids() {
            if let Ok(snap) = self.get(&id) {
                h.update(serde_json::to_vec(&*snap).expect("snapshot serializes"));
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labs() -> Vec<DayCovariates> {
        vec![DayCovariates {
            pod: 1,
            alb: Some(30.0),
            asat: Some(80.0),
            weight: Some(70.0),
        }]
    }

    fn create(id: &str) -> Change {
        Change::Create {
            patient_id: id.into(),
            model: "m".into(),
            pod_offset: 1,
            transplant_date: None,
            covariates: labs(),
            events: vec![Event::Dose { time: 7.0, amount: 2.0 }],
        }
    }

    #[test]
    fn journal_replays_to_the_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(create("p1")).unwrap();
        let obs = Event::Observation {
            time: 30.0,
            value: Some(8.0),
            mdv: false,
        };
        store.add_events("p1", 1, vec![obs], Vec::new()).unwrap();
        let withdrawn = Event::Observation {
            time: 30.0,
            value: Some(8.0),
            mdv: true,
        };
        let live = store.edit_event("p1", 2, 1, withdrawn.clone()).unwrap();
        assert_eq!(live.version, 3);
        assert_eq!(live.timeline.events()[1], withdrawn);
        let entries = read_journal(&store.journal_path("p1")).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(replay(&entries).unwrap(), *live);
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(*reopened.get("p1").unwrap(), *live);
    }

    #[test]
    fn stale_version_and_bad_fields_are_rejected_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(create("p1")).unwrap();
        let before = fs::read(store.journal_path("p1")).unwrap();
        let dose = Event::Dose {
            time: 19.0,
            amount: 2.0,
        };
        assert!(matches!(
            store.add_events("p1", 7, vec![dose.clone()], Vec::new()),
            Err(StoreError::Conflict {
                expected: 7,
                current: 1
            })
        ));
        let bad = Event::Dose {
            time: 19.0,
            amount: -1.0,
        };
        match store.add_events("p1", 1, vec![dose, bad], Vec::new()) {
            Err(StoreError::Invalid(errs)) => assert_eq!(errs[0].field, "events[1].amount"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(store.create(create("p1")), Err(StoreError::Exists(_))));
        assert!(matches!(store.get("nobody"), Err(StoreError::NotFound(_))));
        assert_eq!(fs::read(store.journal_path("p1")).unwrap(), before);
    }

    #[test]
    fn creation_needs_every_lab_and_a_safe_id() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let Change::Create { events, .. } = create("x") else {
            unreachable!()
        };
        let change = Change::Create {
            patient_id: "../etc".into(),
            model: "m".into(),
            pod_offset: 1,
            transplant_date: None,
            covariates: vec![DayCovariates {
                pod: 1,
                alb: Some(30.0),
                asat: None,
                weight: Some(70.0),
            }],
            events,
        };
        match store.create(change) {
            Err(StoreError::Invalid(errs)) => {
                let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
                assert_eq!(fields, ["patient_id", "covariates"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(store.ids().is_empty());
    }
}
