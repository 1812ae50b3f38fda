//! On-disk campaigns: `<root>/<id>/events.jsonl` is the append-only source
//! of truth, `<root>/<id>/snapshot.json` caches the latest state and fit.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use super::{CampaignConfig, CampaignState, CurveRow, Event, Observation, Suggestion};
use crate::diagnostics::DiagnosticReport;
use crate::error::{Error, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptStateFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads an event log. A final line without its newline is a torn write
/// and is skipped if it does not parse; any other bad line is corruption.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        let complete = line.ends_with('\n');
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(text) {
            Ok(event) => events.push(event),
            Err(_) if !complete => {
                log::warn!("{}: ignoring torn final line {number}", path.display());
            }
            Err(err) => return Err(corrupt(path, format!("line {number}: {err}"))),
        }
    }
    Ok(events)
}

fn snapshot_bytes(state: &CampaignState) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(state).expect("campaign state serializes");
    bytes.push(b'\n');
    bytes
}

/// Loads a campaign directory: replays the log, then reuses the snapshot's
/// fit when it describes the same history and revision.
pub fn load_campaign(dir: &Path) -> Result<CampaignState> {
    let log_path = dir.join(EVENTS_FILE);
    let events = read_events(&log_path)?;
    let mut state = CampaignState::replay_history(&events).map_err(|err| match err {
        Error::CorruptStateFile { reason, .. } => corrupt(&log_path, reason),
        other => corrupt(&log_path, other.to_string()),
    })?;

    let snap_path = dir.join(SNAPSHOT_FILE);
    if snap_path.exists() {
        let parsed = fs::read(&snap_path)
            .map_err(Error::from)
            .and_then(|b| serde_json::from_slice::<CampaignState>(&b).map_err(|e| corrupt(&snap_path, e.to_string())));
        match parsed {
            Ok(snap) if snap.revision == state.revision && snap.history == state.history && snap.id == state.id => {
                state.model = snap.model;
            }
            Ok(_) => log::warn!("{}: snapshot is stale; refitting", snap_path.display()),
            Err(err) => log::warn!("{err}; refitting"),
        }
    }
    state.refresh_model();
    Ok(state)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// All campaigns under one directory. Mutations of a campaign are
/// serialized by a per-campaign lock; reads work on a cloned state.
pub struct CampaignStore {
    root: PathBuf,
    open: Mutex<HashMap<String, Arc<Mutex<CampaignState>>>>,
}

impl CampaignStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Ids of every campaign directory under the root.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().join(EVENTS_FILE).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Loads every campaign, surfacing the first corrupt one.
    pub fn load_all(&self) -> Result<usize> {
        let ids = self.ids()?;
        for id in &ids {
            self.handle(id)?;
        }
        Ok(ids.len())
    }

    pub fn create(&self, config: CampaignConfig) -> Result<CampaignState> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.create_with_id(&id, config)
    }

    pub fn create_with_id(&self, id: &str, config: CampaignConfig) -> Result<CampaignState> {
        if !valid_id(id) {
            return Err(Error::InvalidConfig(format!("invalid campaign id {id:?}")));
        }
        let (state, event) = CampaignState::create(id, config)?;
        let dir = self.dir(id);
        fs::create_dir_all(&dir)?;
        let log_path = dir.join(EVENTS_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&log_path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::InvalidConfig(format!("campaign {id} already exists")),
                _ => e.into(),
            })?;
        writeln!(file, "{}", serde_json::to_string(&event).expect("event serializes"))?;
        file.sync_data()?;
        write_snapshot(&dir, &state)?;
        self.lock_map().insert(id.to_string(), Arc::new(Mutex::new(state.clone())));
        Ok(state)
    }

    fn lock_map(&self) -> MutexGuard<'_, HashMap<String, Arc<Mutex<CampaignState>>>> {
        self.open.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<CampaignState>>> {
        if !valid_id(id) {
            return Err(Error::CampaignNotFound(id.to_string()));
        }
        let mut map = self.lock_map();
        if let Some(h) = map.get(id) {
            return Ok(h.clone());
        }
        let dir = self.dir(id);
        if !dir.join(EVENTS_FILE).is_file() {
            return Err(Error::CampaignNotFound(id.to_string()));
        }
        let state = load_campaign(&dir)?;
        let h = Arc::new(Mutex::new(state));
        map.insert(id.to_string(), h.clone());
        Ok(h)
    }

    fn with_campaign<T>(&self, id: &str, f: impl FnOnce(&mut CampaignState, &Path) -> Result<T>) -> Result<T> {
        let h = self.handle(id)?;
        let mut guard = h.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard, &self.dir(id))
    }

    /// A consistent copy of one revision of the campaign.
    pub fn state(&self, id: &str) -> Result<CampaignState> {
        self.with_campaign(id, |s, _| Ok(s.clone()))
    }

    /// Records an observation. With `expected_revision`, the tell only
    /// applies if the campaign is still at that revision.
    pub fn tell(
        &self,
        id: &str,
        x: Vec<f64>,
        y: f64,
        tag: Option<String>,
        expected_revision: Option<u64>,
    ) -> Result<CampaignState> {
        self.with_campaign(id, |state, dir| {
            if let Some(expected) = expected_revision {
                if expected != state.revision {
                    return Err(Error::RevisionMismatch {
                        expected,
                        current: state.revision,
                    });
                }
            }
            let mut next = state.clone();
            let event = next.tell(Observation {
                x,
                y,
                timestamp_ms: now_ms(),
                tag,
            })?;
            append_event(dir, &event)?;
            *state = next;
            write_snapshot(dir, state)?;
            Ok(state.clone())
        })
    }

    pub fn ask(&self, id: &str) -> Result<Suggestion> {
        self.with_campaign(id, |state, dir| {
            let mut next = state.clone();
            let (suggestion, event) = next.ask()?;
            if let Some(event) = event {
                append_event(dir, &event)?;
                *state = next;
                write_snapshot(dir, state)?;
            }
            Ok(suggestion)
        })
    }

    pub fn curve(&self, id: &str, axis: usize, slice: Option<&[f64]>, resolution: usize) -> Result<Vec<CurveRow>> {
        self.state(id)?.posterior_curve(axis, slice, resolution)
    }

    pub fn diagnose(&self, id: &str, refit_per_fold: Option<bool>) -> Result<DiagnosticReport> {
        self.state(id)?.diagnose(refit_per_fold)
    }
}

fn append_event(dir: &Path, event: &Event) -> Result<()> {
    let mut file = OpenOptions::new().append(true).open(dir.join(EVENTS_FILE))?;
    let mut line = serde_json::to_string(event).expect("event serializes");
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

fn write_snapshot(dir: &Path, state: &CampaignState) -> Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let mut file = File::create(&tmp)?;
    file.write_all(&snapshot_bytes(state))?;
    file.sync_data()?;
    fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}
