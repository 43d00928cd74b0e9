//! Run registry: one JSON file per run under `runs/`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use super::ArenaError;
use crate::market::AsOf;
use crate::portfolio::FundId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Created,
    Running,
    Paused,
    Completed,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Created => "CREATED",
            RunStatus::Running => "RUNNING",
            RunStatus::Paused => "PAUSED",
            RunStatus::Completed => "COMPLETED",
            RunStatus::Failed => "FAILED",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunCommand {
    Pause,
    Resume,
    Abort,
}

impl RunCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            RunCommand::Pause => "PAUSE",
            RunCommand::Resume => "RESUME",
            RunCommand::Abort => "ABORT",
        }
    }
}

impl fmt::Display for RunCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunCommand {
    type Err = ArenaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PAUSE" => Ok(RunCommand::Pause),
            "RESUME" => Ok(RunCommand::Resume),
            "ABORT" => Ok(RunCommand::Abort),
            _ => Err(ArenaError::Validation(format!("unknown command {s:?}"))),
        }
    }
}

/// Operator commands: `RUNNING <-> PAUSED`, and ABORT from any live state.
pub fn apply_command(status: RunStatus, command: RunCommand) -> Result<RunStatus, ArenaError> {
    use RunCommand::*;
    use RunStatus::*;
    match (status, command) {
        (Running, Pause) => Ok(Paused),
        (Paused, Resume) => Ok(Running),
        (Created | Running | Paused, Abort) => Ok(Failed),
        (from, command) => Err(ArenaError::IllegalTransition { from, command }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaRun {
    pub run_id: String,
    pub fund_id: FundId,
    pub mode: RunMode,
    pub status: RunStatus,
    /// As-of point of the last cycle attempted.
    pub clock: Option<AsOf>,
    pub date_range: Option<DateRange>,
    pub contaminated: bool,
    pub cause: Option<String>,
    pub cycles_completed: usize,
    pub cycles_planned: Option<usize>,
}

pub struct RunRegistry {
    dir: PathBuf,
    runs: Mutex<BTreeMap<String, ArenaRun>>,
    changed: Notify,
}

fn io(e: impl fmt::Display) -> ArenaError {
    ArenaError::Store(crate::events::EventStoreError::StorageFailure(e.to_string()))
}

impl RunRegistry {
    /// Load every run. Runs left active by a previous process are failed,
    /// since nothing is driving them any more.
    pub fn open(dir: &Path) -> Result<Self, ArenaError> {
        fs::create_dir_all(dir).map_err(io)?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io)?;
            let run: ArenaRun = serde_json::from_str(&text).map_err(io)?;
            runs.insert(run.run_id.clone(), run);
        }
        let reg = Self { dir: dir.to_path_buf(), runs: Mutex::new(runs), changed: Notify::new() };
        let stale: Vec<String> = reg
            .runs
            .lock()
            .unwrap()
            .values()
            .filter(|r| !r.status.is_terminal())
            .map(|r| r.run_id.clone())
            .collect();
        for id in stale {
            tracing::warn!(run = %id, "run was interrupted by a restart");
            reg.update(&id, |r| {
                r.status = RunStatus::Failed;
                r.cause = Some("interrupted by restart".into());
            })?;
        }
        Ok(reg)
    }

    fn persist(&self, run: &ArenaRun) -> Result<(), ArenaError> {
        let path = self.dir.join(format!("{}.json", run.run_id));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(run).map_err(io)?).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    /// Register a new run with the next id, `run-000001` onwards.
    pub fn create(
        &self,
        fund_id: FundId,
        mode: RunMode,
        date_range: Option<DateRange>,
        contaminated: bool,
        cycles_planned: Option<usize>,
    ) -> Result<ArenaRun, ArenaError> {
        let mut runs = self.runs.lock().unwrap();
        let next = runs
            .keys()
            .filter_map(|k| k.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        let run = ArenaRun {
            run_id: format!("run-{next:06}"),
            fund_id,
            mode,
            status: RunStatus::Created,
            clock: None,
            date_range,
            contaminated,
            cause: None,
            cycles_completed: 0,
            cycles_planned,
        };
        self.persist(&run)?;
        runs.insert(run.run_id.clone(), run.clone());
        Ok(run)
    }

    pub fn get(&self, run_id: &str) -> Result<ArenaRun, ArenaError> {
        self.runs.lock().unwrap().get(run_id).cloned().ok_or_else(|| ArenaError::UnknownRun(run_id.to_string()))
    }

    pub fn list(&self) -> Vec<ArenaRun> {
        self.runs.lock().unwrap().values().cloned().collect()
    }

    pub fn update(&self, run_id: &str, f: impl FnOnce(&mut ArenaRun)) -> Result<ArenaRun, ArenaError> {
        let mut runs = self.runs.lock().unwrap();
        let run = runs.get_mut(run_id).ok_or_else(|| ArenaError::UnknownRun(run_id.to_string()))?;
        let mut next = run.clone();
        f(&mut next);
        if let (Some(a), Some(b)) = (run.clock, next.clock) {
            debug_assert!(b.instant >= a.instant, "run clock moved backwards");
        }
        self.persist(&next)?;
        *run = next.clone();
        drop(runs);
        self.changed.notify_waiters();
        Ok(next)
    }

    pub fn command(&self, run_id: &str, command: RunCommand) -> Result<ArenaRun, ArenaError> {
        let mut result = Ok(RunStatus::Created);
        let run = self.update(run_id, |r| {
            result = apply_command(r.status, command);
            if let Ok(s) = result {
                r.status = s;
                if command == RunCommand::Abort {
                    r.cause = Some("aborted".into());
                }
            }
        });
        result?;
        run
    }

    /// Wait until the run is not paused. Returns its current state.
    pub async fn wait_unpaused(&self, run_id: &str) -> Result<ArenaRun, ArenaError> {
        loop {
            let notified = self.changed.notified();
            let run = self.get(run_id)?;
            if run.status != RunStatus::Paused {
                return Ok(run);
            }
            notified.await;
        }
    }

    /// Wait for any change to any run.
    pub async fn changed(&self) {
        self.changed.notified().await
    }
}
