//! Work-unit coordinator: issues training jobs, validates uploaded weights
//! against regenerated evaluation traces and archives accepted models.
//!
//! On-disk layout under the archive directory:
//!
//! ```text
//! units.jsonl              append-only unit log (one event per line)
//! manifest.jsonl           one ArchiveEntry per accepted model
//! <label>/<unit-id>.json   weights of each accepted model
//! ```
//!
//! A batch is created by a single log line, so a torn write loses the whole
//! batch rather than part of it. Replaying the log (last event per unit wins)
//! and then the manifest (archived units are completed) rebuilds the state.

pub mod http;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, ParameterSet, WeightsJson};
use crate::presets::ExperimentPreset;
use crate::rng::derive_seed;
use crate::traces::{build_corpus, Corpus, EncodedCorpus, Source, TraceSetSpec};
use crate::trainer::{corpus_loss, TrainingConfig, TrainingMetadata};

/// Rejected attempts before a unit is marked failed.
pub const RETRY_CAP: u32 = 3;
/// Ten times a typical desk-scale training run.
pub const DEFAULT_DEADLINE_SECS: u64 = 600;

pub const UNITS_FILE: &str = "units.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitStatus {
    Pending,
    Assigned,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkUnit {
    pub id: String,
    pub label: String,
    pub preset: ExperimentPreset,
    pub arch: Architecture,
    pub traces: TraceSetSpec,
    pub config: TrainingConfig,
    pub deadline_secs: u64,
    pub status: UnitStatus,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub assigned_to: Option<String>,
    /// Unix seconds after which an assignment may be re-issued.
    #[serde(default)]
    pub deadline_at: Option<f64>,
    #[serde(default)]
    pub last_rejection: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSubmission {
    pub work_unit_id: String,
    pub worker_id: String,
    /// Kept as raw JSON so malformed weights get a distinct rejection.
    pub weights: serde_json::Value,
    pub meta: TrainingMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    UnknownUnit,
    UnparseableWeights,
    ArchMismatch,
    EvalLossExceeded,
    AlreadyCompleted,
    UnitFailed,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub unit_id: String,
    pub label: String,
    /// Relative to the archive directory.
    pub model_path: String,
    pub eval_loss: f64,
    #[serde(default)]
    pub pathological_eval_loss: Option<f64>,
    pub eval_threshold: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub epochs: usize,
    pub worker_id: String,
    pub trace_seed: u64,
    pub training_seed: u64,
    pub assigned_at: Option<f64>,
    pub archived_at: f64,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum SubmitOutcome {
    Accepted {
        entry: ArchiveEntry,
    },
    Rejected {
        reason: RejectReason,
        detail: String,
        #[serde(default)]
        eval_loss: Option<f64>,
    },
}

impl SubmitOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, SubmitOutcome::Accepted { .. })
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            SubmitOutcome::Rejected { reason, .. } => Some(*reason),
            SubmitOutcome::Accepted { .. } => None,
        }
    }

    fn rejected(reason: RejectReason, detail: impl Into<String>) -> Self {
        SubmitOutcome::Rejected {
            reason,
            detail: detail.into(),
            eval_loss: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub assigned: usize,
    pub completed: usize,
    pub failed: usize,
}

impl StatusCounts {
    fn bump(&mut self, s: UnitStatus) {
        match s {
            UnitStatus::Pending => self.pending += 1,
            UnitStatus::Assigned => self.assigned += 1,
            UnitStatus::Completed => self.completed += 1,
            UnitStatus::Failed => self.failed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pending + self.assigned + self.completed + self.failed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusSummary {
    pub total: usize,
    #[serde(flatten)]
    pub counts: StatusCounts,
    pub archive: usize,
    pub per_label: BTreeMap<String, StatusCounts>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum LogEvent {
    Create { units: Vec<WorkUnit> },
    Update { unit: WorkUnit },
}

struct State {
    units: BTreeMap<String, WorkUnit>,
    next_id: u64,
    archive: Vec<ArchiveEntry>,
    log: File,
}

pub struct Coordinator {
    dir: PathBuf,
    deadline_secs: u64,
    state: Mutex<State>,
}

pub fn now_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn append_line(file: &mut File, path: &Path, line: &str) -> Result<()> {
    let mut buf = String::with_capacity(line.len() + 1);
    buf.push_str(line);
    buf.push('\n');
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .collect()
}

/// Seeds for unit `index` of a batch: (trace seed, training seed).
pub fn unit_seeds(batch_seed: u64, index: u64) -> (u64, u64) {
    (derive_seed(batch_seed, 2 * index), derive_seed(batch_seed, 2 * index + 1))
}

impl Coordinator {
    /// Opens (or creates) an archive directory and replays its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let units_path = dir.join(UNITS_FILE);
        let mut units = BTreeMap::new();
        for (n, line) in read_lines(&units_path)?.iter().enumerate() {
            match serde_json::from_str::<LogEvent>(line) {
                Ok(LogEvent::Create { units: batch }) => {
                    for u in batch {
                        units.insert(u.id.clone(), u);
                    }
                }
                Ok(LogEvent::Update { unit }) => {
                    units.insert(unit.id.clone(), unit);
                }
                // A torn trailing write; anything it described never happened.
                Err(e) => log::warn!("{}:{}: skipping unreadable event: {e}", units_path.display(), n + 1),
            }
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut archive = Vec::new();
        for line in read_lines(&manifest_path)? {
            match serde_json::from_str::<ArchiveEntry>(&line) {
                Ok(e) => archive.push(e),
                Err(e) => log::warn!("{}: skipping unreadable entry: {e}", manifest_path.display()),
            }
        }
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&units_path)
            .map_err(|e| Error::io(&units_path, e))?;
        let torn = fs::read(&units_path)
            .map_err(|e| Error::io(&units_path, e))?
            .last()
            .is_some_and(|&b| b != b'\n');
        if torn {
            log.write_all(b"\n").map_err(|e| Error::io(&units_path, e))?;
        }
        for entry in &archive {
            if let Some(u) = units.get_mut(&entry.unit_id) {
                if u.status != UnitStatus::Completed {
                    u.status = UnitStatus::Completed;
                    let line = serde_json::to_string(&LogEvent::Update { unit: u.clone() })?;
                    append_line(&mut log, &units_path, &line)?;
                }
            }
        }
        let next_id = units
            .keys()
            .filter_map(|k| k.strip_prefix('u').and_then(|n| n.parse::<u64>().ok()))
            .max()
            .map_or(0, |m| m + 1);
        Ok(Self {
            dir,
            deadline_secs: DEFAULT_DEADLINE_SECS,
            state: Mutex::new(State {
                units,
                next_id,
                archive,
                log,
            }),
        })
    }

    pub fn with_deadline(mut self, secs: u64) -> Self {
        self.deadline_secs = secs;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        // A panic while holding the lock leaves the in-memory state at worst one
        // event behind the log, which is still consistent.
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn log_event(&self, st: &mut State, ev: &LogEvent) -> Result<()> {
        let line = serde_json::to_string(ev)?;
        append_line(&mut st.log, &self.dir.join(UNITS_FILE), &line)
    }

    /// Creates `count` pending units with seeds derived from `batch_seed`.
    pub fn create_batch(&self, source: Source, count: usize, preset: ExperimentPreset, batch_seed: u64) -> Result<Vec<WorkUnit>> {
        let mut st = self.lock();
        let mut units = Vec::with_capacity(count);
        for i in 0..count as u64 {
            let (trace_seed, training_seed) = unit_seeds(batch_seed, i);
            let traces = preset.trace_spec(source, trace_seed);
            traces.validate()?;
            units.push(WorkUnit {
                id: format!("u{:06}", st.next_id + i),
                label: source.to_string(),
                preset,
                arch: preset.arch(),
                traces,
                config: preset.training(training_seed),
                deadline_secs: self.deadline_secs,
                status: UnitStatus::Pending,
                attempts: 0,
                assigned_to: None,
                deadline_at: None,
                last_rejection: None,
            });
        }
        if units.is_empty() {
            return Ok(units);
        }
        self.log_event(&mut st, &LogEvent::Create { units: units.clone() })?;
        st.next_id += count as u64;
        for u in &units {
            st.units.insert(u.id.clone(), u.clone());
        }
        Ok(units)
    }

    pub fn assign_work(&self, worker_id: &str) -> Result<Option<WorkUnit>> {
        self.assign_work_at(worker_id, now_secs())
    }

    /// Like [`assign_work`](Self::assign_work) with an explicit clock.
    pub fn assign_work_at(&self, worker_id: &str, now: f64) -> Result<Option<WorkUnit>> {
        let mut st = self.lock();
        let Some(id) = st
            .units
            .values()
            .find(|u| match u.status {
                UnitStatus::Pending => true,
                UnitStatus::Assigned => u.deadline_at.is_none_or(|d| d <= now),
                _ => false,
            })
            .map(|u| u.id.clone())
        else {
            return Ok(None);
        };
        let mut unit = st.units[&id].clone();
        unit.status = UnitStatus::Assigned;
        unit.assigned_to = Some(worker_id.to_string());
        unit.deadline_at = Some(now + unit.deadline_secs as f64);
        self.log_event(&mut st, &LogEvent::Update { unit: unit.clone() })?;
        st.units.insert(id, unit.clone());
        Ok(Some(unit))
    }

    pub fn unit(&self, id: &str) -> Option<WorkUnit> {
        self.lock().units.get(id).cloned()
    }

    pub fn units(&self) -> Vec<WorkUnit> {
        self.lock().units.values().cloned().collect()
    }

    pub fn archive(&self) -> Vec<ArchiveEntry> {
        self.lock().archive.clone()
    }

    pub fn status(&self) -> StatusSummary {
        let st = self.lock();
        let mut s = StatusSummary {
            total: st.units.len(),
            archive: st.archive.len(),
            ..Default::default()
        };
        for u in st.units.values() {
            s.counts.bump(u.status);
            s.per_label.entry(u.label.clone()).or_default().bump(u.status);
        }
        s
    }

    /// Validates a submission and archives it when it passes.
    ///
    /// Any worker may submit for a unit that is still open; the loss is
    /// recomputed here, so the submitter's identity does not matter for
    /// correctness. `Err` is reserved for storage failures.
    pub fn submit_result(&self, sub: &ResultSubmission) -> Result<SubmitOutcome> {
        let unit = {
            let st = self.lock();
            match st.units.get(&sub.work_unit_id) {
                None => return Ok(SubmitOutcome::rejected(RejectReason::UnknownUnit, &sub.work_unit_id)),
                Some(u) if u.status == UnitStatus::Completed => {
                    return Ok(SubmitOutcome::rejected(RejectReason::AlreadyCompleted, &u.id))
                }
                Some(u) if u.status == UnitStatus::Failed => return Ok(SubmitOutcome::rejected(RejectReason::UnitFailed, &u.id)),
                Some(u) => u.clone(),
            }
        };

        // Validation runs outside the lock so submissions evaluate in parallel.
        let verdict = validate_weights(&unit, &sub.weights);
        let mut st = self.lock();
        let mut current = st.units[&unit.id].clone();
        match current.status {
            UnitStatus::Completed => return Ok(SubmitOutcome::rejected(RejectReason::AlreadyCompleted, &unit.id)),
            UnitStatus::Failed => return Ok(SubmitOutcome::rejected(RejectReason::UnitFailed, &unit.id)),
            _ => {}
        }
        match verdict? {
            Verdict::Reject(reason, detail, eval_loss) => {
                current.attempts += 1;
                current.status = if current.attempts >= RETRY_CAP { UnitStatus::Failed } else { UnitStatus::Pending };
                current.assigned_to = None;
                current.deadline_at = None;
                current.last_rejection = Some(reason);
                self.log_event(&mut st, &LogEvent::Update { unit: current.clone() })?;
                st.units.insert(current.id.clone(), current);
                Ok(SubmitOutcome::Rejected {
                    reason,
                    detail,
                    eval_loss,
                })
            }
            Verdict::Accept {
                params,
                eval_loss,
                pathological,
            } => {
                let rel = format!("{}/{}.json", current.label, current.id);
                let path = self.dir.join(&rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                fs::write(&path, params.to_json()?).map_err(|e| Error::io(&path, e))?;
                let entry = ArchiveEntry {
                    unit_id: current.id.clone(),
                    label: current.label.clone(),
                    model_path: rel,
                    eval_loss,
                    pathological_eval_loss: pathological,
                    eval_threshold: current.config.eval_threshold,
                    train_loss: sub.meta.train_loss_history.last().copied(),
                    val_loss: sub.meta.final_val_loss(),
                    epochs: sub.meta.epochs_completed,
                    worker_id: sub.worker_id.clone(),
                    trace_seed: current.traces.seed,
                    training_seed: current.config.seed,
                    assigned_at: current.deadline_at.map(|d| d - current.deadline_secs as f64),
                    archived_at: now_secs(),
                    engine_version: sub.meta.engine_version.clone(),
                };
                let manifest_path = self.dir.join(MANIFEST_FILE);
                let mut manifest = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&manifest_path)
                    .map_err(|e| Error::io(&manifest_path, e))?;
                append_line(&mut manifest, &manifest_path, &serde_json::to_string(&entry)?)?;
                current.status = UnitStatus::Completed;
                self.log_event(&mut st, &LogEvent::Update { unit: current.clone() })?;
                st.units.insert(current.id.clone(), current);
                st.archive.push(entry.clone());
                Ok(SubmitOutcome::Accepted { entry })
            }
        }
    }

    /// Recomputes an archived model's evaluation loss from its stored weights.
    pub fn revalidate(&self, entry: &ArchiveEntry) -> Result<f64> {
        let unit = self
            .unit(&entry.unit_id)
            .ok_or_else(|| Error::invalid(format!("archive entry for unknown unit {}", entry.unit_id)))?;
        let path = self.dir.join(&entry.model_path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let params = ParameterSet::from_json(&text)?;
        eval_loss(&params, &unit.traces, Corpus::Eval)
    }
}

enum Verdict {
    Accept {
        params: ParameterSet<f32>,
        eval_loss: f64,
        pathological: Option<f64>,
    },
    Reject(RejectReason, String, Option<f64>),
}

/// Loss of `params` on one corpus regenerated from the unit's trace spec.
pub fn eval_loss(params: &ParameterSet<f32>, spec: &TraceSetSpec, which: Corpus) -> Result<f64> {
    let oracle = spec.oracle();
    let pairs = build_corpus(spec, &oracle, which)?;
    corpus_loss(params, &EncodedCorpus::new(&pairs, oracle.encoding()))
}

fn validate_weights(unit: &WorkUnit, weights: &serde_json::Value) -> Result<Verdict> {
    let parsed: WeightsJson = match serde_json::from_value(weights.clone()) {
        Ok(w) => w,
        Err(e) => return Ok(Verdict::Reject(RejectReason::UnparseableWeights, e.to_string(), None)),
    };
    if parsed.arch != unit.arch {
        return Ok(Verdict::Reject(
            RejectReason::ArchMismatch,
            format!("expected {:?}, got {:?}", unit.arch, parsed.arch),
            None,
        ));
    }
    let params = match ParameterSet::try_from(parsed) {
        Ok(p) => p,
        Err(e) => return Ok(Verdict::Reject(RejectReason::UnparseableWeights, e.to_string(), None)),
    };
    let threshold = unit.config.eval_threshold;
    let eval = eval_loss(&params, &unit.traces, Corpus::Eval)?;
    // NaN fails this comparison, so diverged weights are rejected too.
    if !(eval <= threshold) {
        return Ok(Verdict::Reject(
            RejectReason::EvalLossExceeded,
            format!("eval loss {eval:e} > {threshold:e}"),
            Some(eval),
        ));
    }
    let pathological = if unit.traces.has_pathological_eval() {
        let p = eval_loss(&params, &unit.traces, Corpus::EvalPathological)?;
        if !(p <= threshold) {
            return Ok(Verdict::Reject(
                RejectReason::EvalLossExceeded,
                format!("pathological eval loss {p:e} > {threshold:e}"),
                Some(eval),
            ));
        }
        Some(p)
    } else {
        None
    };
    Ok(Verdict::Accept {
        params,
        eval_loss: eval,
        pathological,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machines::{Logic, MachineKind};
    use crate::nn::init_network;
    use crate::trainer::{TrainingStatus, ENGINE_VERSION};

    fn eightbit() -> Source {
        Source::Machine(MachineKind::clean(Logic::EightBit))
    }

    fn meta(arch: Architecture) -> TrainingMetadata {
        TrainingMetadata {
            label: "x".into(),
            status: TrainingStatus::Converged,
            arch,
            seed: 0,
            epochs_completed: 0,
            train_loss_history: vec![],
            val_loss_history: vec![],
            wall_time: 0.0,
            engine_version: ENGINE_VERSION.into(),
            work_unit_id: None,
        }
    }

    fn submission(unit: &str, weights: serde_json::Value) -> ResultSubmission {
        ResultSubmission {
            work_unit_id: unit.into(),
            worker_id: "w".into(),
            weights,
            meta: meta(Architecture::ds1()),
        }
    }

    fn random_weights(seed: u64) -> serde_json::Value {
        serde_json::to_value(WeightsJson::from(&init_network(Architecture::ds1(), seed).unwrap())).unwrap()
    }

    #[test]
    fn batches() {
        let dir = tempfile::tempdir().unwrap();
        let c = Coordinator::open(dir.path()).unwrap();
        assert_eq!(c.status(), StatusSummary::default());
        assert!(c.create_batch(eightbit(), 0, ExperimentPreset::DeskDs1, 1).unwrap().is_empty());
        assert!(!dir.path().join(UNITS_FILE).exists() || fs::read_to_string(dir.path().join(UNITS_FILE)).unwrap().is_empty());

        let a = c.create_batch(eightbit(), 10, ExperimentPreset::DeskDs1, 1).unwrap();
        assert!(a.iter().all(|u| u.status == UnitStatus::Pending));
        let seeds: std::collections::HashSet<u64> = a.iter().map(|u| u.config.seed).collect();
        assert_eq!(seeds.len(), 10);
        let b = c.create_batch(eightbit(), 10, ExperimentPreset::DeskDs1, 1).unwrap();
        assert!(a.iter().all(|u| b.iter().all(|v| v.id != u.id)));
        let s = c.status();
        assert_eq!((s.total, s.counts.pending), (20, 20));
        assert_eq!(s.per_label["eightbit"].pending, 20);
    }

    #[test]
    fn assignment_and_deadline() {
        let dir = tempfile::tempdir().unwrap();
        let c = Coordinator::open(dir.path()).unwrap().with_deadline(10);
        assert!(c.assign_work_at("a", 0.0).unwrap().is_none());
        c.create_batch(eightbit(), 1, ExperimentPreset::DeskDs1, 1).unwrap();
        let u = c.assign_work_at("a", 100.0).unwrap().unwrap();
        assert_eq!(u.assigned_to.as_deref(), Some("a"));
        assert!(c.assign_work_at("b", 105.0).unwrap().is_none());
        let again = c.assign_work_at("b", 110.0).unwrap().unwrap();
        assert_eq!(again.id, u.id);
        assert_eq!(again.assigned_to.as_deref(), Some("b"));
    }

    #[test]
    fn concurrent_requests_get_one_unit() {
        let dir = tempfile::tempdir().unwrap();
        let c = Coordinator::open(dir.path()).unwrap();
        c.create_batch(eightbit(), 1, ExperimentPreset::DeskDs1, 1).unwrap();
        let c = &c;
        let got: Vec<Option<WorkUnit>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..2).map(|i| s.spawn(move || c.assign_work(&format!("w{i}")).unwrap())).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(got.iter().filter(|g| g.is_some()).count(), 1);
    }

    #[test]
    fn rejections_and_retry_cap() {
        let dir = tempfile::tempdir().unwrap();
        let c = Coordinator::open(dir.path()).unwrap();
        let id = c.create_batch(eightbit(), 1, ExperimentPreset::DeskDs1, 1).unwrap()[0].id.clone();
        let out = c.submit_result(&submission("nope", random_weights(1))).unwrap();
        assert_eq!(out.reason(), Some(RejectReason::UnknownUnit));

        c.assign_work("w").unwrap();
        let out = c.submit_result(&submission(&id, serde_json::json!({"bogus": 1}))).unwrap();
        assert_eq!(out.reason(), Some(RejectReason::UnparseableWeights));
        assert_eq!(c.unit(&id).unwrap().status, UnitStatus::Pending);

        let ds3 = serde_json::to_value(WeightsJson::from(&init_network(Architecture::ds3(), 1).unwrap())).unwrap();
        assert_eq!(c.submit_result(&submission(&id, ds3)).unwrap().reason(), Some(RejectReason::ArchMismatch));

        let out = c.submit_result(&submission(&id, random_weights(2))).unwrap();
        assert_eq!(out.reason(), Some(RejectReason::EvalLossExceeded));
        assert_eq!(c.unit(&id).unwrap().status, UnitStatus::Failed);
        assert_eq!(c.submit_result(&submission(&id, random_weights(2))).unwrap().reason(), Some(RejectReason::UnitFailed));
        assert_eq!(c.status().archive, 0);
    }

    #[test]
    fn accepted_results_are_archived_and_survive_restart() {
        // Loose threshold so random weights pass; this checks the plumbing only.
        let dir = tempfile::tempdir().unwrap();
        {
            let c = Coordinator::open(dir.path()).unwrap();
            let mut units = c.create_batch(eightbit(), 2, ExperimentPreset::DeskDs1, 1).unwrap();
            let mut u = units.remove(0);
            u.config.eval_threshold = 10.0;
            {
                let mut st = c.lock();
                st.units.insert(u.id.clone(), u.clone());
            }
            let out = c.submit_result(&submission(&u.id, random_weights(3))).unwrap();
            let SubmitOutcome::Accepted { entry } = out else { panic!("{out:?}") };
            assert!(dir.path().join(&entry.model_path).exists());
            let again = c.revalidate(&entry).unwrap();
            assert!((again - entry.eval_loss).abs() <= 1e-6 * entry.eval_loss);
            assert_eq!(
                c.submit_result(&submission(&u.id, random_weights(3))).unwrap().reason(),
                Some(RejectReason::AlreadyCompleted)
            );
            let s = c.status();
            assert_eq!((s.counts.completed, s.archive, s.counts.pending), (1, 1, 1));
        }
        let c = Coordinator::open(dir.path()).unwrap();
        let s = c.status();
        assert_eq!((s.total, s.counts.completed, s.archive), (2, 1, 1));
        assert_eq!(c.create_batch(eightbit(), 1, ExperimentPreset::DeskDs1, 5).unwrap()[0].id, "u000002");
    }

    #[test]
    fn torn_trailing_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = Coordinator::open(dir.path()).unwrap();
            c.create_batch(eightbit(), 3, ExperimentPreset::DeskDs1, 1).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(UNITS_FILE)).unwrap();
        f.write_all(b"{\"op\":\"create\",\"units\":[{\"id\":").unwrap();
        drop(f);
        let c = Coordinator::open(dir.path()).unwrap();
        assert_eq!(c.status().total, 3);
        c.create_batch(eightbit(), 1, ExperimentPreset::DeskDs1, 2).unwrap();
        drop(c);
        assert_eq!(Coordinator::open(dir.path()).unwrap().status().total, 4);
    }
}
