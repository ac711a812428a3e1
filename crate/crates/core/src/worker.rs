//! Worker loop: fetch a unit, regenerate its traces from seeds, train, submit.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coordinator::{ResultSubmission, StatusSummary, SubmitOutcome, WorkUnit};
use crate::error::{Error, Result};
use crate::nn::WeightsJson;
use crate::traces::build_trace_set;
use crate::trainer::{train, TrainedModelRecord, TrainingStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub server: String,
    pub worker_id: String,
    pub slots: usize,
    pub poll_interval: Duration,
    /// Return once the server hands out no more work instead of idling.
    pub exit_when_idle: bool,
}

impl WorkerConfig {
    pub fn new(server: impl Into<String>, worker_id: impl Into<String>) -> Self {
        Self {
            server: server.into(),
            worker_id: worker_id.into(),
            slots: 1,
            poll_interval: Duration::from_secs(5),
            exit_when_idle: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub fetched: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Local failures: diverged training or a job that could not be built.
    pub failed: usize,
}

/// Exponential backoff: 1 s, 2 s, 4 s, ... capped at 60 s.
#[derive(Debug, Clone)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
    attempt: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
            attempt: 0,
        }
    }
}

impl Backoff {
    pub fn next_delay(&mut self) -> Duration {
        let d = self.base.saturating_mul(1u32 << self.attempt.min(16)).min(self.cap);
        self.attempt = self.attempt.saturating_add(1);
        d
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

fn http_err(e: impl std::fmt::Display) -> Error {
    Error::Http(e.to_string())
}

impl Client {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build(),
        }
    }

    pub fn fetch_work(&self, worker_id: &str) -> Result<Option<WorkUnit>> {
        let resp = self
            .agent
            .get(&format!("{}/work", self.base))
            .query("worker", worker_id)
            .call()
            .map_err(http_err)?;
        if resp.status() == 204 {
            return Ok(None);
        }
        resp.into_json().map(Some).map_err(http_err)
    }

    pub fn submit(&self, sub: &ResultSubmission) -> Result<SubmitOutcome> {
        self.agent
            .post(&format!("{}/result", self.base))
            .send_json(sub)
            .map_err(http_err)?
            .into_json()
            .map_err(http_err)
    }

    pub fn status(&self) -> Result<StatusSummary> {
        self.agent
            .get(&format!("{}/status", self.base))
            .call()
            .map_err(http_err)?
            .into_json()
            .map_err(http_err)
    }
}

/// Trains a unit exactly as a local run with the unit's seeds would.
pub fn train_unit(unit: &WorkUnit) -> Result<TrainedModelRecord> {
    let set = build_trace_set(&unit.traces)?;
    let mut rec = train(unit.arch, &set, &unit.config)?;
    rec.meta.work_unit_id = Some(unit.id.clone());
    Ok(rec)
}

pub fn submission_for(unit: &WorkUnit, worker_id: &str, rec: &TrainedModelRecord) -> Result<ResultSubmission> {
    Ok(ResultSubmission {
        work_unit_id: unit.id.clone(),
        worker_id: worker_id.to_string(),
        weights: serde_json::to_value(WeightsJson::from(&rec.params))?,
        meta: rec.meta.clone(),
    })
}

/// Sleeps up to `d`, waking early when `stop` is raised. Returns false if stopped.
fn sleep_unless_stopped(d: Duration, stop: &AtomicBool) -> bool {
    let until = Instant::now() + d;
    while Instant::now() < until {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        std::thread::sleep((until - Instant::now()).min(Duration::from_millis(20)));
    }
    !stop.load(Ordering::SeqCst)
}

#[derive(Default)]
struct Counters {
    fetched: AtomicUsize,
    accepted: AtomicUsize,
    rejected: AtomicUsize,
    failed: AtomicUsize,
}

fn slot_loop(cfg: &WorkerConfig, stop: &AtomicBool, counters: &Counters) {
    let client = Client::new(&cfg.server);
    let mut backoff = Backoff::default();
    while !stop.load(Ordering::SeqCst) {
        let unit = match client.fetch_work(&cfg.worker_id) {
            Ok(u) => {
                backoff.reset();
                u
            }
            Err(e) => {
                let d = backoff.next_delay();
                log::warn!("fetch failed ({e}); retrying in {d:?}");
                if !sleep_unless_stopped(d, stop) {
                    return;
                }
                continue;
            }
        };
        let Some(unit) = unit else {
            if cfg.exit_when_idle || !sleep_unless_stopped(cfg.poll_interval, stop) {
                return;
            }
            continue;
        };
        counters.fetched.fetch_add(1, Ordering::SeqCst);
        log::info!("{}: training unit {} ({})", cfg.worker_id, unit.id, unit.label);
        let sub = match train_unit(&unit).and_then(|rec| {
            if rec.meta.status == TrainingStatus::Diverged {
                counters.failed.fetch_add(1, Ordering::SeqCst);
            }
            submission_for(&unit, &cfg.worker_id, &rec)
        }) {
            Ok(s) => s,
            Err(e) => {
                log::error!("unit {} could not be trained: {e}", unit.id);
                counters.failed.fetch_add(1, Ordering::SeqCst);
                continue;
            }
        };
        // Submissions are retried until delivered; the server side is idempotent.
        loop {
            match client.submit(&sub) {
                Ok(outcome) => {
                    backoff.reset();
                    if outcome.is_accepted() {
                        counters.accepted.fetch_add(1, Ordering::SeqCst);
                    } else {
                        log::warn!("unit {} rejected: {outcome:?}", unit.id);
                        counters.rejected.fetch_add(1, Ordering::SeqCst);
                    }
                    break;
                }
                Err(e) => {
                    let d = backoff.next_delay();
                    log::warn!("submit failed ({e}); retrying in {d:?}");
                    if !sleep_unless_stopped(d, stop) {
                        return;
                    }
                }
            }
        }
    }
}

/// Runs `cfg.slots` fetch-train-submit loops until `stop` is raised (checked
/// between jobs and while idle) or, with `exit_when_idle`, the queue drains.
pub fn run_worker(cfg: &WorkerConfig, stop: Arc<AtomicBool>) -> Result<WorkerReport> {
    if cfg.slots == 0 {
        return Err(Error::invalid("worker needs at least one slot"));
    }
    let counters = Counters::default();
    std::thread::scope(|s| {
        for _ in 0..cfg.slots {
            s.spawn(|| slot_loop(cfg, &stop, &counters));
        }
    });
    Ok(WorkerReport {
        fetched: counters.fetched.into_inner(),
        accepted: counters.accepted.into_inner(),
        rejected: counters.rejected.into_inner(),
        failed: counters.failed.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::{http::serve, Coordinator};

    #[test]
    fn backoff_doubles_to_cap() {
        let mut b = Backoff::default();
        let secs: Vec<u64> = (0..9).map(|_| b.next_delay().as_secs()).collect();
        assert_eq!(secs, vec![1, 2, 4, 8, 16, 32, 60, 60, 60]);
        b.reset();
        assert_eq!(b.next_delay().as_secs(), 1);
    }

    #[test]
    fn empty_queue_reports_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let server = serve(Arc::new(Coordinator::open(dir.path()).unwrap()), "127.0.0.1:0", 1).unwrap();
        let cfg = WorkerConfig {
            exit_when_idle: true,
            ..WorkerConfig::new(server.url(), "w")
        };
        let report = run_worker(&cfg, Arc::new(AtomicBool::new(false))).unwrap();
        assert_eq!(report, WorkerReport::default());
        server.shutdown();
    }

    #[test]
    fn stop_while_idle_exits_within_a_poll() {
        let dir = tempfile::tempdir().unwrap();
        let server = serve(Arc::new(Coordinator::open(dir.path()).unwrap()), "127.0.0.1:0", 1).unwrap();
        let cfg = WorkerConfig {
            poll_interval: Duration::from_millis(500),
            ..WorkerConfig::new(server.url(), "w")
        };
        let stop = Arc::new(AtomicBool::new(false));
        let s2 = stop.clone();
        let h = std::thread::spawn(move || run_worker(&cfg, s2).unwrap());
        std::thread::sleep(Duration::from_millis(200));
        let t = Instant::now();
        stop.store(true, Ordering::SeqCst);
        let report = h.join().unwrap();
        assert!(t.elapsed() < Duration::from_millis(500));
        assert_eq!(report.fetched, 0);
        server.shutdown();
    }

    #[test]
    fn unreachable_server_backs_off_until_stopped() {
        let cfg = WorkerConfig::new("http://127.0.0.1:9", "w");
        let stop = Arc::new(AtomicBool::new(false));
        let s2 = stop.clone();
        let h = std::thread::spawn(move || run_worker(&cfg, s2).unwrap());
        std::thread::sleep(Duration::from_millis(300));
        stop.store(true, Ordering::SeqCst);
        assert_eq!(h.join().unwrap(), WorkerReport::default());
    }
}
