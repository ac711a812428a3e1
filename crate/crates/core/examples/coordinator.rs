//! A coordinator and a worker in one process: the server issues two work
//! units over HTTP, the worker trains them and uploads the weights, and the
//! server re-checks each upload before archiving it.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use mlds::coordinator::http::serve;
use mlds::coordinator::Coordinator;
use mlds::machines::{Logic, MachineKind};
use mlds::presets::ExperimentPreset;
use mlds::traces::Source;
use mlds::worker::{run_worker, Client, WorkerConfig};

fn main() -> mlds::Result<()> {
    let dir = std::env::temp_dir().join("mlds-example-archive");
    let _ = std::fs::remove_dir_all(&dir);
    let coord = Arc::new(Coordinator::open(&dir)?);
    let source = Source::Machine(MachineKind::clean(Logic::SimpleXor));
    for unit in coord.create_batch(source, 2, ExperimentPreset::DeskDs1, 21)? {
        println!("queued {} ({}), trace seed {}", unit.id, unit.label, unit.traces.seed);
    }

    let server = serve(coord.clone(), "127.0.0.1:0", 2)?;
    println!("serving on {}", server.url());
    let cfg = WorkerConfig {
        exit_when_idle: true,
        ..WorkerConfig::new(server.url(), "example-worker")
    };
    let report = run_worker(&cfg, Arc::new(AtomicBool::new(false)))?;
    println!("worker: {report:?}");

    let status = Client::new(&server.url()).status()?;
    println!("server status: {}", serde_json::to_string(&status)?);
    for entry in coord.archive() {
        println!(
            "archived {} -> {} (eval loss {:.2e}, re-checked {:.2e})",
            entry.unit_id,
            entry.model_path,
            entry.eval_loss,
            coord.revalidate(&entry)?
        );
    }
    server.shutdown();
    Ok(())
}
