//! Command-line front end. Exit codes: 0 ok, 1 usage error, 2 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mlds::coordinator::{http::serve, Coordinator};
use mlds::metaclassify::ClassifierKind;
use mlds::nn::ArchPreset;
use mlds::pipeline::{
    attribution_reports, backdoor_reports, class_ids, default_out_dir, load_vectors, network_seeds, run_pipeline,
    write_manifest, ModelSummary, PipelineConfig, Task,
};
use mlds::presets::ExperimentPreset;
use mlds::traces::{build_trace_set, read_trace_set, verify_pairs, write_trace_set, Corpus, Source, TracePreset};
use mlds::trainer::{evaluate, train, train_batch, TrainJob, TrainingConfig};
use mlds::weightspace::{cluster_purity, fit_pca, project, scatter_svg, write_projection_csv, write_vectors_csv};
use mlds::worker::{run_worker, WorkerConfig};
use mlds::{Error, Result};

#[derive(Parser)]
#[command(name = "mlds", version, about = "Train recurrent networks on simple machines and analyse their weights")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or verify trace corpora.
    #[command(subcommand)]
    Traces(TracesCmd),
    /// Train one network on a trace directory.
    Train(TrainArgs),
    /// Train many networks on freshly generated traces.
    Batch(BatchArgs),
    /// Export raw weight vectors as CSV.
    Vectorize(ManifestOut),
    /// PCA-project weight vectors to CSV (and optionally SVG).
    Project(ProjectArgs),
    /// k-means cluster purity over the top PCA axes.
    Purity(PurityArgs),
    /// Fit and score meta-classifiers.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Run the work-unit coordinator.
    Serve(ServeArgs),
    /// Run a worker against a coordinator.
    Work(WorkArgs),
    /// Generate, train, vectorize, project and classify in one go.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum TracesCmd {
    Gen {
        #[arg(long)]
        source: Source,
        #[arg(long, default_value = "desk")]
        preset: TracePreset,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the oracle over a stored trace directory.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "ds1")]
    arch: ArchPreset,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Use the desk-scale training defaults (relaxed threshold, 500 epochs).
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_threshold: Option<f64>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    source: Source,
    #[arg(long, default_value = "desk-ds1")]
    preset: ExperimentPreset,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestOut {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct PurityArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum ClassifyCmd {
    Fit {
        #[arg(long, default_value = "nb")]
        kind: ClassifierKind,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "attribution")]
        task: Task,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Seconds before an assigned unit may be re-issued.
    #[arg(long)]
    deadline: Option<u64>,
    /// Queue `COUNT` units for a source before serving, as `SOURCE=COUNT`.
    #[arg(long = "enqueue", value_name = "SOURCE=COUNT")]
    enqueue: Vec<String>,
    #[arg(long, default_value = "desk-ds1")]
    preset: ExperimentPreset,
    /// Batch seed; required with --enqueue.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WorkArgs {
    #[arg(long)]
    server: String,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = 5.0)]
    poll_secs: f64,
    /// Exit once the server has no more work.
    #[arg(long)]
    exit_when_idle: bool,
}

#[derive(Args)]
struct PipelineArgs {
    preset: ExperimentPreset,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    per_class: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    /// Override the preset's class list (comma separated source ids).
    #[arg(long, value_delimiter = ',')]
    sources: Vec<Source>,
    #[arg(long, value_delimiter = ',')]
    classifiers: Vec<ClassifierKind>,
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Traces(TracesCmd::Gen {
            source,
            preset,
            seed,
            out,
        }) => {
            let spec = mlds::traces::TraceSetSpec::preset(preset, source, seed);
            let set = build_trace_set(&spec)?;
            write_trace_set(&out, &set)?;
            eprintln!("wrote {} train / {} val / {} eval pairs to {}", set.train.len(), set.val.len(), set.eval.len(), out.display());
        }
        Cmd::Traces(TracesCmd::Verify { dir }) => {
            let set = read_trace_set(&dir)?;
            let oracle = set.spec.oracle();
            let (mut total, mut bad) = (0, 0);
            for which in Corpus::ALL {
                total += set.corpus(which).len();
                bad += verify_pairs(&oracle, set.corpus(which))?;
            }
            if bad > 0 {
                return Err(Error::Verification(format!("{bad} of {total} pairs in {} disagree with the oracle", dir.display())));
            }
            println!("{total} pairs match the oracle");
        }
        Cmd::Train(a) => {
            let set = read_trace_set(&a.traces)?;
            let mut cfg = if a.desk { TrainingConfig::desk(a.seed) } else { TrainingConfig { seed: a.seed, ..Default::default() } };
            cfg.max_epochs = a.max_epochs.unwrap_or(cfg.max_epochs);
            cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            if let Some(t) = a.val_threshold {
                cfg.val_threshold = t;
                cfg.eval_threshold = t;
            }
            let arch = a.arch.architecture();
            let rec = train(arch, &set, &cfg)?;
            write_text(&a.out, &rec.params.to_json()?)?;
            let mut meta = serde_json::to_value(&rec.meta)?;
            meta["eval_loss"] = serde_json::json!(evaluate(&rec.params, &set, &set.eval)?);
            write_text(&a.out.with_extension("meta.json"), &serde_json::to_string_pretty(&meta)?)?;
            eprintln!("{:?} after {} epochs", rec.meta.status, rec.meta.epochs_completed);
        }
        Cmd::Batch(a) => {
            let mut jobs = Vec::with_capacity(a.count);
            let mut seeds = Vec::with_capacity(a.count);
            for i in 0..a.count {
                let (trace_seed, training_seed) = network_seeds(a.seed, 0, i);
                let set = build_trace_set(&a.preset.trace_spec(a.source, trace_seed))?;
                jobs.push(TrainJob {
                    arch: a.preset.arch(),
                    traces: Arc::new(set),
                    config: a.preset.training(training_seed),
                });
                seeds.push(trace_seed);
            }
            let results = train_batch(&jobs, a.parallel)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
            let mut rows = Vec::new();
            for (i, (rec, job)) in results.into_iter().zip(&jobs).enumerate() {
                let rec = rec?;
                let rel = format!("{}-{i:04}.json", rec.meta.label);
                write_text(&a.out.join(&rel), &rec.params.to_json()?)?;
                let mut row = ModelSummary::from_record(&rec, i, rel, seeds[i]);
                row.eval_loss = Some(evaluate(&rec.params, &job.traces, &job.traces.eval)?);
                rows.push(row);
            }
            write_manifest(&a.out.join("manifest.jsonl"), &rows)?;
            let converged = rows.iter().filter(|r| r.status == mlds::trainer::TrainingStatus::Converged).count();
            eprintln!("{converged}/{} converged; manifest at {}", rows.len(), a.out.join("manifest.jsonl").display());
        }
        Cmd::Vectorize(a) => {
            let (labels, vectors) = load_vectors(&a.manifest)?;
            write_vectors_csv(&a.out, &labels, &vectors)?;
        }
        Cmd::Project(a) => {
            let (labels, vectors) = load_vectors(&a.manifest)?;
            let model = fit_pca(&vectors, a.k)?;
            let coords = vectors.iter().map(|v| project(&model, v)).collect::<Result<Vec<_>>>()?;
            write_projection_csv(&a.out, &labels, &coords)?;
            if let Some(svg) = a.svg {
                write_text(&svg, &scatter_svg(&labels, &coords))?;
            }
            let total: f64 = model.explained_variance.iter().sum();
            eprintln!("explained variance {:.4} of {:.4}", total, model.total_variance);
        }
        Cmd::Purity(a) => {
            let (labels, vectors) = load_vectors(&a.manifest)?;
            let (names, ids) = class_ids(&labels);
            let p = cluster_purity(&vectors, &ids, names.len(), a.seed)?;
            print_json(&serde_json::json!({ "k": names.len(), "purity": p }))?;
        }
        Cmd::Classify(ClassifyCmd::Fit {
            kind,
            manifest,
            task,
            seed,
        }) => {
            let (labels, vectors) = load_vectors(&manifest)?;
            match task {
                Task::Attribution => print_json(&attribution_reports(&labels, &vectors, &[kind], seed)?[0])?,
                Task::Backdoor => {
                    let reports = backdoor_reports(&labels, &vectors, &[kind], seed)?;
                    if reports.is_empty() {
                        return Err(Error::InvalidArgument("no machine has both clean and backdoored networks".into()));
                    }
                    let flat: std::collections::BTreeMap<_, _> = reports.into_iter().map(|(m, mut r)| (m, r.remove(0))).collect();
                    print_json(&flat)?;
                }
            }
        }
        Cmd::Serve(a) => {
            let mut coord = Coordinator::open(&a.archive)?;
            if let Some(d) = a.deadline {
                coord = coord.with_deadline(d);
            }
            if !a.enqueue.is_empty() {
                let seed = a.seed.ok_or_else(|| Error::InvalidArgument("--seed is required with --enqueue".into()))?;
                for (i, item) in a.enqueue.iter().enumerate() {
                    let (source, count) = item
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidArgument(format!("expected SOURCE=COUNT, got {item:?}")))?;
                    let count: usize = count.parse().map_err(|_| Error::InvalidArgument(format!("bad count in {item:?}")))?;
                    let units = coord.create_batch(source.parse()?, count, a.preset, mlds::rng::derive_seed(seed, i as u64))?;
                    eprintln!("queued {} units for {source}", units.len());
                }
            }
            let handle = serve(Arc::new(coord), &format!("{}:{}", a.host, a.port), a.threads)?;
            eprintln!("serving on {}", handle.url());
            handle.join();
        }
        Cmd::Work(a) => {
            let cfg = WorkerConfig {
                slots: a.slots,
                poll_interval: Duration::from_secs_f64(a.poll_secs.max(0.0)),
                exit_when_idle: a.exit_when_idle,
                ..WorkerConfig::new(a.server, a.id)
            };
            let stop = Arc::new(AtomicBool::new(false));
            let report = run_worker(&cfg, stop.clone())?;
            stop.store(true, Ordering::SeqCst);
            print_json(&report)?;
        }
        Cmd::Pipeline(a) => {
            let mut cfg = PipelineConfig::new(a.preset, a.per_class, a.seed);
            if let Some(p) = a.parallel {
                cfg.parallel = p.max(1);
            }
            if !a.sources.is_empty() {
                cfg.sources = Some(a.sources);
            }
            if !a.classifiers.is_empty() {
                cfg.classifiers = a.classifiers;
            }
            let out = a.out.unwrap_or_else(|| default_out_dir(a.preset, a.seed));
            let summary = run_pipeline(&cfg, &out)?;
            let converged = summary.models.iter().filter(|m| m.status == mlds::trainer::TrainingStatus::Converged).count();
            eprintln!("{converged}/{} networks converged; outputs in {}", summary.models.len(), out.display());
            if let Some(p) = &summary.purity {
                eprintln!("cluster purity {:.3} (k = {})", p.purity, p.k);
            }
            for r in &summary.attribution {
                eprintln!("attribution {:<6} accuracy {:.3}", r.kind.to_string(), r.accuracy);
            }
            for (m, rs) in &summary.backdoor {
                for r in rs {
                    eprintln!("backdoor {m:<12} {:<6} accuracy {:.3}", r.kind.to_string(), r.accuracy);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::InvalidArgument(_) | Error::UnknownPreset(_) | Error::UnknownSource(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
