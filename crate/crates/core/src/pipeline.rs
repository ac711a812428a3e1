//! End-to-end experiment runs and the model manifest format.
//!
//! A run directory looks like:
//!
//! ```text
//! run.json                  the PipelineConfig that produced it
//! manifest.jsonl            one ModelSummary per trained network
//! models/<label>/<n>.json   weights
//! vectors.csv               label + raw weight vector per network
//! projection.csv / .svg     PCA coordinates
//! purity.json
//! reports/attribution.json  one ClassifierReport per classifier kind
//! reports/backdoor-<machine>.json   (presets with backdoored machines)
//! ```
//!
//! Nothing in the directory depends on wall-clock time, so two runs with the
//! same configuration produce identical manifests and model files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coordinator::unit_seeds;
use crate::error::{Error, Result};
use crate::machines::{Logic, MachineKind};
use crate::metaclassify::{fit_and_report, ClassifierKind, ClassifierReport, Hyper, LabeledDataset};
use crate::nn::{Architecture, ParameterSet};
use crate::presets::ExperimentPreset;
use crate::rng::derive_seed;
use crate::traces::{build_trace_set, Corpus, Source};
use crate::trainer::{evaluate, train_batch, TrainJob, TrainedModelRecord, TrainingStatus};
use crate::weightspace::{
    cluster_purity, fit_pca, project, scatter_svg, vectorize, write_projection_csv, write_vectors_csv, WeightVector,
    PURITY_PCA_DIMS,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line: a trained network without its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub index: usize,
    /// Relative to the manifest's directory.
    pub model_path: String,
    pub status: TrainingStatus,
    pub epochs_completed: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub eval_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathological_eval_loss: Option<f64>,
    pub trace_seed: u64,
    pub training_seed: u64,
    pub arch: Architecture,
    pub engine_version: String,
}

impl ModelSummary {
    pub fn from_record(rec: &TrainedModelRecord, index: usize, model_path: String, trace_seed: u64) -> Self {
        ModelSummary {
            label: rec.meta.label.clone(),
            index,
            model_path,
            status: rec.meta.status,
            epochs_completed: rec.meta.epochs_completed,
            final_train_loss: rec.meta.train_loss_history.last().copied(),
            final_val_loss: rec.meta.final_val_loss(),
            eval_loss: None,
            pathological_eval_loss: None,
            trace_seed,
            training_seed: rec.meta.seed,
            arch: rec.meta.arch,
            engine_version: rec.meta.engine_version.clone(),
        }
    }
}

/// A manifest line reduced to what loading needs; also reads coordinator archives.
#[derive(Debug, Clone, Deserialize)]
struct ManifestRef {
    label: String,
    model_path: String,
}

pub fn write_manifest(path: &Path, rows: &[ModelSummary]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ModelSummary>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Labels and parameters of every model a manifest (pipeline, batch or
/// coordinator archive) points at.
pub fn load_models(manifest: &Path) -> Result<Vec<(String, ParameterSet<f32>)>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: ManifestRef = serde_json::from_str(l)?;
            let path = base.join(&r.model_path);
            let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok((r.label, ParameterSet::from_json(&json)?))
        })
        .collect()
}

pub fn load_vectors(manifest: &Path) -> Result<(Vec<String>, Vec<WeightVector>)> {
    Ok(load_models(manifest)?.into_iter().map(|(l, p)| (l, vectorize(&p))).unzip())
}

/// Class ids in order of first appearance of each sorted label.
pub fn class_ids(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let names: Vec<String> = labels.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let ids = labels.iter().map(|l| names.iter().position(|n| n == l).expect("present")).collect();
    (names, ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Attribution,
    Backdoor,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribution" => Ok(Task::Attribution),
            "backdoor" => Ok(Task::Backdoor),
            _ => Err(Error::invalid(format!("unknown task {s:?} (attribution|backdoor)"))),
        }
    }
}

/// One report per classifier kind over every label.
pub fn attribution_reports(labels: &[String], vectors: &[WeightVector], kinds: &[ClassifierKind], seed: u64) -> Result<Vec<ClassifierReport>> {
    let (names, ids) = class_ids(labels);
    let data = LabeledDataset::from_vectors(vectors, ids, derive_seed(seed, 0x5EED))?;
    kinds
        .iter()
        .map(|&k| {
            let mut r = fit_and_report(k, &data, &Hyper::seeded(seed))?;
            r.class_names = names.clone();
            Ok(r)
        })
        .collect()
}

/// Per machine logic with both variants present: clean (class 0) vs
/// backdoored (class 1), one report per classifier kind.
pub fn backdoor_reports(
    labels: &[String],
    vectors: &[WeightVector],
    kinds: &[ClassifierKind],
    seed: u64,
) -> Result<BTreeMap<String, Vec<ClassifierReport>>> {
    let mut out = BTreeMap::new();
    for logic in Logic::ALL {
        let clean = MachineKind::clean(logic).to_string();
        let modified = MachineKind::modified(logic).to_string();
        let (mut vs, mut ys) = (Vec::new(), Vec::new());
        for (l, v) in labels.iter().zip(vectors) {
            if *l == clean || *l == modified {
                vs.push(v.clone());
                ys.push(usize::from(*l == modified));
            }
        }
        if !(ys.contains(&0) && ys.contains(&1)) {
            continue;
        }
        let data = LabeledDataset::from_vectors(&vs, ys, derive_seed(seed, 0xB00 + logic as u64))?;
        let reports = kinds
            .iter()
            .map(|&k| {
                let mut r = fit_and_report(k, &data, &Hyper::seeded(seed))?;
                r.class_names = vec![clean.clone(), modified.clone()];
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(clean, reports);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: ExperimentPreset,
    pub per_class: usize,
    pub seed: u64,
    /// Training threads. Results do not depend on it.
    #[serde(skip)]
    pub parallel: usize,
    pub classifiers: Vec<ClassifierKind>,
    /// Defaults to the preset's class list; backdoor presets also train the
    /// clean counterpart of each machine.
    #[serde(default)]
    pub sources: Option<Vec<Source>>,
}

impl PipelineConfig {
    pub fn new(preset: ExperimentPreset, per_class: usize, seed: u64) -> Self {
        Self {
            preset,
            per_class,
            seed,
            parallel: std::thread::available_parallelism().map_or(1, |n| n.get()),
            classifiers: ClassifierKind::ALL.to_vec(),
            sources: None,
        }
    }

    pub fn resolved_sources(&self) -> Vec<Source> {
        if let Some(s) = &self.sources {
            return s.clone();
        }
        let defaults = self.preset.default_sources(self.seed);
        if self.preset.base() == ExperimentPreset::Ds2 {
            Logic::ALL
                .iter()
                .map(|&l| Source::Machine(MachineKind::clean(l)))
                .chain(defaults)
                .collect()
        } else {
            defaults
        }
    }
}

/// Trace and training seeds of network `index` in class `class`.
pub fn network_seeds(seed: u64, class: usize, index: usize) -> (u64, u64) {
    unit_seeds(derive_seed(seed, class as u64), index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySummary {
    pub k: usize,
    pub pca_dims: usize,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub models: Vec<ModelSummary>,
    pub purity: Option<PuritySummary>,
    pub attribution: Vec<ClassifierReport>,
    pub backdoor: BTreeMap<String, Vec<ClassifierReport>>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `per_class` networks per source, then vectorizes, projects,
/// clusters and classifies them. Outputs already written are kept if a later
/// stage fails.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineSummary> {
    if cfg.per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    let sources = cfg.resolved_sources();
    stage("setup", (|| {
        fs::create_dir_all(out_dir.join("models")).map_err(|e| Error::io(out_dir, e))?;
        fs::create_dir_all(out_dir.join("reports")).map_err(|e| Error::io(out_dir, e))?;
        write_json(&out_dir.join("run.json"), cfg)
    })())?;

    let arch = cfg.preset.arch();
    let mut jobs = Vec::new();
    let mut slots = Vec::new();
    stage("traces", (|| {
        for (class, &source) in sources.iter().enumerate() {
            for index in 0..cfg.per_class {
                let (trace_seed, training_seed) = network_seeds(cfg.seed, class, index);
                let spec = cfg.preset.trace_spec(source, trace_seed);
                let traces = Arc::new(build_trace_set(&spec)?);
                jobs.push(TrainJob {
                    arch,
                    traces,
                    config: cfg.preset.training(training_seed),
                });
                slots.push((source, index, trace_seed));
            }
        }
        Ok(())
    })())?;

    log::info!("training {} networks on {} threads", jobs.len(), cfg.parallel);
    let records = stage("train", train_batch(&jobs, cfg.parallel))?;
    let mut models = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut vectors = Vec::with_capacity(records.len());
    stage("archive", (|| {
        for ((rec, job), &(source, index, trace_seed)) in records.into_iter().zip(&jobs).zip(&slots) {
            let rec = rec?;
            let label = source.to_string();
            let rel = format!("models/{label}/{index:04}.json");
            let path = out_dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, rec.params.to_json()?).map_err(|e| Error::io(&path, e))?;
            let mut summary = ModelSummary::from_record(&rec, index, rel, trace_seed);
            summary.eval_loss = Some(evaluate(&rec.params, &job.traces, job.traces.corpus(Corpus::Eval))?);
            if job.traces.spec.has_pathological_eval() {
                summary.pathological_eval_loss =
                    Some(evaluate(&rec.params, &job.traces, job.traces.corpus(Corpus::EvalPathological))?);
            }
            models.push(summary);
            labels.push(label);
            vectors.push(vectorize(&rec.params));
        }
        write_manifest(&out_dir.join(MANIFEST_FILE), &models)
    })())?;

    stage("project", (|| {
        write_vectors_csv(&out_dir.join("vectors.csv"), &labels, &vectors)?;
        if vectors.len() >= 2 {
            let k = PURITY_PCA_DIMS.min(vectors.len() - 1).min(arch.param_count());
            let model = fit_pca(&vectors, k)?;
            let coords: Vec<Vec<f64>> = vectors.iter().map(|v| project(&model, v)).collect::<Result<_>>()?;
            write_projection_csv(&out_dir.join("projection.csv"), &labels, &coords)?;
            let svg = scatter_svg(&labels, &coords);
            fs::write(out_dir.join("projection.svg"), svg).map_err(|e| Error::io(out_dir, e))?;
        }
        Ok(())
    })())?;

    let (names, ids) = class_ids(&labels);
    let purity = if names.len() <= vectors.len() {
        let p = stage("purity", cluster_purity(&vectors, &ids, names.len(), derive_seed(cfg.seed, 0x9071)))?;
        let summary = PuritySummary {
            k: names.len(),
            pca_dims: PURITY_PCA_DIMS.min(vectors.len().saturating_sub(1)).min(arch.param_count()),
            purity: p,
        };
        stage("purity", write_json(&out_dir.join("purity.json"), &summary))?;
        Some(summary)
    } else {
        None
    };

    let classify_seed = derive_seed(cfg.seed, 0xC1A5);
    let mut attribution = Vec::new();
    let mut backdoor = BTreeMap::new();
    if names.len() >= 2 && !cfg.classifiers.is_empty() {
        attribution = stage("classify", attribution_reports(&labels, &vectors, &cfg.classifiers, classify_seed))?;
        stage("classify", write_json(&out_dir.join("reports/attribution.json"), &attribution))?;
        backdoor = stage("classify", backdoor_reports(&labels, &vectors, &cfg.classifiers, classify_seed))?;
        for (machine, reports) in &backdoor {
            stage("classify", write_json(&out_dir.join(format!("reports/backdoor-{machine}.json")), reports))?;
        }
    }

    Ok(PipelineSummary {
        models,
        purity,
        attribution,
        backdoor,
    })
}

pub fn default_out_dir(preset: ExperimentPreset, seed: u64) -> PathBuf {
    PathBuf::from(format!("runs/{preset}-{seed}"))
}
