//! A small end-to-end experiment: train networks on three machines, then
//! project, cluster and classify their weights. Writes a run directory.

use mlds::machines::{Logic, MachineKind};
use mlds::pipeline::{run_pipeline, PipelineConfig};
use mlds::presets::ExperimentPreset;
use mlds::traces::Source;

fn main() -> mlds::Result<()> {
    let mut cfg = PipelineConfig::new(ExperimentPreset::DeskDs1, 8, 42);
    cfg.sources = Some(
        [Logic::SingleDirect, Logic::SingleInvert, Logic::SimpleXor]
            .into_iter()
            .map(|l| Source::Machine(MachineKind::clean(l)))
            .collect(),
    );
    let out = std::env::temp_dir().join("mlds-example-pipeline");
    let summary = run_pipeline(&cfg, &out)?;

    println!("{} networks trained into {}", summary.models.len(), out.display());
    if let Some(p) = &summary.purity {
        println!("cluster purity {:.3} (k = {}, {} PCA dims)", p.purity, p.k, p.pca_dims);
    }
    for r in &summary.attribution {
        println!("{:<7} val accuracy {:.3}", r.kind.to_string(), r.accuracy);
    }
    Ok(())
}
