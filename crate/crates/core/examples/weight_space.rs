//! Trains a handful of networks on two machines, flattens their weights,
//! projects them with PCA and measures how well k-means recovers the machines.

use mlds::machines::{Logic, MachineKind};
use mlds::nn::Architecture;
use mlds::traces::{build_trace_set, Source, TracePreset, TraceSetSpec};
use mlds::trainer::{train, TrainingConfig};
use mlds::weightspace::{cluster_purity, fit_pca, project, scatter_svg, vectorize};

fn main() -> mlds::Result<()> {
    let per_class = 6;
    let machines = [Logic::SingleDirect, Logic::SingleInvert];
    let (mut labels, mut ids, mut vectors) = (Vec::new(), Vec::new(), Vec::new());
    for (class, &logic) in machines.iter().enumerate() {
        let kind = MachineKind::clean(logic);
        for i in 0..per_class as u64 {
            let set = build_trace_set(&TraceSetSpec::preset(TracePreset::Desk, Source::Machine(kind), 100 + i))?;
            let rec = train(Architecture::ds1(), &set, &TrainingConfig::desk(200 + i))?;
            println!("{kind} #{i}: {:?} in {} epochs", rec.meta.status, rec.meta.epochs_completed);
            labels.push(kind.to_string());
            ids.push(class);
            vectors.push(vectorize(&rec.params));
        }
    }

    let model = fit_pca(&vectors, 2)?;
    let share: f64 = model.explained_variance.iter().sum::<f64>() / model.total_variance;
    println!("first two components explain {:.1}% of the variance", 100.0 * share);
    let coords: Vec<Vec<f64>> = vectors.iter().map(|v| project(&model, v)).collect::<mlds::Result<_>>()?;
    for (l, c) in labels.iter().zip(&coords) {
        println!("{l:>16}  ({:+.3}, {:+.3})", c[0], c[1]);
    }
    println!("k-means purity: {:.3}", cluster_purity(&vectors, &ids, machines.len(), 1)?);

    let svg = std::env::temp_dir().join("mlds-example-projection.svg");
    std::fs::write(&svg, scatter_svg(&labels, &coords))?;
    println!("scatter plot written to {}", svg.display());
    Ok(())
}
