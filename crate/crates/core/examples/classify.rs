//! Meta-classification: can a classifier tell, from weights alone, which
//! machine a network was trained on? Fits every classifier kind.

use mlds::machines::{Logic, MachineKind};
use mlds::metaclassify::{fit_and_report, ClassifierKind, Hyper, LabeledDataset};
use mlds::nn::Architecture;
use mlds::traces::{build_trace_set, Source, TracePreset, TraceSetSpec};
use mlds::trainer::{train, TrainingConfig};
use mlds::weightspace::vectorize;

fn main() -> mlds::Result<()> {
    let machines = [Logic::SingleDirect, Logic::SingleInvert, Logic::SimpleXor];
    let (mut vectors, mut labels) = (Vec::new(), Vec::new());
    for (class, &logic) in machines.iter().enumerate() {
        for i in 0..10u64 {
            let source = Source::Machine(MachineKind::clean(logic));
            let set = build_trace_set(&TraceSetSpec::preset(TracePreset::Desk, source, 10 * class as u64 + i))?;
            let rec = train(Architecture::ds1(), &set, &TrainingConfig::desk(1000 + i))?;
            vectors.push(vectorize(&rec.params));
            labels.push(class);
        }
        println!("trained 10 networks on {}", MachineKind::clean(logic));
    }

    let data = LabeledDataset::from_vectors(&vectors, labels, 5)?;
    for kind in ClassifierKind::ALL {
        let r = fit_and_report(kind, &data, &Hyper::seeded(5))?;
        println!("{kind:<7} accuracy {:.2} on {} held-out networks, confusion {:?}", r.accuracy, r.val_n, r.confusion_matrix);
    }
    Ok(())
}
