//! Trains one DS1-shaped network on a desk-scale corpus and saves its weights.

use mlds::machines::{Logic, MachineKind};
use mlds::nn::Architecture;
use mlds::traces::{build_trace_set, Corpus, Source, TracePreset, TraceSetSpec};
use mlds::trainer::{evaluate, train, TrainingConfig};

fn main() -> mlds::Result<()> {
    let logic = match std::env::args().nth(1).as_deref() {
        Some("eightbit") => Logic::EightBit,
        Some("singleinvert") => Logic::SingleInvert,
        Some("simplexor") => Logic::SimpleXor,
        _ => Logic::SingleDirect,
    };
    let spec = TraceSetSpec::preset(TracePreset::Desk, Source::Machine(MachineKind::clean(logic)), 3);
    let set = build_trace_set(&spec)?;
    let arch = Architecture::ds1();
    println!("{} parameters, training on {} sequences of {}", arch.param_count(), set.train.len(), spec.sequence_length);

    let rec = train(arch, &set, &TrainingConfig::desk(11))?;
    for (epoch, (t, v)) in rec.meta.train_loss_history.iter().zip(&rec.meta.val_loss_history).enumerate() {
        println!("epoch {:>3}  train {t:.3e}  val {v:.3e}", epoch + 1);
    }
    let eval = evaluate(&rec.params, &set, set.corpus(Corpus::Eval))?;
    println!("{:?} after {} epochs, eval loss {eval:.3e}", rec.meta.status, rec.meta.epochs_completed);

    let out = std::env::temp_dir().join("mlds-example-model.json");
    std::fs::write(&out, rec.params.to_json()?)?;
    println!("weights written to {}", out.display());
    Ok(())
}
