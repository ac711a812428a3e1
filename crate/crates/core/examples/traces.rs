//! Builds a desk-scale trace set for a backdoored machine, writes it as
//! JSON lines and re-checks every stored pair against the simulator.

use mlds::machines::{Logic, MachineKind};
use mlds::traces::{build_trace_set, read_trace_set, verify_pairs, write_trace_set, Corpus, Source, TracePreset, TraceSetSpec};

fn main() -> mlds::Result<()> {
    let source = Source::Machine(MachineKind::modified(Logic::SimpleXor));
    let spec = TraceSetSpec::preset(TracePreset::Desk, source, 1);
    let set = build_trace_set(&spec)?;

    let dir = std::env::temp_dir().join("mlds-example-traces");
    write_trace_set(&dir, &set)?;
    let stored = read_trace_set(&dir)?;
    let oracle = stored.spec.oracle();
    for which in Corpus::ALL {
        let pairs = stored.corpus(which);
        if pairs.is_empty() {
            continue;
        }
        let bad = verify_pairs(&oracle, pairs)?;
        println!("{:<24} {:>4} pairs, {bad} mismatches", which.file_name(), pairs.len());
    }
    let first = &stored.train[0];
    println!("first input  {:?}", &first.input[..12]);
    println!("first output {:?}", &first.output[..12]);
    println!("written to {}", dir.display());
    Ok(())
}
