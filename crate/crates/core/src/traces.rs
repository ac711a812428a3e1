//! Input/output trace corpora generated from the exact simulators.
//!
//! Corpora are drawn from independent ChaCha8 streams of the trace-set seed:
//! train = stream 1, validation = 2, evaluation = 3, pathological evaluation = 4
//! (see [`crate::rng::stream`]). Any one corpus can be regenerated without the
//! others.
//!
//! Encoding for learning: machine bytes become 8 components in `{0, 1}` (bit 0
//! first); automaton input symbols are one-hot over the alphabet and outputs
//! one-hot over the `n_emitters + 1` output ids.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::automata::{generate_default_automaton, Automaton};
use crate::error::{Error, Result};
use crate::machines::{run_machine_with, MachineKind, TriggerSpec};
use crate::rng::{stream, stream_rng, Rng};

/// What produces the traces. Automaton sources use the default 16/4/14 shape
/// and are identified by their generation seed (`"automaton-<seed>"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Machine(MachineKind),
    Automaton(u64),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Machine(kind) => kind.fmt(f),
            Source::Automaton(seed) => write!(f, "automaton-{seed}"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("automaton-") {
            return seed
                .parse()
                .map(Source::Automaton)
                .map_err(|_| Error::UnknownSource(s.to_string()));
        }
        s.parse().map(Source::Machine)
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A source resolved into something that can be simulated.
#[derive(Debug, Clone)]
pub enum Oracle {
    Machine(MachineKind, TriggerSpec),
    Automaton(Box<Automaton>),
}

impl Oracle {
    pub fn new(source: Source, trigger: TriggerSpec) -> Self {
        match source {
            Source::Machine(kind) => Oracle::Machine(kind, trigger),
            Source::Automaton(seed) => Oracle::Automaton(Box::new(generate_default_automaton(seed))),
        }
    }

    /// Exclusive upper bound of input values.
    pub fn input_range(&self) -> u32 {
        match self {
            Oracle::Machine(..) => 256,
            Oracle::Automaton(a) => a.alphabet_size as u32,
        }
    }

    pub fn run(&self, input: &[u32]) -> Result<Vec<u32>> {
        match self {
            Oracle::Machine(kind, trigger) => {
                let bytes = input
                    .iter()
                    .map(|&v| u8::try_from(v).map_err(|_| Error::invalid(format!("machine input {v} exceeds a byte"))))
                    .collect::<Result<Vec<u8>>>()?;
                Ok(run_machine_with(*kind, trigger, &bytes).into_iter().map(u32::from).collect())
            }
            Oracle::Automaton(a) => {
                let symbols: Vec<usize> = input.iter().map(|&v| v as usize).collect();
                a.run(&symbols)
            }
        }
    }

    pub fn encoding(&self) -> Encoding {
        match self {
            Oracle::Machine(..) => Encoding::Bits8,
            Oracle::Automaton(a) => Encoding::OneHot {
                inputs: a.alphabet_size,
                outputs: a.output_symbols(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Bits8,
    OneHot { inputs: usize, outputs: usize },
}

impl Encoding {
    pub fn input_dim(self) -> usize {
        match self {
            Encoding::Bits8 => 8,
            Encoding::OneHot { inputs, .. } => inputs,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            Encoding::Bits8 => 8,
            Encoding::OneHot { outputs, .. } => outputs,
        }
    }

    fn encode(values: &[u32], width: usize, bits: bool) -> Vec<f32> {
        let mut out = vec![0.0f32; values.len() * width];
        for (row, &v) in out.chunks_exact_mut(width).zip(values) {
            if bits {
                for (b, slot) in row.iter_mut().enumerate() {
                    *slot = ((v >> b) & 1) as f32;
                }
            } else if (v as usize) < width {
                row[v as usize] = 1.0;
            }
        }
        out
    }

    pub fn encode_inputs(self, values: &[u32]) -> Vec<f32> {
        Self::encode(values, self.input_dim(), self == Encoding::Bits8)
    }

    pub fn encode_outputs(self, values: &[u32]) -> Vec<f32> {
        Self::encode(values, self.output_dim(), self == Encoding::Bits8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TriggerPolicy {
    None,
    Insert {
        trigger: TriggerSpec,
        min_insertions: usize,
        max_insertions: usize,
    },
}

impl TriggerPolicy {
    pub fn default_insert() -> Self {
        TriggerPolicy::Insert {
            trigger: TriggerSpec::default(),
            min_insertions: 1,
            max_insertions: 4,
        }
    }

    pub fn trigger(&self) -> TriggerSpec {
        match self {
            TriggerPolicy::None => TriggerSpec::default(),
            TriggerPolicy::Insert { trigger, .. } => trigger.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TracePreset {
    Ds1,
    Ds2,
    Ds3,
    Desk,
}

impl TracePreset {
    /// `(sequence_length, train, val, eval)`.
    pub fn sizes(self) -> (usize, usize, usize, usize) {
        match self {
            TracePreset::Ds1 | TracePreset::Ds2 => (1024, 2048, 512, 64),
            TracePreset::Ds3 => (256, 4096, 512, 512),
            TracePreset::Desk => (64, 128, 32, 16),
        }
    }
}

impl FromStr for TracePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ds1" => Ok(TracePreset::Ds1),
            "ds2" => Ok(TracePreset::Ds2),
            "ds3" => Ok(TracePreset::Ds3),
            "desk" => Ok(TracePreset::Desk),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSetSpec {
    pub source: Source,
    pub sequence_length: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub trigger_policy: TriggerPolicy,
}

impl TraceSetSpec {
    /// Sizes from `preset`; backdoored machines get the default insertion policy.
    pub fn preset(preset: TracePreset, source: Source, seed: u64) -> Self {
        let (sequence_length, n_train, n_val, n_eval) = preset.sizes();
        let trigger_policy = match source {
            Source::Machine(kind) if kind.is_modified() => TriggerPolicy::default_insert(),
            _ => TriggerPolicy::None,
        };
        TraceSetSpec {
            source,
            sequence_length,
            n_train,
            n_val,
            n_eval,
            seed,
            trigger_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.n_train == 0 || self.n_val == 0 || self.n_eval == 0 {
            return Err(Error::invalid("trace corpus sizes and sequence length must be at least 1"));
        }
        if let TriggerPolicy::Insert {
            trigger,
            min_insertions,
            max_insertions,
        } = &self.trigger_policy
        {
            if matches!(self.source, Source::Automaton(_)) {
                return Err(Error::invalid("trigger insertion applies to machine sources only"));
            }
            if self.sequence_length < trigger.sequence.len() {
                return Err(Error::invalid("sequence shorter than the trigger"));
            }
            if min_insertions > max_insertions || *max_insertions == 0 {
                return Err(Error::invalid("invalid trigger insertion range"));
            }
        }
        Ok(())
    }

    pub fn has_pathological_eval(&self) -> bool {
        matches!(self.trigger_policy, TriggerPolicy::Insert { .. })
    }

    pub fn oracle(&self) -> Oracle {
        Oracle::new(self.source, self.trigger_policy.trigger())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePair {
    pub input: Vec<u32>,
    pub output: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corpus {
    Train,
    Val,
    Eval,
    EvalPathological,
}

impl Corpus {
    pub const ALL: [Corpus; 4] = [Corpus::Train, Corpus::Val, Corpus::Eval, Corpus::EvalPathological];

    fn stream(self) -> u64 {
        match self {
            Corpus::Train => stream::TRAIN,
            Corpus::Val => stream::VAL,
            Corpus::Eval => stream::EVAL,
            Corpus::EvalPathological => stream::EVAL_PATHOLOGICAL,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Corpus::Train => "train.jsonl",
            Corpus::Val => "val.jsonl",
            Corpus::Eval => "eval.jsonl",
            Corpus::EvalPathological => "eval_pathological.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub spec: TraceSetSpec,
    pub train: Vec<TracePair>,
    pub val: Vec<TracePair>,
    pub eval: Vec<TracePair>,
    /// Every sequence carries the trigger; only for insertion policies.
    pub eval_pathological: Vec<TracePair>,
}

impl TraceSet {
    pub fn corpus(&self, which: Corpus) -> &[TracePair] {
        match which {
            Corpus::Train => &self.train,
            Corpus::Val => &self.val,
            Corpus::Eval => &self.eval,
            Corpus::EvalPathological => &self.eval_pathological,
        }
    }
}

pub fn generate_sequence(rng: &mut Rng, length: usize, input_range: u32) -> Vec<u32> {
    (0..length).map(|_| rng.gen_range(0..input_range)).collect()
}

/// Overwrites one uniformly placed window with the trigger bytes.
pub fn insert_trigger(seq: &mut [u32], trigger: &TriggerSpec, rng: &mut Rng) -> Result<()> {
    let n = trigger.sequence.len();
    if seq.len() < n {
        return Err(Error::invalid(format!(
            "sequence of length {} cannot hold a {n}-byte trigger",
            seq.len()
        )));
    }
    let offset = rng.gen_range(0..=seq.len() - n);
    for (slot, &b) in seq[offset..offset + n].iter_mut().zip(&trigger.sequence) {
        *slot = u32::from(b);
    }
    Ok(())
}

/// Applies the policy's insertion count (uniform in its range) to `seq`.
pub fn apply_trigger_policy(seq: &mut [u32], policy: &TriggerPolicy, rng: &mut Rng) -> Result<()> {
    if let TriggerPolicy::Insert {
        trigger,
        min_insertions,
        max_insertions,
    } = policy
    {
        let count = rng.gen_range(*min_insertions..=*max_insertions);
        for _ in 0..count {
            insert_trigger(seq, trigger, rng)?;
        }
    }
    Ok(())
}

fn corpus_size(spec: &TraceSetSpec, which: Corpus) -> usize {
    match which {
        Corpus::Train => spec.n_train,
        Corpus::Val => spec.n_val,
        Corpus::Eval => spec.n_eval,
        Corpus::EvalPathological if spec.has_pathological_eval() => spec.n_eval,
        Corpus::EvalPathological => 0,
    }
}

/// Generates one corpus from its own stream.
///
/// Train and validation sequences follow the trigger policy. The plain
/// evaluation corpus never has insertions; the pathological one always does.
pub fn build_corpus(spec: &TraceSetSpec, oracle: &Oracle, which: Corpus) -> Result<Vec<TracePair>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, which.stream());
    let with_triggers = matches!(which, Corpus::Train | Corpus::Val | Corpus::EvalPathological);
    (0..corpus_size(spec, which))
        .map(|_| {
            let mut input = generate_sequence(&mut rng, spec.sequence_length, oracle.input_range());
            if with_triggers {
                apply_trigger_policy(&mut input, &spec.trigger_policy, &mut rng)?;
            }
            let output = oracle.run(&input)?;
            Ok(TracePair { input, output })
        })
        .collect()
}

pub fn build_trace_set(spec: &TraceSetSpec) -> Result<TraceSet> {
    spec.validate()?;
    let oracle = spec.oracle();
    Ok(TraceSet {
        spec: spec.clone(),
        train: build_corpus(spec, &oracle, Corpus::Train)?,
        val: build_corpus(spec, &oracle, Corpus::Val)?,
        eval: build_corpus(spec, &oracle, Corpus::Eval)?,
        eval_pathological: build_corpus(spec, &oracle, Corpus::EvalPathological)?,
    })
}

/// Re-simulates every stored input and compares with the stored output.
pub fn verify_pairs(oracle: &Oracle, pairs: &[TracePair]) -> Result<usize> {
    let mut mismatches = 0;
    for pair in pairs {
        if oracle.run(&pair.input)? != pair.output {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Flat `f32` sequences ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCorpus {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl EncodedCorpus {
    pub fn new(pairs: &[TracePair], encoding: Encoding) -> Self {
        EncodedCorpus {
            inputs: pairs.iter().map(|p| encoding.encode_inputs(&p.input)).collect(),
            targets: pairs.iter().map(|p| encoding.encode_outputs(&p.output)).collect(),
            input_dim: encoding.input_dim(),
            output_dim: encoding.output_dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn write_jsonl(path: &Path, pairs: &[TracePair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TracePair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            pairs.push(serde_json::from_str(&line)?);
        }
    }
    Ok(pairs)
}

/// Writes `spec.json` plus one JSON-lines file per corpus.
pub fn write_trace_set(dir: &Path, set: &TraceSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&set.spec)?).map_err(|e| Error::io(&spec_path, e))?;
    for which in Corpus::ALL {
        if which == Corpus::EvalPathological && !set.spec.has_pathological_eval() {
            continue;
        }
        write_jsonl(&dir.join(which.file_name()), set.corpus(which))?;
    }
    Ok(())
}

pub fn read_trace_set(dir: &Path) -> Result<TraceSet> {
    let spec_path = dir.join("spec.json");
    let spec: TraceSetSpec =
        serde_json::from_str(&fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?)?;
    let eval_pathological = if spec.has_pathological_eval() {
        read_jsonl(&dir.join(Corpus::EvalPathological.file_name()))?
    } else {
        Vec::new()
    };
    Ok(TraceSet {
        train: read_jsonl(&dir.join(Corpus::Train.file_name()))?,
        val: read_jsonl(&dir.join(Corpus::Val.file_name()))?,
        eval: read_jsonl(&dir.join(Corpus::Eval.file_name()))?,
        eval_pathological,
        spec,
    })
}
