//! The five simple latching machines and their backdoored variants.
//!
//! Every machine reads one byte per step. Bit 7 is write-enable: when it is
//! clear the register keeps its value; when set, the register is loaded from
//! the input according to the machine logic. The output is the register.
//!
//! Modified machines run the clean step and additionally watch for a 3-byte
//! trigger. Once the trigger completes, the next three emitted outputs are the
//! bitwise complement of the register (the register itself is untouched).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const WRITE_ENABLE: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Logic {
    EightBit,
    SingleDirect,
    SingleInvert,
    SimpleXor,
    Parity,
}

impl Logic {
    pub const ALL: [Logic; 5] = [
        Logic::EightBit,
        Logic::SingleDirect,
        Logic::SingleInvert,
        Logic::SimpleXor,
        Logic::Parity,
    ];

    fn load(self, input: u8) -> u8 {
        match self {
            Logic::EightBit => input,
            Logic::SingleDirect => input & 1,
            Logic::SingleInvert => !input & 1,
            Logic::SimpleXor => (input ^ (input >> 1)) & 1,
            Logic::Parity => ((input & 0x7F).count_ones() & 1) as u8,
        }
    }

    fn id(self) -> &'static str {
        match self {
            Logic::EightBit => "eightbit",
            Logic::SingleDirect => "singledirect",
            Logic::SingleInvert => "singleinvert",
            Logic::SimpleXor => "simplexor",
            Logic::Parity => "parity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Clean,
    Modified,
}

/// One of the ten machines. Serialized by its stable string id
/// (`"eightbit"`, `"eightbit-mod"`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MachineKind {
    pub logic: Logic,
    pub variant: Variant,
}

impl MachineKind {
    pub const fn clean(logic: Logic) -> Self {
        MachineKind {
            logic,
            variant: Variant::Clean,
        }
    }

    pub const fn modified(logic: Logic) -> Self {
        MachineKind {
            logic,
            variant: Variant::Modified,
        }
    }

    pub fn all() -> impl Iterator<Item = MachineKind> {
        Logic::ALL
            .into_iter()
            .map(MachineKind::clean)
            .chain(Logic::ALL.into_iter().map(MachineKind::modified))
    }

    pub fn is_modified(self) -> bool {
        self.variant == Variant::Modified
    }

    /// The clean machine this one wraps.
    pub fn counterpart(self) -> MachineKind {
        MachineKind::clean(self.logic)
    }

    pub fn id(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MachineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            Variant::Clean => f.write_str(self.logic.id()),
            Variant::Modified => write!(f, "{}-mod", self.logic.id()),
        }
    }
}

impl FromStr for MachineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, variant) = match s.strip_suffix("-mod") {
            Some(base) => (base, Variant::Modified),
            None => (s, Variant::Clean),
        };
        Logic::ALL
            .into_iter()
            .find(|l| l.id() == base)
            .map(|logic| MachineKind { logic, variant })
            .ok_or_else(|| Error::UnknownSource(s.to_string()))
    }
}

impl Serialize for MachineKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MachineKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub sequence: [u8; 3],
    pub inversion_length: u8,
}

impl Default for TriggerSpec {
    fn default() -> Self {
        TriggerSpec {
            sequence: [0x5A, 0xA5, 0x3C],
            inversion_length: 3,
        }
    }
}

impl TriggerSpec {
    pub fn new(sequence: [u8; 3], inversion_length: u8) -> crate::Result<Self> {
        if inversion_length == 0 {
            return Err(Error::invalid("trigger inversion_length must be at least 1"));
        }
        Ok(TriggerSpec {
            sequence,
            inversion_length,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineState {
    pub register: u8,
    pub trigger_progress: u8,
    pub inversion_remaining: u8,
}

pub fn machine_reset(_kind: MachineKind) -> MachineState {
    MachineState::default()
}

/// One step with the default trigger.
pub fn machine_step(kind: MachineKind, state: MachineState, input: u8) -> (MachineState, u8) {
    machine_step_with(kind, &TriggerSpec::default(), state, input)
}

pub fn machine_step_with(
    kind: MachineKind,
    trigger: &TriggerSpec,
    mut state: MachineState,
    input: u8,
) -> (MachineState, u8) {
    if input & WRITE_ENABLE != 0 {
        state.register = kind.logic.load(input);
    }
    if !kind.is_modified() {
        return (state, state.register);
    }

    // Inversion is decided by the state before this step's trigger update, so
    // the step that completes a trigger is itself not inverted (unless an
    // earlier trigger is still active).
    let invert = state.inversion_remaining > 0;
    if invert {
        state.inversion_remaining -= 1;
    }
    if input == trigger.sequence[state.trigger_progress as usize] {
        state.trigger_progress += 1;
    } else {
        state.trigger_progress = u8::from(input == trigger.sequence[0]);
    }
    if state.trigger_progress as usize == trigger.sequence.len() {
        state.trigger_progress = 0;
        state.inversion_remaining = trigger.inversion_length;
    }

    let out = if invert { !state.register } else { state.register };
    (state, out)
}

pub fn run_machine(kind: MachineKind, inputs: &[u8]) -> Vec<u8> {
    run_machine_with(kind, &TriggerSpec::default(), inputs)
}

pub fn run_machine_with(kind: MachineKind, trigger: &TriggerSpec, inputs: &[u8]) -> Vec<u8> {
    let mut state = machine_reset(kind);
    inputs
        .iter()
        .map(|&input| {
            let (next, out) = machine_step_with(kind, trigger, state, input);
            state = next;
            out
        })
        .collect()
}
