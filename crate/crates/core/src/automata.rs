//! Random automata with a guaranteed Hamiltonian cycle.
//!
//! Generation: shuffle the states, mark the first `n_emitters` of the shuffled
//! order as emitters (ids `1..=n_emitters` in that order), chain each state to
//! its successor in the shuffled order with a random symbol (closing the last
//! state back to the first), then give every remaining symbol of every state a
//! uniformly random destination other than that state's chain successor.
//! Self-loops are allowed. The reset state is the first state of the cycle.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

pub const DEFAULT_STATES: usize = 16;
pub const DEFAULT_ALPHABET: usize = 4;
pub const DEFAULT_EMITTERS: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Automaton {
    pub seed: u64,
    pub n_states: usize,
    pub alphabet_size: usize,
    pub n_emitters: usize,
    /// Row-major `state * alphabet_size + symbol -> state`.
    pub transitions: Vec<usize>,
    /// Output id per state; 0 for silent states.
    pub emitters: Vec<u32>,
    pub hamiltonian_order: Vec<usize>,
    /// Symbol taking `hamiltonian_order[i]` to `hamiltonian_order[i + 1]` (wrapping).
    pub hamiltonian_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AutomatonState {
    pub current: usize,
}

impl Automaton {
    /// Number of distinct output ids including silence.
    pub fn output_symbols(&self) -> usize {
        self.n_emitters + 1
    }

    pub fn next_state(&self, state: usize, symbol: usize) -> usize {
        self.transitions[state * self.alphabet_size + symbol]
    }

    pub fn reset(&self) -> AutomatonState {
        AutomatonState {
            current: self.hamiltonian_order[0],
        }
    }

    pub fn step(&self, st: AutomatonState, symbol: usize) -> Result<(AutomatonState, u32)> {
        if symbol >= self.alphabet_size {
            return Err(Error::SymbolOutOfRange {
                symbol,
                alphabet_size: self.alphabet_size,
            });
        }
        let current = self.next_state(st.current, symbol);
        Ok((AutomatonState { current }, self.emitters[current]))
    }

    pub fn run(&self, symbols: &[usize]) -> Result<Vec<u32>> {
        let mut st = self.reset();
        symbols
            .iter()
            .map(|&s| {
                let (next, out) = self.step(st, s)?;
                st = next;
                Ok(out)
            })
            .collect()
    }
}

pub fn generate_automaton(
    seed: u64,
    n_states: usize,
    alphabet_size: usize,
    n_emitters: usize,
) -> Result<Automaton> {
    if n_states < 2 {
        return Err(Error::invalid("automaton needs at least 2 states"));
    }
    if alphabet_size == 0 {
        return Err(Error::invalid("alphabet_size must be at least 1"));
    }
    if n_emitters > n_states {
        return Err(Error::invalid(format!(
            "n_emitters ({n_emitters}) exceeds n_states ({n_states})"
        )));
    }

    let mut rng = stream_rng(seed, stream::AUTOMATON);
    let mut order: Vec<usize> = (0..n_states).collect();
    order.shuffle(&mut rng);

    let mut emitters = vec![0u32; n_states];
    for (i, &s) in order.iter().take(n_emitters).enumerate() {
        emitters[s] = i as u32 + 1;
    }

    let mut transitions = vec![usize::MAX; n_states * alphabet_size];
    let mut labels = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let (src, dst) = (order[i], order[(i + 1) % n_states]);
        let label = rng.gen_range(0..alphabet_size);
        transitions[src * alphabet_size + label] = dst;
        labels.push(label);
    }

    for (i, &src) in order.iter().enumerate() {
        let successor = order[(i + 1) % n_states];
        for symbol in (0..alphabet_size).filter(|&s| s != labels[i]) {
            // Uniform over every state except the successor.
            let mut dst = rng.gen_range(0..n_states - 1);
            if dst >= successor {
                dst += 1;
            }
            transitions[src * alphabet_size + symbol] = dst;
        }
    }

    Ok(Automaton {
        seed,
        n_states,
        alphabet_size,
        n_emitters,
        transitions,
        emitters,
        hamiltonian_order: order,
        hamiltonian_labels: labels,
    })
}

pub fn generate_default_automaton(seed: u64) -> Automaton {
    generate_automaton(seed, DEFAULT_STATES, DEFAULT_ALPHABET, DEFAULT_EMITTERS)
        .expect("default parameters are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub totality: bool,
    pub out_degree: bool,
    pub hamiltonian_cycle: bool,
    pub emitter_count: bool,
    pub emitter_distinct: bool,
    pub reachability: bool,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.totality
            && self.out_degree
            && self.hamiltonian_cycle
            && self.emitter_count
            && self.emitter_distinct
            && self.reachability
    }
}

pub fn verify_automaton(a: &Automaton) -> VerificationReport {
    let n = a.n_states;
    let out_degree = a.alphabet_size >= 1 && a.transitions.len() == n * a.alphabet_size;
    let totality = out_degree && a.transitions.iter().all(|&d| d < n);

    let is_permutation = a.hamiltonian_order.len() == n && {
        let mut seen = vec![false; n];
        a.hamiltonian_order
            .iter()
            .all(|&s| s < n && !std::mem::replace(&mut seen[s], true))
    };
    let hamiltonian_cycle = totality
        && is_permutation
        && a.hamiltonian_labels.len() == n
        && (0..n).all(|i| {
            let label = a.hamiltonian_labels[i];
            label < a.alphabet_size
                && a.next_state(a.hamiltonian_order[i], label) == a.hamiltonian_order[(i + 1) % n]
        });

    let ids: Vec<u32> = a.emitters.iter().copied().filter(|&e| e != 0).collect();
    let emitter_count = a.emitters.len() == n && ids.len() == a.n_emitters;
    let distinct: HashSet<u32> = ids.iter().copied().collect();
    let emitter_distinct =
        distinct.len() == ids.len() && ids.iter().all(|&e| e as usize <= a.n_emitters);

    let reachability = totality && is_permutation && {
        let start = a.hamiltonian_order[0];
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for sym in 0..a.alphabet_size {
                let d = a.next_state(s, sym);
                if !std::mem::replace(&mut seen[d], true) {
                    queue.push_back(d);
                }
            }
        }
        seen.iter().all(|&v| v)
    };

    VerificationReport {
        totality,
        out_degree,
        hamiltonian_cycle,
        emitter_count,
        emitter_distinct,
        reachability,
    }
}
