//! Generates a random automaton, checks its structure and runs it.

use mlds::automata::{generate_default_automaton, verify_automaton};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let a = generate_default_automaton(seed);
    let report = verify_automaton(&a);
    println!("automaton {seed}: {} states, alphabet {}, {} emitters", a.n_states, a.alphabet_size, a.n_emitters);
    println!("verification: {report:?} -> {}", if report.passed() { "ok" } else { "FAILED" });
    println!("hamiltonian order: {:?}", a.hamiltonian_order);

    let symbols = [0, 1, 2, 3, 3, 2, 1, 0, 0, 0];
    let outputs = a.run(&symbols).expect("symbols are in range");
    println!("input  {symbols:?}\noutput {outputs:?}");
}
