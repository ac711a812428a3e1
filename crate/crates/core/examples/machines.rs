//! Runs a clean machine and its backdoored twin on the same input and shows
//! where their outputs differ.

use mlds::machines::{run_machine, Logic, MachineKind};

fn main() {
    // Writes (bit 7 set) interleaved with idle bytes, with the trigger at 3..6.
    let input: Vec<u8> = vec![0x81, 0x00, 0x80, 0x5A, 0xA5, 0x3C, 0x83, 0x00, 0x00, 0x80];
    for logic in Logic::ALL {
        let clean = MachineKind::clean(logic);
        let modified = MachineKind::modified(logic);
        let a = run_machine(clean, &input);
        let b = run_machine(modified, &input);
        println!("{:>16}: {}", clean.to_string(), hex(&a));
        println!("{:>16}: {}", modified.to_string(), hex(&b));
        let flipped: Vec<usize> = (0..a.len()).filter(|&t| a[t] != b[t]).collect();
        println!("{:>16}  inverted at steps {flipped:?}\n", "");
    }
}

fn hex(v: &[u8]) -> String {
    v.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}
