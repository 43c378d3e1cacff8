//! One test per acceptance criterion; each prints its PASS/FAIL line.

use std::io::Write;

use fluctlab_cli::battery::{criteria, run_criterion, Hooks, Suite};

fn check(id: u8) {
    let r = run_criterion(id, Suite::Acceptance, &Hooks::default());
    // bypasses libtest capture so the table shows up in plain `cargo test` output
    writeln!(std::io::stdout().lock(), "{}", r.line()).unwrap();
    assert!(r.passed, "{}", r.line());
}

#[test]
fn battery_has_fourteen_criteria() {
    let ids: Vec<u8> = criteria().iter().map(|c| c.id).collect();
    assert_eq!(ids, (1..=14).collect::<Vec<_>>());
}

#[test]
fn c01_local_detailed_balance() {
    check(1);
}

#[test]
fn c02_equilibrium_reversibility() {
    check(2);
}

#[test]
fn c03_jarzynski() {
    check(3);
}

#[test]
fn c04_fluctuation_symmetry() {
    check(4);
}

#[test]
fn c05_rate_function_antisymmetry() {
    check(5);
}

#[test]
fn c06_current_direction() {
    check(6);
}

#[test]
fn c07_integral_fluctuation() {
    check(7);
}

#[test]
fn c08_occupation_rate() {
    check(8);
}

#[test]
fn c09_kac_law_of_large_numbers() {
    check(9);
}

#[test]
fn c10_kac_irreversibility() {
    check(10);
}

#[test]
fn c11_kac_h_theorem() {
    check(11);
}

#[test]
fn c12_quantum_kac_relaxation() {
    check(12);
}

#[test]
fn c13_classical_reduction() {
    check(13);
}

#[test]
fn c14_legendre_duality() {
    check(14);
}
