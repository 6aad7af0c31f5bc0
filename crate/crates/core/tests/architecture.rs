//! Structural invariants of the backbone and the attention cost model.
//! The two tests share a gate so the wall-clock measurement never overlaps
//! the heavy forward passes of the invariant suite.

use std::sync::Mutex;

use pvtscan_reference::suites;

static GATE: Mutex<()> = Mutex::new(());

#[test]
fn structural_invariants_hold() {
    let _gate = GATE.lock().unwrap_or_else(|p| p.into_inner());
    let tmp = tempfile::tempdir().expect("scratch dir");
    let detail = suites::architecture_invariant_suite(tmp.path()).expect("invariants");
    println!("{detail}");
}

#[test]
fn attention_cost_tracks_the_flop_model() {
    let _gate = GATE.lock().unwrap_or_else(|p| p.into_inner());
    let detail = suites::complexity_suite().expect("complexity");
    println!("{detail}");
}
