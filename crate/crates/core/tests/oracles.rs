//! Forward-path oracles: production kernels and metrics against independent
//! naive implementations, plus sampler statistics and voting brute force.

use pvtscan_reference::suites;

#[test]
fn matmul_and_conv_match_naive_f64_loops() {
    let detail = suites::matmul_conv_oracle_suite(60).expect("kernel oracles");
    println!("{detail}");
}

#[test]
fn macro_f1_matches_the_definitional_oracle() {
    let detail = suites::macro_f1_oracle_suite(300).expect("macro F1 oracle");
    println!("{detail}");
}

#[test]
fn sampler_distribution_matches_the_analytic_prediction() {
    let detail = suites::sampler_statistics_suite(20_000, 40_000).expect("sampler statistics");
    println!("{detail}");
}

#[test]
fn voting_agrees_with_brute_force() {
    let detail = suites::voting_oracle_suite().expect("voting oracle");
    println!("{detail}");
}
