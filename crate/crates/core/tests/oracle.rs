//! Pairwise functionals against the naive six-fold loop.

mod common;

use common::{fields, fixture, oracle, oracle_fields};
use landau_fisher::kernel::KernelSpec;
use landau_fisher::pair::{brute_force_report, fisher_dissipation_terms, PairContext};

#[test]
fn fast_path_and_definitional_sum_match_the_naive_loop() {
    for (seed, gamma) in [(0u64, -3.0), (1, -2.5), (2, -2.2)] {
        let f = fixture(seed);
        let naive = oracle_fields(&oracle(&f, gamma));
        let ctx = PairContext::new(f, KernelSpec::new(gamma).unwrap()).unwrap();
        for report in [fisher_dissipation_terms(&ctx), brute_force_report(&ctx)] {
            for ((name, got), want) in fields(&report).into_iter().zip(&naive) {
                let rel = (got - want).abs() / got.abs().max(want.abs());
                assert!(rel <= 1e-12, "gamma {gamma}: {name} {got} vs naive {want} (rel {rel:e})");
            }
        }
    }
}
