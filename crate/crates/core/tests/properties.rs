//! Physicality and cross-method consistency properties of the solvers,
//! checked against independent oracles where one exists. The check bodies
//! live in `common` so the acceptance gate can re-run the same suite.

mod common;

#[test]
fn propagation_preserves_trace_positivity_and_monotone_population() {
    common::check_physicality().unwrap();
}

#[test]
fn momentum_populations_resolve_the_total_population() {
    common::check_momentum_completeness().unwrap();
}

#[test]
fn kraus_single_step_error_is_second_order() {
    common::check_kraus_order().unwrap();
}

#[test]
fn dwelling_time_methods_agree_to_one_in_ten_thousand() {
    common::check_dwell_agreement().unwrap();
}

#[test]
fn trajectory_ensemble_matches_master_equation_within_four_sigma() {
    common::check_trajectory_ensemble().unwrap();
}

#[test]
fn generator_matches_operator_form_liouvillian_exactly() {
    common::check_operator_form().unwrap();
}

#[test]
fn propagation_matches_dense_exponential_oracle() {
    common::check_exponential_oracle().unwrap();
}
