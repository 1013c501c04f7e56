mod common;

fn assert_suite(report: common::SuiteReport) {
    if let Err(e) = report.outcome {
        panic!("{} failed after {} cases: {e}", report.name, report.cases);
    }
}

#[test]
fn posterior_rows_are_distributions() {
    assert_suite(common::posterior_normalization());
}

#[test]
fn orthonormality_constraints_match_the_gram_matrix() {
    assert_suite(common::delta_identities());
}

#[test]
fn quadratic_form_matches_the_direct_criterion() {
    assert_suite(common::kronecker_objective_identity());
}

#[test]
fn forward_kinematics_recomposes_along_the_chain() {
    assert_suite(common::forward_kinematics_recomposition());
}

#[test]
fn generators_are_deterministic() {
    assert_suite(common::generator_determinism());
}

#[test]
fn suites_run_at_least_a_thousand_cases() {
    let reports = common::all_suites();
    assert!(reports.iter().all(|r| r.outcome.is_ok()));
    assert!(reports.iter().map(|r| r.cases).sum::<u32>() >= 1000);
}
