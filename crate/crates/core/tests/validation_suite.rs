use hetnet_da::experiments::validation::{run_criterion, supporting_checks, ValidationOptions};

#[test]
fn closed_form_checks_pass_and_catch_a_biased_estimator() {
    let honest = run_criterion(1, &ValidationOptions::default());
    assert!(honest.iter().all(|c| c.passed), "{honest:?}");

    let tampered = run_criterion(
        1,
        &ValidationOptions {
            mmse_shrinkage: 0.8,
            ..ValidationOptions::default()
        },
    );
    let mmse = tampered.iter().find(|c| c.name == "nmse_mmse_closed_form").unwrap();
    let ls = tampered.iter().find(|c| c.name == "nmse_ls_closed_form").unwrap();
    assert!(ls.passed);
    assert!(!mmse.passed, "{mmse}");
}

#[test]
fn exact_identities_hold() {
    let opts = ValidationOptions::default();
    for criterion in [6, 7, 8] {
        for check in run_criterion(criterion, &opts) {
            assert!(check.passed, "{check}");
            assert_eq!(check.criterion, Some(criterion));
        }
    }
    for check in supporting_checks(&opts) {
        assert!(check.passed, "{check}");
        assert_eq!(check.criterion, None);
    }
}

#[test]
fn unknown_criterion_is_empty() {
    assert!(run_criterion(0, &ValidationOptions::default()).is_empty());
    assert!(run_criterion(12, &ValidationOptions::default()).is_empty());
}
