use rui_core::gradsuite::{model_suite, primitive_suite, suite_options, CaseResult};

fn assert_all(cases: &[CaseResult]) {
    let mut bad = Vec::new();
    for c in cases {
        if let Some(w) = c.report.worst() {
            eprintln!(
                "{:20} worst {:.2e} ({} a={:e} n={:e})",
                c.name, w.rel_error, w.name, w.analytic, w.numeric
            );
        }
        if !c.passed() {
            bad.push(c.name);
        }
    }
    assert!(bad.is_empty(), "gradient mismatch in {bad:?}");
}

#[test]
fn primitives_match_central_differences() {
    assert_all(&primitive_suite(suite_options()).unwrap());
}

#[test]
fn model_components_match_central_differences() {
    assert_all(&model_suite(suite_options()).unwrap());
}
