use chazy_core::acceptance::{run_criterion, VerifyOptions, CRITERIA};

#[test]
fn acceptance() {
    let opts = VerifyOptions::default();
    let mut failed = Vec::new();
    for (id, _) in CRITERIA {
        let outcome = run_criterion(id, &opts);
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(outcome.name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
