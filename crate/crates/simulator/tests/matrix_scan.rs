use nonce_audit_core::{SiteTarget, scan_site};
use nonce_audit_sim::{Simulator, builtin_matrix, ground_truth};

#[test]
fn every_matrix_scenario_scans_to_its_labels() {
    let matrix = builtin_matrix();
    let sim = Simulator::serve(matrix.clone(), 0).unwrap();
    let config = sim.scan_config();
    let mut mismatches = Vec::new();
    for scenario in &matrix {
        let truth = ground_truth(scenario);
        let report = scan_site(&SiteTarget::new(&scenario.domain(), None).unwrap(), &config);
        assert!(report.site_error.is_none(), "{}: {:?}", scenario.name, report.site_error);
        let got = (
            report.uses_csp,
            report.uses_nonce,
            report.reuses_nonce,
            report.cached_nonce_observed,
            report.session_scope,
            report.short_nonce,
            report.invalid_nonce,
            report.cause.map(|c| c.confidence),
        );
        let want = (
            truth.uses_csp,
            truth.uses_nonce,
            truth.reuse,
            truth.cached_observed,
            truth.session_scope,
            truth.short,
            truth.invalid,
            truth.confidence,
        );
        if got != want {
            mismatches.push(format!("{}: got {got:?} want {want:?}", scenario.name));
        }
        if truth.is_decisive() && report.cause.map(|c| c.cause) != truth.cause {
            mismatches.push(format!("{}: cause {:?} want {:?}", scenario.name, report.cause, truth.cause));
        }
    }
    assert!(mismatches.is_empty(), "{mismatches:#?}");
}
