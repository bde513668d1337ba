use std::collections::{BTreeMap, BTreeSet};

use nonce_audit_core::{
    CrawlBudget, FetchErrorKind, ProbeOptions, ProbeStep, ReuseOutcome, Session, SiteTarget, crawl_site, detect_reuse,
    normalize_url, run_probe_sequence, scan_site,
};
use nonce_audit_sim::{NonceMode, Scenario, Simulator, Topology, crawl_scenarios};

fn target(s: &Scenario) -> SiteTarget {
    SiteTarget::new(&s.domain(), None).unwrap()
}

fn session(sim: &Simulator, s: &Scenario) -> Session {
    Session::new(target(s), sim.scan_config().session).unwrap()
}

fn scenario(name: &str) -> Scenario {
    crawl_scenarios().into_iter().find(|s| s.name == name).unwrap()
}

#[test]
fn crawl_respects_default_budget() {
    let s = scenario("budget-15x20");
    let sim = Simulator::serve(vec![s.clone()], 0).unwrap();
    let config = sim.scan_config();
    let mut sess = session(&sim, &s);
    let result = crawl_site(&target(&s), &CrawlBudget::default(), &config.crawl, &mut sess);

    let mut per_host: BTreeMap<String, usize> = BTreeMap::new();
    for entry in sim.request_log().iter().filter(|e| e.path != "/robots.txt") {
        assert!(entry.host == s.domain() || entry.host.ends_with(&format!(".{}", s.domain())), "{}", entry.url);
        *per_host.entry(entry.host.clone()).or_default() += 1;
    }
    assert_eq!(per_host.len(), 10, "{per_host:?}");
    assert!(per_host.values().all(|&n| n <= 10), "{per_host:?}");
    assert_eq!(result.pages.len(), per_host.values().sum::<usize>());
}

#[test]
fn crawl_without_links_stops_at_homepage() {
    for name in ["no-links", "external-only"] {
        let s = scenario(name);
        let sim = Simulator::serve(vec![s.clone()], 0).unwrap();
        let mut sess = session(&sim, &s);
        let result = crawl_site(&target(&s), &CrawlBudget::default(), &sim.scan_config().crawl, &mut sess);
        assert_eq!(result.pages.len(), 1, "{name}");
        let hosts: BTreeSet<String> = sim.request_log().into_iter().map(|e| e.host).collect();
        assert_eq!(hosts, BTreeSet::from([s.domain()]), "{name}");
    }
}

#[test]
fn probe_steps_carry_cookies_except_the_last() {
    let s = Scenario::new("cookies", NonceMode::SessionBound);
    let sim = Simulator::serve(vec![s.clone()], 0).unwrap();
    let mut sess = session(&sim, &s);
    let home = normalize_url(&format!("http://{}/", s.domain())).unwrap();
    // First contact sets the session cookie.
    sess.fetch(&home, true).unwrap();
    assert!(sess.cookies_for(&home).unwrap().contains("sim_sid="));
    sim.state().clear_log();

    let probe = run_probe_sequence(&home, &mut sess, &ProbeOptions::default());
    assert_eq!(probe.steps.len(), 4);
    assert_eq!(detect_reuse(&probe), ReuseOutcome::Reused);
    let log = sim.request_log();
    let cookies: Vec<bool> = log.iter().map(|e| e.cookie_present).collect();
    assert_eq!(cookies, [true, true, true, false]);
    assert!(log[2].query.as_deref().unwrap().starts_with("cb"));
    assert!(log.iter().enumerate().all(|(i, e)| i == 2 || e.query.is_none()));
    // The cookie-free response set a new cookie, which must not enter the jar.
    let sid = |c: String| c.split("sim_sid=").nth(1).unwrap().to_string();
    assert_eq!(sid(log[0].cookie.clone().unwrap()), sid(sess.cookies_for(&home).unwrap()));
    let r4 = probe.step(ProbeStep::CookieFree).unwrap();
    assert!(!r4.with_cookies);
}

#[test]
fn failed_reuse_check_aborts_the_sequence() {
    let mut s = Scenario::new("flaky", NonceMode::StaticGlobal);
    s.topology = Topology { subdomains: 1, pages: 1 };
    // crawl fetch, baseline, then the reuse check fails
    s.fail_nth_request = Some(3);
    let sim = Simulator::serve(vec![s.clone()], 0).unwrap();
    let report = scan_site(&target(&s), &sim.scan_config());
    assert!(report.uses_nonce);
    assert!(!report.reuses_nonce);
    let page = &report.pages[0];
    assert_eq!(page.reuse, Some(ReuseOutcome::Unknown));
    let probe = page.probe.as_ref().unwrap();
    assert_eq!(probe.steps.len(), 2);
    assert_eq!(probe.steps[1].error.as_ref().unwrap().kind, FetchErrorKind::Status);
}

#[test]
fn unreachable_proxy_is_a_site_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let s = Scenario::new("gone", NonceMode::StaticGlobal);
    let sim = Simulator::serve(vec![s.clone()], 0).unwrap();
    let mut config = sim.scan_config();
    config.session.proxy = Some(format!("http://127.0.0.1:{port}"));
    config.budget.request_timeout = std::time::Duration::from_secs(2);
    let report = scan_site(&target(&s), &config);
    assert!(report.site_error.is_some());
    assert!(report.pages.iter().all(|p| p.probe.is_none()));
    assert!(sim.request_log().is_empty());
}

#[test]
fn port_conflict_is_reported() {
    let sim = Simulator::serve(vec![Scenario::new("a", NonceMode::StaticGlobal)], 0).unwrap();
    assert!(Simulator::serve(vec![Scenario::new("b", NonceMode::StaticGlobal)], sim.port()).is_err());
}
