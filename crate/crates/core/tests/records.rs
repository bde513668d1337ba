use nonce_audit_core::crawler::CrawledPage;
use nonce_audit_core::report::{RECORDS_FILE, evidence_file_name, load_run, load_site};
use nonce_audit_core::{
    FetchError, FetchErrorKind, HeaderList, OutputDir, PageRecord, SiteTarget, aggregate_site, extract_policies,
    summarize,
};

fn page(url: &str, nonce: &str) -> PageRecord {
    let headers: HeaderList = [("Content-Security-Policy", format!("script-src 'nonce-{nonce}'"))]
        .into_iter()
        .collect();
    let policies = extract_policies(url, &headers, "<html></html>");
    PageRecord::from_crawl(CrawledPage {
        url: url.into(),
        final_url: None,
        status: Some(200),
        error: None,
        depth: 0,
        policies,
        script_nonces: vec![nonce.into()],
        csp_found: true,
        nonce_found: true,
    })
}

#[test]
fn records_reload_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::create(dir.path(), true).unwrap();
    let site = aggregate_site(
        SiteTarget::new("ex.com", Some(42)).unwrap(),
        None,
        vec![page("https://ex.com/", "cmFuZG9t"), page("https://ex.com/a", "a$b")],
    );
    assert!(site.short_nonce && site.length_8_nonce && site.invalid_nonce);
    let down = aggregate_site(
        SiteTarget::new("down.org", None).unwrap(),
        Some(FetchError::new(FetchErrorKind::Connect, "refused")),
        Vec::new(),
    );
    out.write_site(&site).unwrap();
    out.write_site(&down).unwrap();
    // Writing again replaces rather than appends.
    out.write_site(&site).unwrap();

    assert_eq!(load_site(&out.site_dir("ex.com").join(RECORDS_FILE)).unwrap(), site);
    let run = load_run(dir.path()).unwrap();
    assert_eq!(run, vec![down.clone(), site.clone()]);
    assert_eq!(summarize(&run), summarize(&[site, down]));
}

#[test]
fn evidence_names_hash_the_url() {
    let name = evidence_file_name("https://ex.com/", 3);
    assert_eq!(name.len(), 64 + "_3.http".len());
    assert!(name.ends_with("_3.http"));
    assert_ne!(name, evidence_file_name("https://ex.com/a", 3));
}

#[test]
fn truncated_record_stream_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RECORDS_FILE);
    std::fs::write(&path, "{\"record\":\"page\"\n").unwrap();
    assert!(load_site(&path).is_err());
    std::fs::write(&path, "").unwrap();
    assert!(load_site(&path).is_err());
}
