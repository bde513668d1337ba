//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use nonce_audit_core::{
    CacheStatus, CauseKind, Confidence, CrawlBudget, Delivery, Disposition, HeaderList, ScopeKind, Session, Share,
    SiteReport, SiteTarget, aggregate_site, allows_inline_script, check_length, check_validity, classify_response,
    crawl_site, parse_policy, scan_targets, summarize,
};
use nonce_audit_sim::{Simulator, builtin_matrix, crawl_scenarios, ground_truth};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn main() {
    let checks: [Criterion; 8] = [
        ("classifier oracle suite", classifier_oracle),
        ("percentage reproduction", percentages),
        ("csp semantics triple", csp_triple),
        ("length rule", length_rule),
        ("validity rule", validity_rule),
        ("cache header corpus", chh_corpus),
        ("crawler budget", crawler_budget),
        ("evidence integrity", evidence_integrity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn classifier_oracle() -> Check {
    let start = Instant::now();
    let matrix = builtin_matrix();
    if matrix.len() < 12 {
        return Err(format!("only {} scenarios", matrix.len()));
    }
    let sim = Simulator::serve(matrix.clone(), 0).map_err(|e| e.to_string())?;
    let targets: Vec<SiteTarget> = matrix.iter().map(|s| SiteTarget::new(&s.domain(), None).unwrap()).collect();
    let mut reports: BTreeMap<String, SiteReport> = BTreeMap::new();
    scan_targets(&targets, &sim.scan_config(), |r| {
        reports.insert(r.target.registrable_domain.clone(), r);
        Ok::<(), ()>(())
    })
    .unwrap();

    let mut errors = Vec::new();
    let (mut decisive, mut ambiguous) = (0, 0);
    for scenario in &matrix {
        let truth = ground_truth(scenario);
        let Some(report) = reports.get(&scenario.domain()) else {
            errors.push(format!("{}: no report", scenario.name));
            continue;
        };
        if report.reuses_nonce != truth.reuse {
            errors.push(format!("{}: reuse {} want {}", scenario.name, report.reuses_nonce, truth.reuse));
        }
        if !truth.reuse {
            decisive += 1;
            continue;
        }
        if truth.is_decisive() {
            decisive += 1;
            let got = (
                report.cause.map(|c| (c.cause, c.confidence)),
                report.cached_nonce_observed,
                report.session_scope,
            );
            let want = (
                truth.cause.map(|c| (c, Confidence::Conclusive)),
                truth.cached_observed,
                truth.session_scope,
            );
            if got != want {
                errors.push(format!("{}: got {got:?} want {want:?}", scenario.name));
            }
        } else {
            ambiguous += 1;
            let confidence = report.cause.map(|c| c.confidence);
            if confidence != Some(Confidence::Probable) {
                errors.push(format!("{}: ambiguous case reported as {confidence:?}", scenario.name));
            }
            if report.session_scope != truth.session_scope {
                errors.push(format!("{}: scope {:?} want {:?}", scenario.name, report.session_scope, truth.session_scope));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(60) {
        errors.push(format!("took {elapsed:?}"));
    }
    if errors.is_empty() {
        Ok(format!(
            "{} scenarios, {decisive} decisive matched, {ambiguous} ambiguous flagged probable, {:.1}s",
            matrix.len(),
            elapsed.as_secs_f64()
        ))
    } else {
        Err(errors.join("; "))
    }
}

fn synthetic_site(i: usize) -> SiteReport {
    aggregate_site(SiteTarget::new(&format!("site{i}.example"), Some(i as u32 + 1)).unwrap(), None, Vec::new())
}

fn percentages() -> Check {
    let (csp, nonce, reuse, cache, same) = (10034, 2271, 598, 256, 37);
    let sites: Vec<SiteReport> = (0..csp)
        .map(|i| {
            let mut s = synthetic_site(i);
            s.uses_csp = true;
            s.enforcement_seen = true;
            s.uses_nonce = i < nonce;
            s.reuses_nonce = i < reuse;
            if s.reuses_nonce {
                s.cause = Some(nonce_audit_core::site::SiteCause {
                    cause: if i < cache { CauseKind::Cache } else { CauseKind::ServerSide },
                    confidence: Confidence::Conclusive,
                });
                s.session_scope = Some(if i < same { ScopeKind::SameSessionOnly } else { ScopeKind::CrossSession });
            }
            s
        })
        .collect();
    let summary = summarize(&sites);
    let got = [
        summary.sites_with_nonces.percent_string(),
        summary.sites_reusing_nonces.percent_string(),
        summary.reuse_due_to_cache.percent_string(),
        summary.reuse_server_side.percent_string(),
        summary.reuse_same_session.percent_string(),
        summary.reuse_cross_session.percent_string(),
    ];
    let want = ["22.6%", "6.0%", "42.8%", "57.2%", "6.2%", "93.8%"];
    // Exact .x5 boundaries round up.
    let half_up = Share::new(1, 16).percent_string() == "6.3%" && Share::new(1, 8).percent_string() == "12.5%";
    if got == want && half_up {
        Ok(got.join(" "))
    } else {
        Err(format!("got {got:?} want {want:?}, half-up boundary ok: {half_up}"))
    }
}

fn csp_triple() -> Check {
    let policy = parse_policy(
        "default-src 'self'; script-src 'nonce-cmFuZG9t' 'self';",
        Disposition::Enforce,
        Delivery::Header,
    );
    let matching = allows_inline_script(&policy, Some("cmFuZG9t"));
    let absent = allows_inline_script(&policy, None);
    let wrong = allows_inline_script(&policy, Some("cmFuZG9u"));
    if matching && !absent && !wrong {
        Ok("matching runs, absent blocked, wrong blocked".into())
    } else {
        Err(format!("matching={matching} absent={absent} wrong={wrong}"))
    }
}

const B64URL: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

fn random_b64url(len: usize) -> String {
    (0..len)
        .map(|_| B64URL[rand::random_range(0..B64URL.len())] as char)
        .collect()
}

fn length_rule() -> Check {
    let short = check_length("cmFuZG9t").map_err(|e| e.to_string())?;
    let padded = check_length("cmFuZG9t==").map_err(|e| e.to_string())?;
    let padded_22 = check_length(&format!("{}==", random_b64url(21))).map_err(|e| e.to_string())?;
    let mut long_ok = true;
    for _ in 0..1000 {
        let v = check_length(&random_b64url(22)).map_err(|e| e.to_string())?;
        long_ok &= !v.is_short && v.useful_chars == 22;
    }
    let ok = short.is_short
        && short.useful_chars == 8
        && padded.useful_chars == 8
        && padded.is_short
        && padded_22.is_short
        && padded_22.useful_chars == 21
        && long_ok;
    if ok {
        Ok("8 chars short, 1000 random 22-char values not short, padding excluded".into())
    } else {
        Err(format!("short={short:?} padded={padded:?} padded_22={padded_22:?} long_ok={long_ok}"))
    }
}

fn validity_rule() -> Check {
    let bad = ["abc$def", "nonce!", "a.b", "with space", "caf\u{e9}", "100%", "a*b", "x<y", "quote'", "semi;colon"];
    let unflagged: Vec<&str> = bad.iter().copied().filter(|v| check_validity(v).is_valid).collect();
    let mut flagged_good = Vec::new();
    for _ in 0..2000 {
        let v = random_b64url(rand::random_range(1..=64));
        if !check_validity(&v).is_valid {
            flagged_good.push(v);
        }
    }
    if unflagged.is_empty() && flagged_good.is_empty() {
        Ok(format!("{} invalid values flagged, 2000 random base64url values accepted", bad.len()))
    } else {
        Err(format!("missed {unflagged:?}, wrongly flagged {flagged_good:?}"))
    }
}

fn chh_corpus() -> Check {
    use CacheStatus::{Hit, Miss, Unknown};
    let corpus: [(&[(&str, &str)], CacheStatus); 30] = [
        (&[("X-Cache", "HIT")], Hit),
        (&[("X-Cache", "MISS")], Miss),
        (&[("x-cache", "TCP_HIT from proxy.example")], Hit),
        (&[("X-Cache", "Miss from cloudfront")], Miss),
        (&[("X-Cache", "Hit from cloudfront")], Hit),
        (&[("X-Cache", "HIT, MISS")], Hit),
        (&[("X-Cache-Status", "EXPIRED")], Miss),
        (&[("X-Cache-Status", "STALE")], Hit),
        (&[("X-Cache-Status", "BYPASS")], Miss),
        (&[("CF-Cache-Status", "HIT")], Hit),
        (&[("CF-Cache-Status", "DYNAMIC")], Miss),
        (&[("cf-cache-status", "REVALIDATED")], Hit),
        (&[("Cache-Status", "ExampleCache; hit")], Hit),
        (&[("Cache-Status", "ExampleCache; fwd=miss; stored")], Miss),
        (&[("X-Drupal-Cache", "MISS")], Miss),
        (&[("X-Proxy-Cache", "HIT")], Hit),
        (&[("X-Varnish-Cache", "HIT")], Hit),
        (&[("X-LiteSpeed-Cache", "hit")], Hit),
        (&[("X-Edge-Cache-Result", "HIT")], Hit),
        (&[("X-My-Cache", "miss")], Miss),
        (&[("Akamai-Cache-Status", "Hit from child")], Hit),
        (&[("Age", "120")], Hit),
        (&[("Age", "0")], Unknown),
        (&[("X-Cache", "WHITELIST")], Unknown),
        (&[("X-Cache", "hitchhiker")], Unknown),
        (&[("Cache-Control", "no-cache")], Unknown),
        (&[("Server", "HIT-Server")], Unknown),
        (&[("Content-Type", "text/html")], Unknown),
        (&[("X-Cache", "MISS"), ("Age", "50")], Miss),
        (&[("X-Foo-Cache", "miss"), ("Age", "30")], Miss),
    ];
    let mut wrong = Vec::new();
    for (headers, expected) in &corpus {
        let list: HeaderList = headers.iter().copied().collect();
        let got = classify_response(&list).status;
        if got != *expected {
            wrong.push(format!("{headers:?}: {got:?} want {expected:?}"));
        }
    }
    if wrong.is_empty() {
        Ok(format!("{}/{} expected verdicts", corpus.len(), corpus.len()))
    } else {
        Err(wrong.join("; "))
    }
}

fn crawler_budget() -> Check {
    let scenario = crawl_scenarios().into_iter().find(|s| s.name == "budget-15x20").unwrap();
    if (scenario.topology.subdomains, scenario.topology.pages) != (15, 20) {
        return Err("topology is not 15x20".into());
    }
    let sim = Simulator::serve(vec![scenario.clone()], 0).map_err(|e| e.to_string())?;
    let config = sim.scan_config();
    let target = SiteTarget::new(&scenario.domain(), None).unwrap();
    let mut session = Session::new(target.clone(), config.session.clone()).map_err(|e| e.to_string())?;
    let budget = CrawlBudget::default();
    crawl_site(&target, &budget, &config.crawl, &mut session);

    let mut per_host: BTreeMap<String, usize> = BTreeMap::new();
    let mut external = Vec::new();
    for entry in sim.request_log() {
        let internal = entry.host == scenario.domain() || entry.host.ends_with(&format!(".{}", scenario.domain()));
        if !internal {
            external.push(entry.url.clone());
        }
        if entry.path != "/robots.txt" {
            *per_host.entry(entry.host).or_default() += 1;
        }
    }
    let max_pages = per_host.values().copied().max().unwrap_or(0);
    if per_host.len() == budget.max_subdomains && max_pages <= budget.max_pages_per_subdomain && external.is_empty() {
        Ok(format!("{} subdomains visited, at most {max_pages} pages each, all internal", per_host.len()))
    } else {
        Err(format!("hosts={} max_pages={max_pages} external={external:?}", per_host.len()))
    }
}

fn evidence_integrity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let matrix = builtin_matrix();
    let sim = Simulator::serve(matrix.clone(), 0).map_err(|e| e.to_string())?;
    let targets = dir.path().join("targets.csv");
    let csv: String = matrix
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{},{}\n", i * 1000 + 1, s.domain()))
        .collect();
    std::fs::write(&targets, csv).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");

    let bin = env!("CARGO_BIN_EXE_nonce-audit");
    let scan = Command::new(bin)
        .arg("scan")
        .arg("--targets")
        .arg(&targets)
        .args(["--proxy", &sim.proxy_url(), "--http-only", "--interval-ms", "0", "--output"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !scan.status.success() {
        return Err(format!("scan failed: {}", String::from_utf8_lossy(&scan.stderr)));
    }
    let in_run = std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())?;
    let recomputed = Command::new(bin).arg("summarize").arg(&out).output().map_err(|e| e.to_string())?;
    if !recomputed.status.success() {
        return Err(format!("summarize failed: {}", String::from_utf8_lossy(&recomputed.stderr)));
    }
    let histogram = std::fs::read(out.join("histogram.csv")).map_err(|e| e.to_string())?;
    let rehist = Command::new(bin).arg("histogram").arg(&out).output().map_err(|e| e.to_string())?;
    if in_run == recomputed.stdout && histogram == rehist.stdout {
        Ok(format!("{} sites, summary.json ({} bytes) and histogram.csv identical", matrix.len(), in_run.len()))
    } else {
        Err(format!(
            "in-run:\n{}\nrecomputed:\n{}",
            String::from_utf8_lossy(&in_run),
            String::from_utf8_lossy(&recomputed.stdout)
        ))
    }
}
