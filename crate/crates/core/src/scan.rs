//! End-to-end scan of one site, and of many sites at once.

use crate::cache::HeaderCatalog;
use crate::classify::{ReuseOutcome, SiteContext, classify_cause, classify_session_scope, detect_reuse};
use crate::crawler::{CrawlOptions, crawl_site};
use crate::probe::{ProbeOptions, run_probe_sequence};
use crate::session::{Session, SessionConfig};
use crate::site::{PageRecord, SiteReport, aggregate_site, policy_nonce_repeated};
use crate::target::{CrawlBudget, SiteTarget};
use crate::urls::normalize_url;

#[derive(Debug, Clone, Default)]
pub struct ScanConfig {
    pub budget: CrawlBudget,
    pub crawl: CrawlOptions,
    /// Timeout and pacing are taken from `budget`.
    pub session: SessionConfig,
    pub probe: ProbeOptions,
    pub catalog: HeaderCatalog,
}

impl ScanConfig {
    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            timeout: self.budget.request_timeout,
            min_request_interval: self.budget.min_request_interval,
            ..self.session.clone()
        }
    }
}

/// Crawl, probe every nonce page, then classify with the whole site in view.
pub fn scan_site(target: &SiteTarget, config: &ScanConfig) -> SiteReport {
    let mut session = match Session::new(target.clone(), config.session_config()) {
        Ok(s) => s,
        Err(err) => return aggregate_site(target.clone(), Some(err), Vec::new()),
    };
    let crawl = crawl_site(target, &config.budget, &config.crawl, &mut session);
    let site_error = crawl.site_error.clone();

    let mut pages: Vec<PageRecord> = crawl.pages.into_iter().map(PageRecord::from_crawl).collect();
    for page in pages.iter_mut().filter(|p| p.crawl.nonce_found) {
        let Ok(url) = normalize_url(&page.crawl.url) else {
            continue;
        };
        page.probe = Some(run_probe_sequence(&url, &mut session, &config.probe));
    }

    let context = SiteContext::from_probes(pages.iter().filter_map(|p| p.probe.as_ref()));
    for page in &mut pages {
        let Some(probe) = &page.probe else {
            continue;
        };
        let reuse = detect_reuse(probe);
        page.reuse = Some(reuse);
        page.policy_nonce_repeated = policy_nonce_repeated(probe);
        if reuse == ReuseOutcome::Reused {
            page.cause = Some(classify_cause(probe, &context, &config.catalog));
            page.session_scope = classify_session_scope(probe);
        }
    }
    aggregate_site(target.clone(), site_error, pages)
}

/// Scans one site after another on the calling thread.
pub fn scan_targets_sequential<E>(
    targets: &[SiteTarget],
    config: &ScanConfig,
    mut sink: impl FnMut(SiteReport) -> Result<(), E>,
) -> Result<(), E> {
    for target in targets {
        sink(scan_site(target, config))?;
    }
    Ok(())
}

/// Scans sites on the rayon pool. Requests within one site stay sequential;
/// finished reports reach `sink` one at a time on the calling thread.
#[cfg(feature = "parallel")]
pub fn scan_targets_parallel<E>(
    targets: &[SiteTarget],
    config: &ScanConfig,
    mut sink: impl FnMut(SiteReport) -> Result<(), E>,
) -> Result<(), E> {
    use rayon::prelude::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::mpsc;

    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        let stop = &stop;
        scope.spawn(move || {
            targets.par_iter().for_each_with(tx, |tx, target| {
                if !stop.load(Ordering::Relaxed) {
                    let _ = tx.send(scan_site(target, config));
                }
            });
        });
        for report in rx {
            if let Err(e) = sink(report) {
                stop.store(true, Ordering::Relaxed);
                return Err(e);
            }
        }
        Ok(())
    })
}

/// Parallel across sites when the `parallel` feature is enabled.
pub fn scan_targets<E>(
    targets: &[SiteTarget],
    config: &ScanConfig,
    sink: impl FnMut(SiteReport) -> Result<(), E>,
) -> Result<(), E> {
    #[cfg(feature = "parallel")]
    {
        scan_targets_parallel(targets, config, sink)
    }
    #[cfg(not(feature = "parallel"))]
    {
        scan_targets_sequential(targets, config, sink)
    }
}

/// Sizes the global worker pool. Has no effect without the `parallel` feature.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}
