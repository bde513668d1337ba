//! Page-level results and their site-level rollup.

use serde::{Deserialize, Serialize};

use crate::classify::{CauseKind, Confidence, ReuseCause, ReuseOutcome, ScopeKind, SessionScope};
use crate::crawler::CrawledPage;
use crate::nonce::NonceFinding;
use crate::probe::{PageProbe, ProbeStep};
use crate::session::FetchError;
use crate::target::SiteTarget;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub crawl: CrawledPage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<PageProbe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse: Option<ReuseOutcome>,
    /// Policy nonce repeated between baseline and reuse check (corroborating only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_nonce_repeated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<ReuseCause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_scope: Option<SessionScope>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonce_findings: Vec<NonceFinding>,
}

impl PageRecord {
    /// A crawled page with nonce findings filled in and no probe yet.
    pub fn from_crawl(crawl: CrawledPage) -> Self {
        let mut values: Vec<&str> = Vec::new();
        if crawl.nonce_found {
            let policy = crawl
                .policies
                .policies
                .iter()
                .flat_map(|p| p.directives.iter().flat_map(|d| d.nonces()));
            for v in crawl.script_nonces.iter().map(String::as_str).chain(policy) {
                if !values.contains(&v) {
                    values.push(v);
                }
            }
        }
        let nonce_findings = values.into_iter().filter_map(|v| NonceFinding::assess(v).ok()).collect();
        Self {
            crawl,
            probe: None,
            reuse: None,
            policy_nonce_repeated: None,
            cause: None,
            session_scope: None,
            nonce_findings,
        }
    }

    pub fn is_reusing(&self) -> bool {
        self.reuse == Some(ReuseOutcome::Reused)
    }
}

/// Whether any policy nonce value appears in both the baseline and the reuse check.
pub fn policy_nonce_repeated(probe: &PageProbe) -> Option<bool> {
    let policy_values = |step| {
        probe.nonces(step).map(|n| {
            n.iter()
                .filter(|o| matches!(o.location, crate::nonce::NonceLocation::PolicyDirective(_)))
                .map(|o| o.value.as_str())
                .collect::<Vec<_>>()
        })
    };
    let r1 = policy_values(ProbeStep::Baseline)?;
    let r2 = policy_values(ProbeStep::ReuseCheck)?;
    Some(r1.iter().any(|v| r2.contains(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteCause {
    pub cause: CauseKind,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteReport {
    pub target: SiteTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_error: Option<FetchError>,
    pub uses_csp: bool,
    pub enforcement_seen: bool,
    pub report_only_seen: bool,
    pub report_only_meta_seen: bool,
    pub uses_nonce: bool,
    pub reuses_nonce: bool,
    pub cause: Option<SiteCause>,
    pub cached_nonce_observed: bool,
    pub session_scope: Option<ScopeKind>,
    pub short_nonce: bool,
    pub length_8_nonce: bool,
    pub invalid_nonce: bool,
    pub pages: Vec<PageRecord>,
}

impl SiteReport {
    /// Report-only policies with no enforced policy anywhere on the site.
    pub fn report_only_mode(&self) -> bool {
        self.report_only_seen && !self.enforcement_seen
    }
}

/// Rolls page results up to the site. The site cause is `Cache` only if every
/// reusing page was attributed to a cache.
pub fn aggregate_site(target: SiteTarget, site_error: Option<FetchError>, pages: Vec<PageRecord>) -> SiteReport {
    let any = |f: &dyn Fn(&PageRecord) -> bool| pages.iter().any(f);
    let uses_csp = any(&|p| p.crawl.csp_found);
    let enforcement_seen = any(&|p| p.crawl.policies.has_enforced());
    let report_only_seen = any(&|p| p.crawl.policies.has_report_only());
    let report_only_meta_seen = any(&|p| p.crawl.policies.report_only_meta);
    let uses_nonce = any(&|p| p.crawl.nonce_found);

    let reusing: Vec<&PageRecord> = pages.iter().filter(|p| p.is_reusing()).collect();
    let reuses_nonce = !reusing.is_empty();
    let causes: Vec<&ReuseCause> = reusing.iter().filter_map(|p| p.cause.as_ref()).collect();
    let cause = (!causes.is_empty()).then(|| {
        if causes.iter().all(|c| c.cause == CauseKind::Cache) {
            let confidence = if causes.iter().all(|c| c.confidence == Confidence::Conclusive) {
                Confidence::Conclusive
            } else {
                Confidence::Probable
            };
            SiteCause {
                cause: CauseKind::Cache,
                confidence,
            }
        } else {
            let conclusive = causes
                .iter()
                .any(|c| c.cause == CauseKind::ServerSide && c.confidence == Confidence::Conclusive);
            SiteCause {
                cause: CauseKind::ServerSide,
                confidence: if conclusive { Confidence::Conclusive } else { Confidence::Probable },
            }
        }
    });
    let cached_nonce_observed = causes.iter().any(|c| c.cached_nonce_observed);
    let scopes: Vec<ScopeKind> = reusing.iter().filter_map(|p| p.session_scope.as_ref().map(|s| s.scope)).collect();
    let session_scope = if scopes.contains(&ScopeKind::CrossSession) {
        Some(ScopeKind::CrossSession)
    } else {
        scopes.first().copied()
    };

    let findings = || pages.iter().filter(|p| p.crawl.nonce_found).flat_map(|p| &p.nonce_findings);
    SiteReport {
        short_nonce: findings().any(|f| f.length.is_short),
        length_8_nonce: findings().any(|f| f.length.useful_chars == 8),
        invalid_nonce: findings().any(|f| !f.validity.is_valid),
        target,
        site_error,
        uses_csp,
        enforcement_seen,
        report_only_seen,
        report_only_meta_seen,
        uses_nonce,
        reuses_nonce,
        cause,
        cached_nonce_observed,
        session_scope,
        pages,
    }
}
