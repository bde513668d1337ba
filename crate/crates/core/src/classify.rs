//! Turns probe evidence into reuse, cause and session-scope verdicts.
//!
//! Cause attribution runs these checks in order, first match wins:
//!
//! 1. the reuse-check response carries a cache MISS status: server side, conclusive;
//! 2. the cache-busted response carries a different nonce: cache, conclusive;
//! 3. the cache-busted response repeats the nonce with a MISS status: server side, conclusive;
//! 4. the reused value is the only nonce on two or more pages of the site: server side, conclusive;
//! 5. anything else: server side, probable.
//!
//! Independently, a cached nonce is recorded when check 2 fires or the reuse-check
//! response carries a cache HIT status.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::cache::{CacheVerdict, HeaderCatalog};
use crate::probe::{PageProbe, ProbeStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseOutcome {
    Reused,
    NotReused,
    /// The baseline or reuse-check fetch failed.
    Unknown,
}

pub fn detect_reuse(probe: &PageProbe) -> ReuseOutcome {
    if probe.nonces(ProbeStep::Baseline).is_none() || probe.nonces(ProbeStep::ReuseCheck).is_none() {
        return ReuseOutcome::Unknown;
    }
    if probe.reused_values().is_empty() {
        ReuseOutcome::NotReused
    } else {
        ReuseOutcome::Reused
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseKind {
    Cache,
    ServerSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Conclusive,
    Probable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    ReuseCheckMiss,
    CacheBustChanged,
    CacheBustMiss,
    StaticSitewide,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseSignals {
    pub static_sitewide: bool,
    /// `None` when the cache-busted step is missing or failed.
    pub cb_nonce_changed: Option<bool>,
    pub chh_r2: CacheVerdict,
    pub chh_r3: Option<CacheVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseCause {
    pub cause: CauseKind,
    pub confidence: Confidence,
    pub rule: DecisionRule,
    pub cached_nonce_observed: bool,
    pub signals: CauseSignals,
}

/// Script nonce values seen in the baseline response of each probed page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiteContext {
    pages: BTreeMap<String, BTreeSet<String>>,
}

impl SiteContext {
    pub fn from_probes<'a>(probes: impl IntoIterator<Item = &'a PageProbe>) -> Self {
        let mut ctx = Self::default();
        for probe in probes {
            if let Some(nonces) = probe.nonces(ProbeStep::Baseline) {
                ctx.add_page(&probe.url, nonces.iter().filter(|o| o.is_script()).map(|o| o.value.as_str()));
            }
        }
        ctx
    }

    pub fn add_page<'a>(&mut self, url: &str, values: impl IntoIterator<Item = &'a str>) {
        let values: BTreeSet<String> = values.into_iter().map(str::to_string).collect();
        if !values.is_empty() {
            self.pages.entry(url.to_string()).or_default().extend(values);
        }
    }

    pub fn nonce_pages(&self) -> usize {
        self.pages.len()
    }

    /// At least two pages carry nonces and every one of them carries `value`.
    pub fn is_static_sitewide(&self, value: &str) -> bool {
        self.pages.len() >= 2 && self.pages.values().all(|v| v.contains(value))
    }
}

fn script_values(probe: &PageProbe, step: ProbeStep) -> Option<BTreeSet<&str>> {
    probe
        .nonces(step)
        .map(|n| n.iter().filter(|o| o.is_script()).map(|o| o.value.as_str()).collect())
}

/// Attributes a detected reuse to a cache or to the origin's own code.
pub fn classify_cause(probe: &PageProbe, site: &SiteContext, catalog: &HeaderCatalog) -> ReuseCause {
    let reused = probe.reused_values();
    let chh_r2 = probe
        .response(ProbeStep::ReuseCheck)
        .map(|r| catalog.classify(&r.headers))
        .unwrap_or_else(CacheVerdict::unknown);
    let r3_ok = probe.step(ProbeStep::CacheBusted).is_some_and(|s| s.succeeded());
    let chh_r3 = r3_ok
        .then(|| probe.response(ProbeStep::CacheBusted))
        .flatten()
        .map(|r| catalog.classify(&r.headers));
    let cb_nonce_changed = if r3_ok {
        script_values(probe, ProbeStep::CacheBusted).map(|r3| !reused.iter().any(|v| r3.contains(v.as_str())))
    } else {
        None
    };
    let static_sitewide = reused.iter().any(|v| site.is_static_sitewide(v));

    let (cause, confidence, rule) = if chh_r2.is_miss() {
        (CauseKind::ServerSide, Confidence::Conclusive, DecisionRule::ReuseCheckMiss)
    } else if cb_nonce_changed == Some(true) {
        (CauseKind::Cache, Confidence::Conclusive, DecisionRule::CacheBustChanged)
    } else if cb_nonce_changed == Some(false) && chh_r3.as_ref().is_some_and(CacheVerdict::is_miss) {
        (CauseKind::ServerSide, Confidence::Conclusive, DecisionRule::CacheBustMiss)
    } else if static_sitewide {
        (CauseKind::ServerSide, Confidence::Conclusive, DecisionRule::StaticSitewide)
    } else {
        (CauseKind::ServerSide, Confidence::Probable, DecisionRule::Residual)
    };
    let cached_nonce_observed = rule == DecisionRule::CacheBustChanged || chh_r2.is_hit();
    ReuseCause {
        cause,
        confidence,
        rule,
        cached_nonce_observed,
        signals: CauseSignals {
            static_sitewide,
            cb_nonce_changed,
            chh_r2,
            chh_r3,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    SameSessionOnly,
    CrossSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionScope {
    pub scope: ScopeKind,
    pub r1_values: Vec<String>,
    pub r4_values: Vec<String>,
}

/// Cross-session iff a reused value reappears in the cookie-free response.
/// `None` when that response is missing or failed.
pub fn classify_session_scope(probe: &PageProbe) -> Option<SessionScope> {
    let r4 = script_values(probe, ProbeStep::CookieFree)?;
    let reused = probe.reused_values();
    let scope = if reused.iter().any(|v| r4.contains(v.as_str())) {
        ScopeKind::CrossSession
    } else {
        ScopeKind::SameSessionOnly
    };
    Some(SessionScope {
        scope,
        r1_values: reused,
        r4_values: r4.into_iter().map(str::to_string).collect(),
    })
}
