//! Scenario configuration and the labels each scenario should produce.

use nonce_audit_core::{CauseKind, Confidence, ScopeKind};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::SimError;

/// Parent domain under which every scenario gets its own site.
pub const SIM_DOMAIN: &str = "sim.test";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonceMode {
    FreshPerRequest,
    StaticGlobal,
    /// Derived from the session cookie.
    SessionBound,
    /// Fresh at the origin, stored by the cache in front of it.
    FreshButCached,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonceAlphabet {
    #[default]
    Base64Url,
    /// base64url with one `$` in the middle.
    WithInvalidChar,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CspDelivery {
    #[default]
    Header,
    Meta,
    Both,
    ReportOnlyHeader,
    ReportOnlyMeta,
}

impl CspDelivery {
    pub fn is_enforced(self) -> bool {
        matches!(self, CspDelivery::Header | CspDelivery::Meta | CspDelivery::Both)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    #[default]
    None,
    /// Key is host, path and query.
    QueryInKey,
    /// Key is host and path only.
    QueryIgnored,
}

/// Header announcing cache status. Without a cache layer the miss value is
/// sent on every response, like a CDN passing requests through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStatusHeader {
    pub name: String,
    #[serde(default = "default_hit")]
    pub hit: String,
    #[serde(default = "default_miss")]
    pub miss: String,
}

fn default_hit() -> String {
    "HIT".into()
}

fn default_miss() -> String {
    "MISS".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// Hosts including the apex domain.
    pub subdomains: usize,
    /// Pages per host including `/`.
    pub pages: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Self { subdomains: 1, pages: 3 }
    }
}

/// What a correct scan of the scenario reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub uses_csp: bool,
    pub uses_nonce: bool,
    pub reuse: bool,
    /// The real cause of reuse.
    pub cause: Option<CauseKind>,
    /// `Probable` where probing cannot separate cache from origin.
    pub confidence: Option<Confidence>,
    pub cached_observed: bool,
    pub session_scope: Option<ScopeKind>,
    pub short: bool,
    pub invalid: bool,
}

impl GroundTruth {
    pub fn is_decisive(&self) -> bool {
        self.confidence == Some(Confidence::Conclusive)
    }
}

fn default_length() -> usize {
    22
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub nonce_mode: NonceMode,
    #[serde(default = "default_length")]
    pub nonce_length: usize,
    #[serde(default)]
    pub nonce_alphabet: NonceAlphabet,
    #[serde(default)]
    pub csp_delivery: CspDelivery,
    #[serde(default)]
    pub cache: CacheMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_status_header: Option<CacheStatusHeader>,
    #[serde(default)]
    pub topology: Topology,
    /// Absolute URLs added to every page.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_links: Vec<String>,
    /// Answer the n-th request for each page (1-based) with a 500.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_nth_request: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<GroundTruth>,
}

impl Scenario {
    pub fn new(name: &str, nonce_mode: NonceMode) -> Self {
        Self {
            name: name.to_string(),
            nonce_mode,
            nonce_length: default_length(),
            nonce_alphabet: NonceAlphabet::default(),
            csp_delivery: CspDelivery::default(),
            cache: CacheMode::default(),
            cache_status_header: None,
            topology: Topology::default(),
            external_links: Vec::new(),
            fail_nth_request: None,
            expected: None,
        }
    }

    /// Site domain: `<name>.sim.test`.
    pub fn domain(&self) -> String {
        format!("{}.{SIM_DOMAIN}", self.name)
    }

    /// Apex first, then `s1.<domain>`, `s2.<domain>`, ...
    pub fn hosts(&self) -> Vec<String> {
        let domain = self.domain();
        std::iter::once(domain.clone())
            .chain((1..self.topology.subdomains).map(|i| format!("s{i}.{domain}")))
            .collect()
    }

    /// `/`, `/p1`, `/p2`, ...
    pub fn paths(&self) -> Vec<String> {
        std::iter::once("/".to_string())
            .chain((1..self.topology.pages).map(|i| format!("/p{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::Scenario(format!("{}: {msg}", self.name)));
        let label_ok = !self.name.is_empty()
            && self.name.len() <= 63
            && !self.name.starts_with('-')
            && !self.name.ends_with('-')
            && self.name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if !label_ok {
            return fail("name must be a lowercase DNS label");
        }
        if self.nonce_length == 0 || (self.nonce_alphabet == NonceAlphabet::WithInvalidChar && self.nonce_length < 2) {
            return fail("nonce_length too small");
        }
        if self.topology.subdomains == 0 || self.topology.pages == 0 {
            return fail("topology needs at least one host and one page");
        }
        match (self.nonce_mode, self.cache) {
            (NonceMode::FreshButCached, CacheMode::None) => return fail("fresh_but_cached requires a cache"),
            (NonceMode::FreshPerRequest, c) if c != CacheMode::None => {
                return fail("fresh_per_request cannot sit behind a cache; use fresh_but_cached");
            }
            _ => {}
        }
        if let Some(expected) = &self.expected {
            let derived = ground_truth(self);
            if *expected != derived {
                return fail(&format!("expected labels {expected:?} disagree with construction {derived:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Signal {
    Hit,
    Miss,
    Silent,
}

/// Labels implied by how the simulator serves the scenario.
///
/// The crawl visit stores each page in the cache, so every probe request with
/// the page's original URL is a cache hit. A cache-busted request reaches the
/// origin only when the query is part of the key. The cookie-free request is
/// answered from the cache whenever a cache exists, since keys ignore cookies.
pub fn ground_truth(scenario: &Scenario) -> GroundTruth {
    let delivery = scenario.csp_delivery;
    let uses_csp = delivery != CspDelivery::ReportOnlyMeta;
    let uses_nonce = delivery.is_enforced();
    let reuse = uses_nonce && scenario.nonce_mode != NonceMode::FreshPerRequest;
    let short = uses_nonce && scenario.nonce_length < 22;
    let invalid = uses_nonce && scenario.nonce_alphabet == NonceAlphabet::WithInvalidChar;
    if !reuse {
        return GroundTruth {
            uses_csp,
            uses_nonce,
            reuse,
            cause: None,
            confidence: None,
            cached_observed: false,
            session_scope: None,
            short,
            invalid,
        };
    }

    let has_cache = scenario.cache != CacheMode::None;
    let header = scenario.cache_status_header.is_some();
    let reuse_check = match (has_cache, header) {
        (_, false) => Signal::Silent,
        (true, true) => Signal::Hit,
        (false, true) => Signal::Miss,
    };
    let busted_reaches_origin = scenario.cache != CacheMode::QueryIgnored;
    let busted = match (busted_reaches_origin, header) {
        (_, false) => Signal::Silent,
        (true, true) => Signal::Miss,
        (false, true) => Signal::Hit,
    };
    let busted_changes_nonce = scenario.nonce_mode == NonceMode::FreshButCached && busted_reaches_origin;
    let one_nonce_per_session = matches!(scenario.nonce_mode, NonceMode::StaticGlobal | NonceMode::SessionBound);
    let multi_page = scenario.topology.subdomains * scenario.topology.pages >= 2;

    let decisive = reuse_check == Signal::Miss || busted_changes_nonce || busted == Signal::Miss || (one_nonce_per_session && multi_page);
    let cause = if scenario.nonce_mode == NonceMode::FreshButCached {
        CauseKind::Cache
    } else {
        CauseKind::ServerSide
    };
    let session_scope = if scenario.nonce_mode == NonceMode::SessionBound && !has_cache {
        ScopeKind::SameSessionOnly
    } else {
        ScopeKind::CrossSession
    };
    GroundTruth {
        uses_csp,
        uses_nonce,
        reuse,
        cause: Some(cause),
        confidence: Some(if decisive { Confidence::Conclusive } else { Confidence::Probable }),
        cached_observed: busted_changes_nonce || reuse_check == Signal::Hit,
        session_scope: Some(session_scope),
        short,
        invalid,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub scenario: Vec<Scenario>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Vec<Scenario>, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        let mut names = std::collections::HashSet::new();
        for s in &file.scenario {
            s.validate()?;
            if !names.insert(s.name.clone()) {
                return Err(SimError::Scenario(format!("{}: duplicate scenario name", s.name)));
            }
        }
        Ok(file.scenario)
    }

    pub fn load(path: &Path) -> Result<Vec<Scenario>, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Scenarios covering every attribution rule, both session scopes, short and
/// invalid nonces, and each delivery channel.
pub fn builtin_matrix() -> Vec<Scenario> {
    ScenarioFile::parse(include_str!("../scenarios/matrix.toml")).expect("bundled matrix is valid")
}

/// Link-structure scenarios for crawler tests.
pub fn crawl_scenarios() -> Vec<Scenario> {
    ScenarioFile::parse(include_str!("../scenarios/crawl.toml")).expect("bundled crawl scenarios are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hosts_and_paths() {
        let mut s = Scenario::new("demo", NonceMode::StaticGlobal);
        s.topology = Topology { subdomains: 3, pages: 2 };
        assert_eq!(s.hosts(), ["demo.sim.test", "s1.demo.sim.test", "s2.demo.sim.test"]);
        assert_eq!(s.paths(), ["/", "/p1"]);
    }

    #[test]
    fn validation() {
        assert!(Scenario::new("Bad_Name", NonceMode::StaticGlobal).validate().is_err());
        assert!(Scenario::new("fbc", NonceMode::FreshButCached).validate().is_err());
        let mut cached_fresh = Scenario::new("fresh", NonceMode::FreshPerRequest);
        cached_fresh.cache = CacheMode::QueryInKey;
        assert!(cached_fresh.validate().is_err());
        let mut wrong = Scenario::new("wrong", NonceMode::StaticGlobal);
        let mut labels = ground_truth(&wrong);
        labels.reuse = false;
        wrong.expected = Some(labels);
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn static_without_cache() {
        let t = ground_truth(&Scenario::new("s", NonceMode::StaticGlobal));
        assert!(t.reuse);
        assert_eq!(t.cause, Some(CauseKind::ServerSide));
        assert_eq!(t.session_scope, Some(ScopeKind::CrossSession));
        assert!(t.is_decisive());
    }

    #[test]
    fn fresh_never_reuses() {
        let t = ground_truth(&Scenario::new("f", NonceMode::FreshPerRequest));
        assert!(!t.reuse);
        assert_eq!(t.cause, None);
    }

    #[test]
    fn cached_dynamic_with_keyed_query() {
        let mut s = Scenario::new("c", NonceMode::FreshButCached);
        s.cache = CacheMode::QueryInKey;
        let t = ground_truth(&s);
        assert_eq!((t.reuse, t.cause, t.cached_observed), (true, Some(CauseKind::Cache), true));
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = "[[scenario]]\nname = \"a\"\nnonce_mode = \"static_global\"\n[[scenario]]\nname = \"a\"\nnonce_mode = \"static_global\"\n";
        assert!(ScenarioFile::parse(text).is_err());
    }

    #[test]
    fn bundled_matrix_covers_every_rule() {
        let matrix = builtin_matrix();
        assert!(matrix.len() >= 12);
        let truths: Vec<_> = matrix.iter().map(ground_truth).collect();
        assert!(truths.iter().any(|t| t.session_scope == Some(ScopeKind::SameSessionOnly)));
        assert!(truths.iter().any(|t| t.session_scope == Some(ScopeKind::CrossSession)));
        assert!(truths.iter().any(|t| t.confidence == Some(Confidence::Probable)));
        assert!(truths.iter().any(|t| t.cause == Some(CauseKind::Cache) && t.is_decisive()));
        assert!(truths.iter().any(|t| t.short));
        assert!(truths.iter().any(|t| t.invalid));
        assert!(truths.iter().any(|t| !t.reuse));
        assert!(matrix.iter().all(|s| s.expected.is_some()));
    }
}
