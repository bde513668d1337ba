//! Auditing of Content-Security-Policy nonces.
//!
//! A scan crawls a site, finds pages whose enforced policy relies on nonces,
//! re-requests each of them to detect nonce reuse, and attributes any reuse
//! either to a web cache or to the origin, within one session or across
//! sessions. Nonce length and alphabet are checked along the way.
//!
//! The `parallel` feature (on by default) spreads sites and batch analysis
//! over a rayon pool; requests to a single site are always sequential.

pub mod analysis;
pub mod cache;
pub mod classify;
pub mod crawler;
pub mod csp;
pub mod error;
pub mod headers;
pub mod nonce;
pub mod probe;
pub mod report;
pub mod scan;
pub mod session;
pub mod site;
pub mod target;
pub mod urls;

pub use cache::{CacheStatus, CacheVerdict, HeaderCatalog, classify_response};
pub use classify::{
    CauseKind, Confidence, DecisionRule, ReuseCause, ReuseOutcome, ScopeKind, SessionScope, SiteContext,
    classify_cause, classify_session_scope, detect_reuse,
};
pub use crawler::{CrawlOptions, CrawlResult, SchemePolicy, crawl_site, extract_links};
pub use csp::{Delivery, Disposition, Policy, PolicySet, allows_inline_script, extract_policies, nonce_sources, parse_policy};
pub use error::{NonceError, ReportError, TargetError, UrlError};
pub use headers::HeaderList;
pub use nonce::{LengthVerdict, NonceObservation, ValidityVerdict, check_length, check_validity, extract_dom_nonces};
pub use probe::{PageProbe, ProbeOptions, ProbeStep, run_probe_sequence};
pub use report::{OutputDir, RankHistogram, RunSummary, Share, rank_histogram, summarize};
pub use scan::{ScanConfig, scan_site, scan_targets};
pub use session::{FetchError, FetchErrorKind, ProbeResponse, Session, SessionConfig};
pub use site::{PageRecord, SiteReport, aggregate_site};
pub use target::{CrawlBudget, SiteTarget};
pub use urls::{add_cache_buster, is_internal, normalize_url};
