//! Breadth-first discovery of a site's internal pages under a crawl budget.

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::OnceLock;
use texting_robots::Robot;
use url::Url;

use crate::csp::{PolicySet, extract_policies_from};
use crate::nonce::{NonceLocation, dom_nonces};
use crate::session::{FetchError, FetchErrorKind, Session};
use crate::target::{CrawlBudget, SiteTarget};
use crate::urls::{is_internal, normalize_url};

/// Product token matched against robots.txt groups.
pub const ROBOTS_AGENT: &str = "nonce-audit";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemePolicy {
    /// Try `https://` for the homepage, fall back to `http://` on transport failure.
    #[default]
    HttpsFirst,
    HttpOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrawlOptions {
    pub honor_robots: bool,
    pub scheme: SchemePolicy,
}

impl Default for CrawlOptions {
    fn default() -> Self {
        Self {
            honor_robots: true,
            scheme: SchemePolicy::HttpsFirst,
        }
    }
}

/// One visited page and what CSP detection found on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawledPage {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FetchError>,
    pub depth: usize,
    pub policies: PolicySet,
    /// Distinct script-tag nonce values in document order.
    pub script_nonces: Vec<String>,
    pub csp_found: bool,
    pub nonce_found: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlResult {
    pub target: SiteTarget,
    pub pages: Vec<CrawledPage>,
    pub errors: Vec<(String, FetchErrorKind)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_by_robots: Vec<String>,
    /// Set when the homepage could not be reached at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_error: Option<FetchError>,
}

impl CrawlResult {
    pub fn nonce_pages(&self) -> impl Iterator<Item = &CrawledPage> {
        self.pages.iter().filter(|p| p.nonce_found)
    }
}

fn anchor_selector() -> &'static Selector {
    static SEL: OnceLock<Selector> = OnceLock::new();
    SEL.get_or_init(|| Selector::parse("a[href]").expect("static selector"))
}

pub(crate) fn links_in(document: &Html, base_url: &Url) -> Vec<Url> {
    let mut seen = HashSet::new();
    document
        .select(anchor_selector())
        .filter_map(|a| a.value().attr("href"))
        .filter_map(|href| base_url.join(href.trim()).ok())
        .filter_map(|u| normalize_url(u.as_str()).ok())
        .filter(|u| seen.insert(u.to_string()))
        .collect()
}

/// Absolute, fragment-free targets of `<a href>` elements, first appearance first.
pub fn extract_links(html: &str, base_url: &Url) -> Vec<Url> {
    links_in(&Html::parse_document(html), base_url)
}

fn is_transport_failure(err: &FetchError) -> bool {
    matches!(
        err.kind,
        FetchErrorKind::Tls | FetchErrorKind::Connect | FetchErrorKind::Timeout | FetchErrorKind::Other
    )
}

enum Visit {
    Fetched,
    Failed(FetchError),
    Skipped,
}

struct Crawl<'a> {
    target: &'a SiteTarget,
    budget: &'a CrawlBudget,
    options: &'a CrawlOptions,
    session: &'a mut Session,
    result: CrawlResult,
    queue: VecDeque<(Url, usize)>,
    seen: HashSet<String>,
    hosts: Vec<String>,
    pages_per_host: HashMap<String, usize>,
    robots: HashMap<String, Option<Robot>>,
}

impl Crawl<'_> {
    fn allowed_by_robots(&mut self, url: &Url) -> bool {
        if !self.options.honor_robots {
            return true;
        }
        let origin = url.origin().ascii_serialization();
        if !self.robots.contains_key(&origin) {
            let robot = Url::parse(&format!("{origin}/robots.txt"))
                .ok()
                .and_then(|robots_url| self.session.fetch(&robots_url, true).ok())
                .filter(|r| r.is_success())
                .and_then(|r| Robot::new(ROBOTS_AGENT, r.body.as_bytes()).ok());
            self.robots.insert(origin.clone(), robot);
        }
        match &self.robots[&origin] {
            Some(robot) => robot.allowed(url.as_str()),
            None => true,
        }
    }

    /// Claims a page slot for the url's host, or `false` when the budget forbids it.
    fn claim_slot(&mut self, url: &Url) -> bool {
        let Some(host) = url.host_str().map(str::to_ascii_lowercase) else {
            return false;
        };
        if !self.hosts.contains(&host) {
            if self.hosts.len() >= self.budget.max_subdomains {
                return false;
            }
            self.hosts.push(host.clone());
        }
        let count = self.pages_per_host.entry(host).or_default();
        if *count >= self.budget.max_pages_per_subdomain {
            return false;
        }
        *count += 1;
        true
    }

    fn visit(&mut self, url: Url, depth: usize) -> Visit {
        if !is_internal(&url, self.target) {
            return Visit::Skipped;
        }
        let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
        let host_known = self.hosts.contains(&host);
        let host_full = self.pages_per_host.get(&host).copied().unwrap_or(0) >= self.budget.max_pages_per_subdomain;
        if (!host_known && self.hosts.len() >= self.budget.max_subdomains) || host_full {
            return Visit::Skipped;
        }
        if !self.allowed_by_robots(&url) {
            self.result.skipped_by_robots.push(url.to_string());
            return Visit::Skipped;
        }
        if !self.claim_slot(&url) {
            return Visit::Skipped;
        }
        self.seen.insert(url.to_string());

        let mut page = CrawledPage {
            url: url.to_string(),
            final_url: None,
            status: None,
            error: None,
            depth,
            policies: PolicySet::default(),
            script_nonces: Vec::new(),
            csp_found: false,
            nonce_found: false,
        };
        let response = match self.session.fetch(&url, true) {
            Ok(r) => r,
            Err(err) => {
                self.result.errors.push((url.to_string(), err.kind));
                page.error = Some(err.clone());
                self.result.pages.push(page);
                return Visit::Failed(err);
            }
        };
        page.status = Some(response.status);
        page.final_url = Some(response.final_url.clone());
        let final_url = normalize_url(&response.final_url).unwrap_or_else(|_| url.clone());
        self.seen.insert(final_url.to_string());

        let document = Html::parse_document(&response.body);
        page.policies = extract_policies_from(&response.final_url, &response.headers, &document);
        for (location, value) in dom_nonces(&document) {
            if location == NonceLocation::ScriptTag && !page.script_nonces.contains(&value) {
                page.script_nonces.push(value);
            }
        }
        page.csp_found = !page.policies.is_empty();
        page.nonce_found = page.policies.has_enforced_nonce() && !page.script_nonces.is_empty();

        if !response.is_success() {
            self.result.errors.push((url.to_string(), FetchErrorKind::Status));
        }
        let may_descend = self.budget.max_depth.is_none_or(|max| depth < max);
        if response.is_success() && response.is_html() && may_descend && is_internal(&final_url, self.target) {
            for link in links_in(&document, &final_url) {
                if is_internal(&link, self.target) && self.seen.insert(link.to_string()) {
                    self.queue.push_back((link, depth + 1));
                }
            }
        }
        self.result.pages.push(page);
        Visit::Fetched
    }
}

/// Crawls `target` breadth-first from its homepage, recording CSP and nonce
/// detection for every page fetched. Only internal links are followed.
pub fn crawl_site(target: &SiteTarget, budget: &CrawlBudget, options: &CrawlOptions, session: &mut Session) -> CrawlResult {
    let mut crawl = Crawl {
        target,
        budget,
        options,
        session,
        result: CrawlResult {
            target: target.clone(),
            pages: Vec::new(),
            errors: Vec::new(),
            skipped_by_robots: Vec::new(),
            site_error: None,
        },
        queue: VecDeque::new(),
        seen: HashSet::new(),
        hosts: Vec::new(),
        pages_per_host: HashMap::new(),
        robots: HashMap::new(),
    };
    if let Err(reason) = budget.validate() {
        crawl.result.site_error = Some(FetchError::new(FetchErrorKind::Client, reason.to_string()));
        return crawl.result;
    }

    let schemes: &[&str] = match options.scheme {
        SchemePolicy::HttpsFirst => &["https", "http"],
        SchemePolicy::HttpOnly => &["http"],
    };
    let mut opened = false;
    for scheme in schemes {
        let Ok(home) = Url::parse(&format!("{scheme}://{}/", target.registrable_domain)) else {
            continue;
        };
        let before = crawl.result.pages.len();
        match crawl.visit(home, 0) {
            Visit::Failed(err) if is_transport_failure(&err) => {
                // A failed attempt on one scheme does not count against the budget.
                crawl.result.pages.truncate(before);
                crawl.result.errors.clear();
                crawl.hosts.clear();
                crawl.pages_per_host.clear();
                crawl.seen.clear();
                crawl.result.site_error = Some(err);
            }
            Visit::Skipped => break,
            _ => {
                opened = true;
                break;
            }
        }
    }
    if !opened {
        if crawl.result.site_error.is_none() {
            crawl.result.site_error = Some(FetchError::new(FetchErrorKind::Client, "homepage not crawlable"));
        }
        return crawl.result;
    }
    crawl.result.site_error = None;

    while let Some((url, depth)) = crawl.queue.pop_front() {
        crawl.visit(url, depth);
    }
    crawl.result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(u: &str) -> Url {
        Url::parse(u).unwrap()
    }

    fn strings(urls: Vec<Url>) -> Vec<String> {
        urls.into_iter().map(|u| u.to_string()).collect()
    }

    #[test]
    fn relative_link() {
        assert_eq!(strings(extract_links(r#"<a href="/b">b</a>"#, &base("https://s.ex/a"))), ["https://s.ex/b"]);
    }

    #[test]
    fn fragment_stripped() {
        assert_eq!(
            strings(extract_links(r#"<a href="https://ex.com/p#frag">x</a>"#, &base("https://s.ex/"))),
            ["https://ex.com/p"]
        );
    }

    #[test]
    fn duplicates_removed_in_order() {
        let html = r#"<a href="/x#1">1</a><a href="/y">2</a><a href="HTTPS://S.EX:443/x">3</a>"#;
        assert_eq!(
            strings(extract_links(html, &base("https://s.ex/"))),
            ["https://s.ex/x", "https://s.ex/y"]
        );
    }

    #[test]
    fn non_http_and_broken_links_skipped() {
        let html = r#"<a href="mailto:a@b.c">m</a><a href="javascript:void(0)">j</a><a href="http://[::1">bad</a><a>none</a><a href="/ok">"#;
        assert_eq!(strings(extract_links(html, &base("https://s.ex/"))), ["https://s.ex/ok"]);
    }

    #[test]
    fn anchors_only() {
        let html = r#"<iframe src="/frame"></iframe><form action="/form"></form><link href="/style.css">"#;
        assert!(extract_links(html, &base("https://s.ex/")).is_empty());
    }
}
