//! Request handling, the cache layer and the HTTP front end.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::SimError;
use crate::scenario::{CacheMode, CspDelivery, NonceAlphabet, NonceMode, Scenario};

pub const SESSION_COOKIE: &str = "sim_sid";
pub const LOG_PATH: &str = "/__sim/log";
const WORKERS: usize = 8;
const B64URL: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

/// The parts of a request the simulator looks at.
#[derive(Debug, Clone, Default)]
pub struct RequestInfo {
    pub method: String,
    /// Origin form (`/path?q`) or absolute form when proxied.
    pub target: String,
    pub host: Option<String>,
    pub cookie: Option<String>,
}

impl RequestInfo {
    pub fn get(target: &str) -> Self {
        Self {
            method: "GET".into(),
            target: target.into(),
            ..Self::default()
        }
    }

    pub fn with_cookie(mut self, cookie: &str) -> Self {
        self.cookie = Some(cookie.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl SimResponse {
    fn text(status: u16, body: &str) -> Self {
        Self {
            status,
            headers: vec![("Content-Type".into(), "text/plain; charset=utf-8".into())],
            body: body.into(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub method: String,
    pub url: String,
    pub host: String,
    pub path: String,
    pub query: Option<String>,
    pub cookie_present: bool,
    pub cookie: Option<String>,
    pub status: u16,
    /// `origin`, `cache_hit`, `robots`, `not_found`, `unknown_host`, `failure`, `log` or `bad_request`.
    pub served: String,
}

#[derive(Default)]
struct Inner {
    cache: HashMap<String, SimResponse>,
    hits_per_page: HashMap<String, u32>,
    log: Vec<LogEntry>,
    sessions: u64,
}

/// Scenario lookup plus mutable cache and log, independent of any socket.
pub struct SimState {
    scenarios: Vec<Scenario>,
    by_domain: HashMap<String, usize>,
    inner: Mutex<Inner>,
}

impl SimState {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self, SimError> {
        let mut by_domain = HashMap::new();
        for (i, s) in scenarios.iter().enumerate() {
            s.validate()?;
            if by_domain.insert(s.domain(), i).is_some() {
                return Err(SimError::Scenario(format!("{}: duplicate scenario name", s.name)));
            }
        }
        Ok(Self {
            scenarios,
            by_domain,
            inner: Mutex::new(Inner::default()),
        })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn request_log(&self) -> Vec<LogEntry> {
        self.lock().log.clone()
    }

    pub fn clear_log(&self) {
        self.lock().log.clear();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn scenario_for(&self, host: &str) -> Option<&Scenario> {
        let (_, domain) = host.split_once('.').unwrap_or(("", host));
        let idx = self.by_domain.get(host).or_else(|| self.by_domain.get(domain))?;
        let s = &self.scenarios[*idx];
        s.hosts().iter().any(|h| h == host).then_some(s)
    }

    pub fn handle(&self, req: &RequestInfo) -> SimResponse {
        let url = if req.target.starts_with("http://") || req.target.starts_with("https://") {
            Url::parse(&req.target).ok()
        } else {
            let host = req.host.as_deref().unwrap_or("localhost");
            Url::parse(&format!("http://{host}{}", req.target)).ok()
        };
        let Some(url) = url else {
            let resp = SimResponse::text(400, "bad request target");
            self.log(req, None, &resp, "bad_request");
            return resp;
        };
        let host = url.host_str().unwrap_or_default().to_ascii_lowercase();

        if url.path() == LOG_PATH {
            let mut inner = self.lock();
            let body = serde_json::to_string(&inner.log).unwrap_or_default();
            let mut resp = SimResponse::text(200, &body);
            resp.headers[0].1 = "application/json".into();
            push_log(&mut inner, req, Some(&url), &resp, "log");
            return resp;
        }
        let Some(scenario) = self.scenario_for(&host) else {
            let resp = SimResponse::text(404, "unknown host");
            self.log(req, Some(&url), &resp, "unknown_host");
            return resp;
        };
        if url.path() == "/robots.txt" {
            let resp = SimResponse::text(404, "no robots.txt");
            self.log(req, Some(&url), &resp, "robots");
            return resp;
        }
        if !scenario.paths().iter().any(|p| p == url.path()) {
            let resp = SimResponse::text(404, "not found");
            self.log(req, Some(&url), &resp, "not_found");
            return resp;
        }

        let mut inner = self.lock();
        let page_key = format!("{host}{}", url.path());
        let count = inner.hits_per_page.entry(page_key.clone()).or_insert(0);
        *count += 1;
        if scenario.fail_nth_request == Some(*count) {
            let resp = SimResponse::text(500, "simulated failure");
            push_log(&mut inner, req, Some(&url), &resp, "failure");
            return resp;
        }

        let cache_key = match scenario.cache {
            CacheMode::None => None,
            CacheMode::QueryIgnored => Some(page_key),
            CacheMode::QueryInKey => Some(match url.query() {
                Some(q) => format!("{page_key}?{q}"),
                None => page_key,
            }),
        };
        if let Some(stored) = cache_key.as_ref().and_then(|k| inner.cache.get(k)).cloned() {
            let mut resp = stored;
            if let Some(h) = &scenario.cache_status_header {
                resp.headers.push((h.name.clone(), h.hit.clone()));
            }
            push_log(&mut inner, req, Some(&url), &resp, "cache_hit");
            return resp;
        }

        let mut resp = render_page(scenario, &host, url.path(), req.cookie.as_deref(), &mut inner.sessions);
        if let Some(key) = cache_key {
            let mut stored = resp.clone();
            stored.headers.retain(|(n, _)| !n.eq_ignore_ascii_case("set-cookie"));
            inner.cache.insert(key, stored);
        }
        if let Some(h) = &scenario.cache_status_header {
            resp.headers.push((h.name.clone(), h.miss.clone()));
        }
        push_log(&mut inner, req, Some(&url), &resp, "origin");
        resp
    }

    fn log(&self, req: &RequestInfo, url: Option<&Url>, resp: &SimResponse, served: &str) {
        push_log(&mut self.lock(), req, url, resp, served);
    }
}

fn push_log(inner: &mut Inner, req: &RequestInfo, url: Option<&Url>, resp: &SimResponse, served: &str) {
    let seq = inner.log.len() as u64 + 1;
    inner.log.push(LogEntry {
        seq,
        method: req.method.clone(),
        url: url.map_or_else(|| req.target.clone(), Url::to_string),
        host: url.and_then(Url::host_str).unwrap_or_default().to_string(),
        path: url.map_or_else(String::new, |u| u.path().to_string()),
        query: url.and_then(Url::query).map(str::to_string),
        cookie_present: req.cookie.is_some(),
        cookie: req.cookie.clone(),
        status: resp.status,
        served: served.into(),
    });
}

fn session_id(cookie: Option<&str>) -> Option<&str> {
    cookie?
        .split(';')
        .filter_map(|c| c.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v)
}

fn encode(bytes: impl Iterator<Item = u8>, len: usize) -> String {
    bytes.take(len).map(|b| B64URL[(b & 63) as usize] as char).collect()
}

fn derived_bytes(seed: &str) -> impl Iterator<Item = u8> {
    (0u32..).flat_map(move |block| {
        let mut h = Sha256::new();
        h.update(seed.as_bytes());
        h.update(block.to_be_bytes());
        h.finalize().to_vec()
    })
}

fn make_nonce(scenario: &Scenario, sid: &str) -> String {
    let len = scenario.nonce_length;
    let mut nonce = match scenario.nonce_mode {
        NonceMode::StaticGlobal => encode(derived_bytes(&scenario.name), len),
        NonceMode::SessionBound => encode(derived_bytes(&format!("{}/{sid}", scenario.name)), len),
        NonceMode::FreshPerRequest | NonceMode::FreshButCached => encode(std::iter::repeat_with(rand::random::<u8>), len),
    };
    if scenario.nonce_alphabet == NonceAlphabet::WithInvalidChar {
        let mid = len / 2;
        nonce.replace_range(mid..mid + 1, "$");
    }
    nonce
}

fn render_page(scenario: &Scenario, host: &str, path: &str, cookie: Option<&str>, sessions: &mut u64) -> SimResponse {
    let mut headers = vec![("Content-Type".to_string(), "text/html; charset=utf-8".to_string())];
    let sid = match session_id(cookie) {
        Some(sid) => sid.to_string(),
        None => {
            *sessions += 1;
            let sid = format!("{:04x}{:012x}", *sessions, rand::random::<u64>() & 0xffff_ffff_ffff);
            headers.push((
                "Set-Cookie".into(),
                format!("{SESSION_COOKIE}={sid}; Domain={}; Path=/; HttpOnly", scenario.domain()),
            ));
            sid
        }
    };
    let nonce = make_nonce(scenario, &sid);
    let policy = format!("default-src 'self'; script-src 'nonce-{nonce}' 'self'; object-src 'none'");
    let meta_name = match scenario.csp_delivery {
        CspDelivery::Header => None,
        CspDelivery::Meta | CspDelivery::Both => Some("Content-Security-Policy"),
        CspDelivery::ReportOnlyHeader => None,
        CspDelivery::ReportOnlyMeta => Some("Content-Security-Policy-Report-Only"),
    };
    match scenario.csp_delivery {
        CspDelivery::Header | CspDelivery::Both => headers.push(("Content-Security-Policy".into(), policy.clone())),
        CspDelivery::ReportOnlyHeader => headers.push(("Content-Security-Policy-Report-Only".into(), policy.clone())),
        _ => {}
    }

    let mut links = Vec::new();
    for p in scenario.paths().iter().filter(|p| *p != path) {
        links.push(p.clone());
    }
    for h in scenario.hosts().iter().filter(|h| *h != host) {
        links.push(format!("http://{h}/"));
    }
    links.extend(scenario.external_links.iter().cloned());

    let mut body = String::from("<!DOCTYPE html>\n<html>\n<head>\n");
    body.push_str(&format!("<title>{} {host}{path}</title>\n", scenario.name));
    if let Some(name) = meta_name {
        body.push_str(&format!("<meta http-equiv=\"{name}\" content=\"{policy}\">\n"));
    }
    body.push_str(&format!("<script nonce=\"{nonce}\">window.page = \"{path}\";</script>\n"));
    body.push_str("</head>\n<body>\n<ul>\n");
    for l in links {
        body.push_str(&format!("<li><a href=\"{l}\">{l}</a></li>\n"));
    }
    body.push_str("</ul>\n</body>\n</html>\n");
    SimResponse {
        status: 200,
        headers,
        body,
    }
}

/// A running simulator. Stops when dropped.
pub struct Simulator {
    state: Arc<SimState>,
    server: Arc<tiny_http::Server>,
    port: u16,
    stopping: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl Simulator {
    /// Listens on 127.0.0.1; port 0 picks a free port.
    pub fn serve(scenarios: Vec<Scenario>, port: u16) -> Result<Self, SimError> {
        let state = Arc::new(SimState::new(scenarios)?);
        let addr = format!("127.0.0.1:{port}");
        let server = tiny_http::Server::http(&addr).map_err(|e| SimError::Bind {
            addr: addr.clone(),
            message: e.to_string(),
        })?;
        let port = server.server_addr().to_ip().map_or(port, |a| a.port());
        let server = Arc::new(server);
        let stopping = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, state, stopping) = (server.clone(), state.clone(), stopping.clone());
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        if stopping.load(Ordering::Relaxed) {
                            break;
                        }
                        respond(&state, request);
                    }
                })
            })
            .collect();
        Ok(Self {
            state,
            server,
            port,
            stopping,
            workers,
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    /// Proxy URL for clients that should reach the virtual hosts.
    pub fn proxy_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Scan settings that route through this simulator: plain HTTP, no
    /// pacing, otherwise default budgets.
    pub fn scan_config(&self) -> nonce_audit_core::ScanConfig {
        let mut config = nonce_audit_core::ScanConfig::default();
        config.session.proxy = Some(self.proxy_url());
        config.crawl.scheme = nonce_audit_core::SchemePolicy::HttpOnly;
        config.budget.min_request_interval = std::time::Duration::ZERO;
        config.session.min_request_interval = std::time::Duration::ZERO;
        config.budget.request_timeout = std::time::Duration::from_secs(5);
        config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn request_log(&self) -> Vec<LogEntry> {
        self.state.request_log()
    }

    /// Blocks until the process is killed.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.stopping.store(true, Ordering::Relaxed);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Simulator {
    fn drop(&mut self) {
        self.stop();
    }
}

fn respond(state: &SimState, mut request: tiny_http::Request) {
    let header = |name: &'static str| {
        request
            .headers()
            .iter()
            .find(|h| h.field.equiv(name))
            .map(|h| h.value.as_str().to_string())
    };
    let info = RequestInfo {
        method: request.method().as_str().to_string(),
        target: request.url().to_string(),
        host: header("Host").map(|h| h.split(':').next().unwrap_or_default().to_string()),
        cookie: header("Cookie"),
    };
    let _ = std::io::copy(request.as_reader(), &mut std::io::sink());
    let sim = state.handle(&info);
    let mut response = tiny_http::Response::from_string(sim.body).with_status_code(sim.status);
    for (name, value) in &sim.headers {
        if let Ok(h) = tiny_http::Header::from_bytes(name.as_bytes(), value.as_bytes()) {
            response.add_header(h);
        }
    }
    let _ = request.respond(response);
}
