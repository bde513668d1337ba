//! Cookie-persistent HTTP session shared by every request to one site.

use reqwest::blocking::Client;
use reqwest::cookie::{CookieStore, Jar};
use reqwest::{Proxy, redirect};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::error::Error as _;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;
use url::Url;

use crate::headers::HeaderList;
use crate::target::SiteTarget;
use crate::urls::is_internal;

pub const DEFAULT_USER_AGENT: &str = concat!("nonce-audit/", env!("CARGO_PKG_VERSION"), " (CSP nonce measurement)");
pub const MAX_REDIRECTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub user_agent: String,
    pub timeout: Duration,
    pub min_request_interval: Duration,
    /// Explicit proxy for every scheme. `http_proxy`/`https_proxy` are honored regardless.
    pub proxy: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            user_agent: DEFAULT_USER_AGENT.to_string(),
            timeout: Duration::from_secs(15),
            min_request_interval: Duration::from_millis(200),
            proxy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchErrorKind {
    Timeout,
    Connect,
    Tls,
    Redirect,
    Body,
    /// The response arrived but its status is not a success.
    Status,
    Client,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?} error: {message}")]
pub struct FetchError {
    pub kind: FetchErrorKind,
    pub message: String,
}

impl FetchError {
    pub fn new(kind: FetchErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn from_reqwest(err: &reqwest::Error) -> Self {
        let mut chain = err.to_string();
        let mut source = err.source();
        while let Some(s) = source {
            chain.push_str(": ");
            chain.push_str(&s.to_string());
            source = s.source();
        }
        let lower = chain.to_ascii_lowercase();
        let tls = ["tls", "certificate", "handshake", "corrupt message"].iter().any(|k| lower.contains(k));
        let kind = if err.is_timeout() {
            FetchErrorKind::Timeout
        } else if err.is_redirect() {
            FetchErrorKind::Redirect
        } else if tls {
            FetchErrorKind::Tls
        } else if err.is_connect() {
            FetchErrorKind::Connect
        } else if err.is_body() || err.is_decode() {
            FetchErrorKind::Body
        } else {
            FetchErrorKind::Other
        };
        Self::new(kind, chain)
    }
}

/// One recorded response, immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub request_url: String,
    pub final_url: String,
    pub status: u16,
    pub headers: HeaderList,
    /// Persisted through evidence files, not records.
    #[serde(skip)]
    pub body: String,
    pub fetched_at_ms: u64,
    /// Request headers the session attached (user agent, cookie).
    pub request_headers: HeaderList,
    /// Digest of the cookies offered for the request, or `empty`.
    pub cookie_jar_state: String,
}

impl ProbeResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn sent_cookies(&self) -> bool {
        self.request_headers.get("cookie").is_some()
    }

    pub fn is_html(&self) -> bool {
        self.headers
            .get("content-type")
            .is_none_or(|ct| ct.to_ascii_lowercase().contains("html"))
    }
}

fn redirect_policy(site: SiteTarget) -> redirect::Policy {
    redirect::Policy::custom(move |attempt| {
        if attempt.previous().len() > MAX_REDIRECTS {
            attempt.error("too many redirects")
        } else if !is_internal(attempt.url(), &site) {
            attempt.stop()
        } else {
            attempt.follow()
        }
    })
}

/// Requests to one site: a persistent cookie jar, a cookie-free client and pacing.
pub struct Session {
    site: SiteTarget,
    config: SessionConfig,
    jar: Arc<Jar>,
    client: Client,
    cookieless: Client,
    last_request: Option<Instant>,
    requests: usize,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("site", &self.site)
            .field("requests", &self.requests)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(site: SiteTarget, config: SessionConfig) -> Result<Self, FetchError> {
        let jar = Arc::new(Jar::default());
        let build = |with_jar: bool| {
            let mut builder = Client::builder()
                .user_agent(config.user_agent.clone())
                .timeout(config.timeout)
                .redirect(redirect_policy(site.clone()));
            if with_jar {
                builder = builder.cookie_provider(jar.clone());
            }
            if let Some(proxy) = &config.proxy {
                let proxy = Proxy::all(proxy).map_err(|e| FetchError::new(FetchErrorKind::Client, e.to_string()))?;
                builder = builder.proxy(proxy);
            }
            builder
                .build()
                .map_err(|e| FetchError::new(FetchErrorKind::Client, e.to_string()))
        };
        let client = build(true)?;
        let cookieless = build(false)?;
        Ok(Self {
            site,
            config,
            jar,
            client,
            cookieless,
            last_request: None,
            requests: 0,
        })
    }

    pub fn site(&self) -> &SiteTarget {
        &self.site
    }

    pub fn requests_sent(&self) -> usize {
        self.requests
    }

    /// Cookie header the jar would send to `url`.
    pub fn cookies_for(&self, url: &Url) -> Option<String> {
        self.jar
            .cookies(url)
            .and_then(|v| v.to_str().ok().map(str::to_string))
    }

    fn pace(&mut self) {
        if let Some(last) = self.last_request {
            let elapsed = last.elapsed();
            if elapsed < self.config.min_request_interval {
                std::thread::sleep(self.config.min_request_interval - elapsed);
            }
        }
        self.last_request = Some(Instant::now());
    }

    /// One GET following internal redirects. With `use_cookies` false the jar is
    /// neither read nor updated.
    pub fn fetch(&mut self, url: &Url, use_cookies: bool) -> Result<ProbeResponse, FetchError> {
        self.pace();
        self.requests += 1;
        let mut request_headers = HeaderList::new();
        request_headers.push("user-agent", self.config.user_agent.clone());
        let cookie = if use_cookies { self.cookies_for(url) } else { None };
        let cookie_jar_state = match &cookie {
            Some(c) => {
                request_headers.push("cookie", c.clone());
                hex::encode(&Sha256::digest(c.as_bytes())[..8])
            }
            None => "empty".to_string(),
        };
        let client = if use_cookies { &self.client } else { &self.cookieless };
        let response = client.get(url.clone()).send().map_err(|e| FetchError::from_reqwest(&e))?;

        let final_url = response.url().to_string();
        let status = response.status().as_u16();
        let headers: HeaderList = response
            .headers()
            .iter()
            .map(|(n, v)| (n.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = response.text().map_err(|e| FetchError::from_reqwest(&e))?;
        let fetched_at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or_default();
        Ok(ProbeResponse {
            request_url: url.to_string(),
            final_url,
            status,
            headers,
            body,
            fetched_at_ms,
            request_headers,
            cookie_jar_state,
        })
    }
}
