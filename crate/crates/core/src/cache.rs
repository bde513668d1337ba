//! Cache status header heuristics: was a response served by a cache or by the origin?

use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::CatalogError;
use crate::headers::HeaderList;

/// Catalog shipped with the crate.
pub const DEFAULT_CATALOG: &str = include_str!("../data/cache-status.catalog");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    Miss,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictRule {
    KnownHeader,
    GenericCacheKeyword,
    AgeHeader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheVerdict {
    pub status: CacheStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<VerdictRule>,
}

impl CacheVerdict {
    pub fn unknown() -> Self {
        Self {
            status: CacheStatus::Unknown,
            evidence: None,
            rule: None,
        }
    }

    fn found(status: CacheStatus, name: &str, value: &str, rule: VerdictRule) -> Self {
        Self {
            status,
            evidence: Some((name.to_string(), value.to_string())),
            rule: Some(rule),
        }
    }

    pub fn is_hit(&self) -> bool {
        self.status == CacheStatus::Hit
    }

    pub fn is_miss(&self) -> bool {
        self.status == CacheStatus::Miss
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogRule {
    pub header: String,
    pub token: String,
    pub status: CacheStatus,
}

/// Known cache-status headers and the value tokens they use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderCatalog {
    rules: Vec<CatalogRule>,
}

impl FromStr for HeaderCatalog {
    type Err = CatalogError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| CatalogError {
                line: idx + 1,
                message: message.to_string(),
            };
            let mut parts = line.split_ascii_whitespace();
            let (Some(header), Some(rule), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `<header-name> <token>=<Hit|Miss>`"));
            };
            let (token, status) = rule.split_once('=').ok_or_else(|| err("missing `=` in rule"))?;
            if token.is_empty() || !token.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(err("token must be a non-empty alphanumeric word"));
            }
            let status = match status {
                "Hit" => CacheStatus::Hit,
                "Miss" => CacheStatus::Miss,
                _ => return Err(err("verdict must be `Hit` or `Miss`")),
            };
            rules.push(CatalogRule {
                header: header.to_ascii_lowercase(),
                token: token.to_ascii_lowercase(),
                status,
            });
        }
        Ok(Self { rules })
    }
}

impl Default for HeaderCatalog {
    fn default() -> Self {
        default_catalog().clone()
    }
}

pub fn default_catalog() -> &'static HeaderCatalog {
    static CATALOG: OnceLock<HeaderCatalog> = OnceLock::new();
    CATALOG.get_or_init(|| DEFAULT_CATALOG.parse().expect("bundled catalog parses"))
}

fn words(value: &str) -> impl Iterator<Item = String> + '_ {
    value
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
}

/// Hit if any word is a hit token, else Miss if any word is a miss token.
fn match_words(value: &str, mut status_of: impl FnMut(&str) -> Option<CacheStatus>) -> Option<CacheStatus> {
    let mut miss = false;
    for word in words(value) {
        match status_of(&word) {
            Some(CacheStatus::Hit) => return Some(CacheStatus::Hit),
            Some(CacheStatus::Miss) => miss = true,
            _ => {}
        }
    }
    miss.then_some(CacheStatus::Miss)
}

impl HeaderCatalog {
    pub fn rules(&self) -> &[CatalogRule] {
        &self.rules
    }

    pub fn knows_header(&self, name: &str) -> bool {
        self.rules.iter().any(|r| r.header.eq_ignore_ascii_case(name))
    }

    fn lookup(&self, header: &str, word: &str) -> Option<CacheStatus> {
        self.rules
            .iter()
            .find(|r| r.header.eq_ignore_ascii_case(header) && r.token == word)
            .map(|r| r.status)
    }

    /// Applies the known-header rules, then the generic `*cache*` rule, then `Age`.
    pub fn classify(&self, headers: &HeaderList) -> CacheVerdict {
        for (name, value) in headers.iter() {
            if !self.knows_header(name) {
                continue;
            }
            if let Some(status) = match_words(value, |w| self.lookup(name, w)) {
                return CacheVerdict::found(status, name, value, VerdictRule::KnownHeader);
            }
        }

        for (name, value) in headers.iter() {
            if !name.to_ascii_lowercase().contains("cache") {
                continue;
            }
            let status = match_words(value, |w| match w {
                "hit" => Some(CacheStatus::Hit),
                "miss" => Some(CacheStatus::Miss),
                _ => None,
            });
            if let Some(status) = status {
                return CacheVerdict::found(status, name, value, VerdictRule::GenericCacheKeyword);
            }
        }

        for value in headers.get_all("age") {
            if value.trim().parse::<u64>().is_ok_and(|age| age > 0) {
                return CacheVerdict::found(CacheStatus::Hit, "age", value, VerdictRule::AgeHeader);
            }
        }
        CacheVerdict::unknown()
    }
}

/// Classifies with the bundled catalog.
pub fn classify_response(headers: &HeaderList) -> CacheVerdict {
    default_catalog().classify(headers)
}
