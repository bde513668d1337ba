//! Scan targets and crawl budgets.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;

use crate::error::TargetError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteTarget {
    pub registrable_domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl SiteTarget {
    pub fn new(domain: &str, rank: Option<u32>) -> Result<Self, TargetError> {
        let domain = domain.trim().trim_end_matches('.').to_ascii_lowercase();
        if !is_dns_name(&domain) {
            return Err(TargetError::InvalidDomain(domain));
        }
        if rank == Some(0) {
            return Err(TargetError::InvalidRank("0".into()));
        }
        Ok(Self {
            registrable_domain: domain,
            rank,
        })
    }
}

fn is_dns_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 253
        && name.split('.').all(|label| {
            !label.is_empty()
                && label.len() <= 63
                && !label.starts_with('-')
                && !label.ends_with('-')
                && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        })
}

/// Reads a Tranco-style `rank,domain` list. A non-numeric first row is taken as a header.
pub fn read_targets(path: &Path) -> Result<Vec<SiteTarget>, TargetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TargetError::TargetsFile {
            line: 0,
            message: e.to_string(),
        })?;
    let mut targets = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 1;
        let row = row.map_err(|e| TargetError::TargetsFile {
            line,
            message: e.to_string(),
        })?;
        let fail = |message: String| TargetError::TargetsFile { line, message };
        let (rank, domain) = match (row.get(0), row.get(1)) {
            (Some(rank), Some(domain)) => (rank, domain),
            (Some(domain), None) if !domain.is_empty() => ("", domain),
            _ => continue,
        };
        let rank = if rank.is_empty() {
            None
        } else {
            match rank.parse::<u32>() {
                Ok(r) => Some(r),
                Err(_) if idx == 0 => continue,
                Err(_) => return Err(fail(format!("invalid rank {rank:?}"))),
            }
        };
        targets.push(SiteTarget::new(domain, rank).map_err(|e| fail(e.to_string()))?);
    }
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrawlBudget {
    pub max_subdomains: usize,
    pub max_pages_per_subdomain: usize,
    /// `None` leaves depth bounded only by the page budget.
    pub max_depth: Option<usize>,
    pub request_timeout: Duration,
    pub min_request_interval: Duration,
}

impl Default for CrawlBudget {
    fn default() -> Self {
        Self {
            max_subdomains: 10,
            max_pages_per_subdomain: 10,
            max_depth: None,
            request_timeout: Duration::from_secs(15),
            min_request_interval: Duration::from_millis(200),
        }
    }
}

impl CrawlBudget {
    pub fn validate(&self) -> Result<(), TargetError> {
        if self.max_subdomains == 0 {
            return Err(TargetError::InvalidBudget("max_subdomains must be at least 1"));
        }
        if self.max_pages_per_subdomain == 0 {
            return Err(TargetError::InvalidBudget("max_pages_per_subdomain must be at least 1"));
        }
        Ok(())
    }

    pub fn max_pages_total(&self) -> usize {
        self.max_subdomains * self.max_pages_per_subdomain
    }
}
