//! The per-page request sequence: baseline, reuse check, cache-busted, cookie-free.

use serde::{Deserialize, Serialize};
use std::time::Duration;
use url::Url;

use crate::analysis::{PageAnalysis, analyze_response};
use crate::nonce::{NonceObservation, shared_script_nonces};
use crate::session::{FetchError, FetchErrorKind, ProbeResponse, Session};
use crate::urls::add_cache_buster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeStep {
    Baseline,
    ReuseCheck,
    CacheBusted,
    CookieFree,
}

impl ProbeStep {
    pub const ALL: [ProbeStep; 4] = [
        ProbeStep::Baseline,
        ProbeStep::ReuseCheck,
        ProbeStep::CacheBusted,
        ProbeStep::CookieFree,
    ];

    /// 1-based position in the sequence.
    pub fn index(self) -> u8 {
        match self {
            ProbeStep::Baseline => 1,
            ProbeStep::ReuseCheck => 2,
            ProbeStep::CacheBusted => 3,
            ProbeStep::CookieFree => 4,
        }
    }

    pub fn uses_cookies(self) -> bool {
        self != ProbeStep::CookieFree
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: ProbeStep,
    pub request_url: String,
    pub with_cookies: bool,
    /// Kept even for non-success statuses, for the evidence trail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ProbeResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FetchError>,
    /// Present iff the step succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<PageAnalysis>,
}

impl StepRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.analysis.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageProbe {
    pub url: String,
    /// In request order; later steps are absent when not needed or after an error.
    pub steps: Vec<StepRecord>,
}

impl PageProbe {
    pub fn step(&self, step: ProbeStep) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step == step)
    }

    /// Nonce observations of a successful step.
    pub fn nonces(&self, step: ProbeStep) -> Option<&[NonceObservation]> {
        self.step(step)
            .and_then(|s| s.analysis.as_ref())
            .map(|a| a.nonces.as_slice())
    }

    pub fn response(&self, step: ProbeStep) -> Option<&ProbeResponse> {
        self.step(step).and_then(|s| s.response.as_ref())
    }

    pub fn first_error(&self) -> Option<(ProbeStep, &FetchError)> {
        self.steps.iter().find_map(|s| s.error.as_ref().map(|e| (s.step, e)))
    }

    /// Script nonce values shared by the baseline and reuse-check responses.
    pub fn reused_values(&self) -> Vec<String> {
        match (self.nonces(ProbeStep::Baseline), self.nonces(ProbeStep::ReuseCheck)) {
            (Some(r1), Some(r2)) => shared_script_nonces(r1, r2),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeOptions {
    /// Extra pause between the steps of one page.
    pub probe_delay: Duration,
}

fn run_step(session: &mut Session, step: ProbeStep, url: &Url) -> StepRecord {
    let with_cookies = step.uses_cookies();
    let mut record = StepRecord {
        step,
        request_url: url.to_string(),
        with_cookies,
        response: None,
        error: None,
        analysis: None,
    };
    match session.fetch(url, with_cookies) {
        Ok(response) if response.is_success() => {
            record.analysis = Some(analyze_response(&response, step));
            record.response = Some(response);
        }
        Ok(response) => {
            record.error = Some(FetchError::new(
                FetchErrorKind::Status,
                format!("HTTP status {}", response.status),
            ));
            record.response = Some(response);
        }
        Err(error) => record.error = Some(error),
    }
    record
}

/// Fetches the page twice with cookies; on nonce reuse, once more with a
/// cache-busting parameter and once without cookies. A failed step ends the sequence.
pub fn run_probe_sequence(url: &Url, session: &mut Session, options: &ProbeOptions) -> PageProbe {
    let mut probe = PageProbe {
        url: url.to_string(),
        steps: Vec::with_capacity(4),
    };
    for step in ProbeStep::ALL {
        if step == ProbeStep::CacheBusted && probe.reused_values().is_empty() {
            break;
        }
        if !probe.steps.is_empty() && !options.probe_delay.is_zero() {
            std::thread::sleep(options.probe_delay);
        }
        let target = if step == ProbeStep::CacheBusted {
            add_cache_buster(url)
        } else {
            url.clone()
        };
        let record = run_step(session, step, &target);
        let failed = !record.succeeded();
        probe.steps.push(record);
        if failed {
            break;
        }
    }
    probe
}
