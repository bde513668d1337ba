//! Per-response CSP and nonce analysis.

use scraper::Html;
use serde::{Deserialize, Serialize};

use crate::csp::{PolicySet, extract_policies_from};
use crate::nonce::{NonceObservation, dom_nonces, observations, policy_nonces};
use crate::probe::ProbeStep;
use crate::session::ProbeResponse;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAnalysis {
    pub policies: PolicySet,
    /// Policy nonces followed by DOM nonces in document order.
    pub nonces: Vec<NonceObservation>,
}

impl PageAnalysis {
    pub fn script_nonces(&self) -> impl Iterator<Item = &NonceObservation> {
        self.nonces.iter().filter(|o| o.is_script())
    }

    /// An enforced policy lists a nonce and some script tag carries one.
    pub fn uses_nonce(&self) -> bool {
        self.policies.has_enforced_nonce() && self.script_nonces().next().is_some()
    }
}

pub(crate) fn analyze_document(response: &ProbeResponse, document: &Html, step: ProbeStep) -> PageAnalysis {
    let policies = extract_policies_from(&response.final_url, &response.headers, document);
    let mut nonces = policy_nonces(&policies, step);
    nonces.extend(observations(dom_nonces(document), &response.final_url, step));
    PageAnalysis { policies, nonces }
}

pub fn analyze_response(response: &ProbeResponse, step: ProbeStep) -> PageAnalysis {
    analyze_document(response, &Html::parse_document(&response.body), step)
}

pub fn analyze_batch_sequential(responses: &[ProbeResponse], step: ProbeStep) -> Vec<PageAnalysis> {
    responses.iter().map(|r| analyze_response(r, step)).collect()
}

#[cfg(feature = "parallel")]
pub fn analyze_batch_parallel(responses: &[ProbeResponse], step: ProbeStep) -> Vec<PageAnalysis> {
    use rayon::prelude::*;
    responses.par_iter().map(|r| analyze_response(r, step)).collect()
}

/// Analyzes many stored responses, in parallel when the `parallel` feature is on.
pub fn analyze_batch(responses: &[ProbeResponse], step: ProbeStep) -> Vec<PageAnalysis> {
    #[cfg(feature = "parallel")]
    {
        analyze_batch_parallel(responses, step)
    }
    #[cfg(not(feature = "parallel"))]
    {
        analyze_batch_sequential(responses, step)
    }
}
