//! Nonce extraction from documents and policies, plus length and alphabet checks.

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::csp::PolicySet;
use crate::error::NonceError;
use crate::probe::ProbeStep;

/// Useful characters below which a nonce carries fewer than 128 bits.
pub const MIN_USEFUL_CHARS: usize = 22;
pub const BITS_PER_CHAR: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "directive")]
pub enum NonceLocation {
    PolicyDirective(String),
    ScriptTag,
    /// `<style>` or `<link>` element.
    StyleTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceObservation {
    pub value: String,
    pub location: NonceLocation,
    pub page_url: String,
    pub probe_step: ProbeStep,
}

impl NonceObservation {
    pub fn is_script(&self) -> bool {
        self.location == NonceLocation::ScriptTag
    }
}

fn nonce_selector() -> &'static Selector {
    static SEL: OnceLock<Selector> = OnceLock::new();
    SEL.get_or_init(|| Selector::parse("script[nonce], style[nonce], link[nonce]").expect("static selector"))
}

/// `(location, value)` for every element carrying a non-empty nonce attribute, in document order.
pub(crate) fn dom_nonces(document: &Html) -> Vec<(NonceLocation, String)> {
    document
        .select(nonce_selector())
        .filter_map(|el| {
            let value = el.value().attr("nonce")?;
            if value.is_empty() {
                return None;
            }
            let location = if el.value().name() == "script" {
                NonceLocation::ScriptTag
            } else {
                NonceLocation::StyleTag
            };
            Some((location, value.to_string()))
        })
        .collect()
}

/// Nonce-bearing script, style and link elements of `html`.
pub fn extract_dom_nonces(html: &str, page_url: &str, step: ProbeStep) -> Vec<NonceObservation> {
    let document = Html::parse_document(html);
    observations(dom_nonces(&document), page_url, step)
}

pub(crate) fn observations(
    found: impl IntoIterator<Item = (NonceLocation, String)>,
    page_url: &str,
    step: ProbeStep,
) -> Vec<NonceObservation> {
    found
        .into_iter()
        .map(|(location, value)| NonceObservation {
            value,
            location,
            page_url: page_url.to_string(),
            probe_step: step,
        })
        .collect()
}

/// Nonce sources of all policies in the set, as observations.
pub fn policy_nonces(set: &PolicySet, step: ProbeStep) -> Vec<NonceObservation> {
    let found = set.policies.iter().flat_map(|p| {
        p.directives.iter().flat_map(|d| {
            d.nonces()
                .map(|n| (NonceLocation::PolicyDirective(d.name.clone()), n.to_string()))
        })
    });
    observations(found.collect::<Vec<_>>(), &set.source_url, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthVerdict {
    pub useful_chars: usize,
    pub is_short: bool,
    pub estimated_bits: usize,
}

/// Counts characters excluding trailing `=` padding and applies the 22-character floor.
pub fn check_length(value: &str) -> Result<LengthVerdict, NonceError> {
    if value.is_empty() {
        return Err(NonceError::Empty);
    }
    let useful_chars = value.trim_end_matches('=').chars().count();
    Ok(LengthVerdict {
        useful_chars,
        is_short: useful_chars < MIN_USEFUL_CHARS,
        estimated_bits: useful_chars * BITS_PER_CHAR,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub is_valid: bool,
    pub offending_chars: BTreeSet<char>,
    /// Informational: mixed base64 alphabets, interior padding.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Accepts the union of the base64 and base64url alphabets plus `=`.
pub fn check_validity(value: &str) -> ValidityVerdict {
    let offending_chars: BTreeSet<char> = value
        .chars()
        .filter(|c| !(c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '-' | '_' | '=')))
        .collect();

    let mut notes = Vec::new();
    let standard_only = value.chars().any(|c| matches!(c, '+' | '/'));
    let url_only = value.chars().any(|c| matches!(c, '-' | '_'));
    if standard_only && url_only {
        notes.push("mixes base64 and base64url characters".to_string());
    } else if standard_only {
        notes.push("uses '+' or '/', outside the base64url alphabet".to_string());
    }
    if value.trim_end_matches('=').contains('=') {
        notes.push("interior '=' outside trailing padding".to_string());
    }
    ValidityVerdict {
        is_valid: offending_chars.is_empty(),
        offending_chars,
        notes,
    }
}

/// Length and validity findings for one distinct nonce value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceFinding {
    pub value: String,
    pub length: LengthVerdict,
    pub validity: ValidityVerdict,
}

impl NonceFinding {
    pub fn assess(value: &str) -> Result<Self, NonceError> {
        Ok(Self {
            value: value.to_string(),
            length: check_length(value)?,
            validity: check_validity(value),
        })
    }
}

/// Script-tag nonce values present in both observation lists, in order of `first`.
pub fn shared_script_nonces(first: &[NonceObservation], second: &[NonceObservation]) -> Vec<String> {
    let later: BTreeSet<&str> = second.iter().filter(|o| o.is_script()).map(|o| o.value.as_str()).collect();
    let mut seen = BTreeSet::new();
    first
        .iter()
        .filter(|o| o.is_script() && later.contains(o.value.as_str()))
        .filter(|o| seen.insert(o.value.as_str()))
        .map(|o| o.value.clone())
        .collect()
}
