//! Content-Security-Policy extraction, parsing and inline-script evaluation.

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::headers::HeaderList;

pub const CSP_HEADER: &str = "content-security-policy";
pub const CSP_REPORT_ONLY_HEADER: &str = "content-security-policy-report-only";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Enforce,
    ReportOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Header,
    MetaTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Quoted keyword such as `'self'` or `'strict-dynamic'`.
    Keyword,
    HostSource,
    SchemeSource,
    Nonce,
    Hash,
}

/// One whitespace-separated token of a directive value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceExpression {
    pub kind: SourceKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce_value: Option<String>,
}

impl SourceExpression {
    pub fn parse(token: &str) -> Self {
        let value = token.to_string();
        if let Some(inner) = token
            .strip_prefix('\'')
            .and_then(|t| t.strip_suffix('\''))
            .filter(|_| token.len() >= 2)
        {
            if let Some(nonce) = strip_prefix_ignore_case(inner, "nonce-").filter(|n| !n.is_empty()) {
                return Self {
                    kind: SourceKind::Nonce,
                    value,
                    nonce_value: Some(nonce.to_string()),
                };
            }
            let is_hash = ["sha256-", "sha384-", "sha512-"]
                .iter()
                .any(|p| strip_prefix_ignore_case(inner, p).is_some_and(|h| !h.is_empty()));
            let kind = if is_hash { SourceKind::Hash } else { SourceKind::Keyword };
            return Self { kind, value, nonce_value: None };
        }
        let kind = if is_scheme_source(token) {
            SourceKind::SchemeSource
        } else {
            SourceKind::HostSource
        };
        Self { kind, value, nonce_value: None }
    }

    /// Case-insensitive keyword comparison; `keyword` is given without quotes.
    pub fn is_keyword(&self, keyword: &str) -> bool {
        self.kind == SourceKind::Keyword
            && self.value.len() == keyword.len() + 2
            && self.value[1..self.value.len() - 1].eq_ignore_ascii_case(keyword)
    }
}

fn strip_prefix_ignore_case<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

fn is_scheme_source(token: &str) -> bool {
    let Some(scheme) = token.strip_suffix(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub name: String,
    pub sources: Vec<SourceExpression>,
}

impl Directive {
    pub fn nonces(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().filter_map(|s| s.nonce_value.as_deref())
    }

    pub fn has_nonce_or_hash(&self) -> bool {
        self.sources
            .iter()
            .any(|s| matches!(s.kind, SourceKind::Nonce | SourceKind::Hash))
    }
}

/// A parsed policy. Directives keep their textual order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub directives: Vec<Directive>,
    pub disposition: Disposition,
    pub delivery: Delivery,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Policy {
    pub fn directive(&self, name: &str) -> Option<&Directive> {
        self.directives.iter().find(|d| d.name == name)
    }

    pub fn is_enforced(&self) -> bool {
        self.disposition == Disposition::Enforce
    }

    pub fn has_nonce_source(&self) -> bool {
        self.directives.iter().any(|d| d.nonces().next().is_some())
    }

    /// Serializes the directive map back into policy text.
    pub fn serialize_directives(&self) -> String {
        self.directives
            .iter()
            .map(|d| {
                let mut out = d.name.clone();
                for s in &d.sources {
                    out.push(' ');
                    out.push_str(&s.value);
                }
                out
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Parses one serialized policy.
pub fn parse_policy(text: &str, disposition: Disposition, delivery: Delivery) -> Policy {
    let mut directives: Vec<Directive> = Vec::new();
    let mut warnings = Vec::new();
    for segment in text.split(';') {
        let mut tokens = segment.split_ascii_whitespace();
        let Some(name) = tokens.next() else {
            continue;
        };
        let name = name.to_ascii_lowercase();
        if directives.iter().any(|d| d.name == name) {
            warnings.push(format!("duplicate directive '{name}' ignored"));
            continue;
        }
        directives.push(Directive {
            name,
            sources: tokens.map(SourceExpression::parse).collect(),
        });
    }
    if directives.is_empty() {
        warnings.push("policy contains no directives".to_string());
    }
    Policy {
        directives,
        disposition,
        delivery,
        raw: text.to_string(),
        warnings,
    }
}

/// Every nonce source of the policy as `(directive, nonce)` pairs, in order.
pub fn nonce_sources(policy: &Policy) -> Vec<(String, String)> {
    policy
        .directives
        .iter()
        .flat_map(|d| d.nonces().map(|n| (d.name.clone(), n.to_string())))
        .collect()
}

/// Whether an inline `<script>` carrying `script_nonce` may run under `policy`.
///
/// The governing directive is `script-src`, falling back to `default-src`.
/// A nonce must match byte for byte. `'unsafe-inline'` only applies when the
/// directive lists no nonce or hash sources.
pub fn allows_inline_script(policy: &Policy, script_nonce: Option<&str>) -> bool {
    let Some(directive) = policy
        .directive("script-src")
        .or_else(|| policy.directive("default-src"))
    else {
        return true;
    };
    if let Some(nonce) = script_nonce {
        if directive.nonces().any(|n| n == nonce) {
            return true;
        }
    }
    !directive.has_nonce_or_hash() && directive.sources.iter().any(|s| s.is_keyword("unsafe-inline"))
}

/// All policies delivered with one response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    pub policies: Vec<Policy>,
    pub source_url: String,
    /// A `<meta>` tag tried to deliver a report-only policy, which browsers ignore.
    #[serde(default)]
    pub report_only_meta: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PolicySet {
    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn has_enforced(&self) -> bool {
        self.policies.iter().any(Policy::is_enforced)
    }

    pub fn has_report_only(&self) -> bool {
        self.policies.iter().any(|p| p.disposition == Disposition::ReportOnly)
    }

    /// True iff some enforced policy lists a nonce source.
    pub fn has_enforced_nonce(&self) -> bool {
        self.policies.iter().any(|p| p.is_enforced() && p.has_nonce_source())
    }

    pub fn enforced(&self) -> impl Iterator<Item = &Policy> {
        self.policies.iter().filter(|p| p.is_enforced())
    }
}

/// Collects CSP headers (in wire order) followed by CSP meta tags (in document order).
pub fn extract_policies(source_url: &str, headers: &HeaderList, body: &str) -> PolicySet {
    let document = Html::parse_document(body);
    extract_policies_from(source_url, headers, &document)
}

pub(crate) fn extract_policies_from(source_url: &str, headers: &HeaderList, document: &Html) -> PolicySet {
    let mut set = PolicySet {
        source_url: source_url.to_string(),
        ..PolicySet::default()
    };
    for (name, value) in headers.iter() {
        let disposition = if name.eq_ignore_ascii_case(CSP_HEADER) {
            Disposition::Enforce
        } else if name.eq_ignore_ascii_case(CSP_REPORT_ONLY_HEADER) {
            Disposition::ReportOnly
        } else {
            continue;
        };
        // A header value may carry a comma-separated list of policies.
        for part in value.split(',') {
            if part.trim().is_empty() {
                continue;
            }
            set.policies.push(parse_policy(part.trim(), disposition, Delivery::Header));
        }
    }

    static META: OnceLock<Selector> = OnceLock::new();
    let selector = META.get_or_init(|| Selector::parse("meta[http-equiv]").expect("static selector"));
    for meta in document.select(selector) {
        let equiv = meta.value().attr("http-equiv").unwrap_or_default().trim();
        if equiv.eq_ignore_ascii_case(CSP_REPORT_ONLY_HEADER) {
            set.report_only_meta = true;
            continue;
        }
        if !equiv.eq_ignore_ascii_case(CSP_HEADER) {
            continue;
        }
        match meta.value().attr("content").map(str::trim) {
            Some(content) if !content.is_empty() => {
                set.policies.push(parse_policy(content, Disposition::Enforce, Delivery::MetaTag));
            }
            _ => set.warnings.push("CSP meta tag without usable content".to_string()),
        }
    }
    set
}
