//! URL canonicalization, site membership and cache busting.

use url::Url;

use crate::error::UrlError;
use crate::target::SiteTarget;

/// Lowercases scheme and host, drops default ports and the fragment. The query is kept verbatim.
pub fn normalize_url(url: &str) -> Result<Url, UrlError> {
    let mut parsed = Url::parse(url.trim()).map_err(|e| UrlError::Invalid {
        url: url.to_string(),
        reason: e.to_string(),
    })?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(UrlError::Scheme(url.to_string()));
    }
    if parsed.host_str().is_none_or(str::is_empty) {
        return Err(UrlError::NoHost(url.to_string()));
    }
    parsed.set_fragment(None);
    Ok(parsed)
}

/// True iff the host is the site's domain or one of its subdomains.
pub fn is_internal(url: &Url, site: &SiteTarget) -> bool {
    let Some(host) = url.host_str() else {
        return false;
    };
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    let domain = site.registrable_domain.as_str();
    host == domain || (host.len() > domain.len() && host.ends_with(domain) && host[..host.len() - domain.len()].ends_with('.'))
}

/// Appends `cb<8 hex>=<16 hex>` to the query string.
pub fn add_cache_buster(url: &Url) -> Url {
    let name = format!("cb{:08x}", rand::random::<u32>());
    let value = format!("{:016x}", rand::random::<u64>());
    let mut busted = url.clone();
    let query = match url.query() {
        Some(q) if !q.is_empty() => format!("{q}&{name}={value}"),
        _ => format!("{name}={value}"),
    };
    busted.set_query(Some(&query));
    busted
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site() -> SiteTarget {
        SiteTarget::new("ex.com", None).unwrap()
    }

    fn internal(u: &str) -> bool {
        is_internal(&Url::parse(u).unwrap(), &site())
    }

    #[test]
    fn internality() {
        assert!(internal("https://a.ex.com/x"));
        assert!(internal("https://EX.com/"));
        assert!(!internal("https://exacom.net/x"));
        assert!(!internal("https://notex.com/x"));
        assert!(!internal("https://ex.com.evil.net/"));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_url("HTTPS://Ex.com:443/A?b=1#c").unwrap().as_str(), "https://ex.com/A?b=1");
        assert_eq!(normalize_url("http://ex.com:8080/").unwrap().as_str(), "http://ex.com:8080/");
        assert_eq!(normalize_url("https://ex.com/p?z=1&a=2").unwrap().as_str(), "https://ex.com/p?z=1&a=2");
        assert_eq!(normalize_url("http://ex.com:80").unwrap().as_str(), "http://ex.com/");
        assert!(normalize_url("not a url").is_err());
        assert!(matches!(normalize_url("mailto:a@ex.com"), Err(UrlError::Scheme(_))));
    }

    #[test]
    fn cache_buster_format() {
        let base = Url::parse("https://s.ex/p").unwrap();
        let busted = add_cache_buster(&base);
        let q = busted.query().unwrap();
        let (name, value) = q.split_once('=').unwrap();
        assert_eq!(name.len(), 10);
        assert!(name.starts_with("cb"));
        assert!(name[2..].bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()));
        assert_eq!(value.len(), 16);
        assert!(value.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()));
    }

    #[test]
    fn cache_buster_joins_existing_query() {
        let base = Url::parse("https://s.ex/p?x=1").unwrap();
        let busted = add_cache_buster(&base);
        assert!(busted.as_str().starts_with("https://s.ex/p?x=1&cb"));
        assert_ne!(add_cache_buster(&base), add_cache_buster(&base));
    }
}
