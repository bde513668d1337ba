//! Output directory, evidence files, run summary and the rank histogram.
//!
//! Layout under the output root:
//!
//! ```text
//! <out>/<domain>/records.jsonl      one JSON record per line
//! <out>/<domain>/evidence/*.http    raw responses, <sha256(url)>_<step>.http
//! <out>/summary.json
//! <out>/histogram.csv
//! ```
//!
//! The first line of `records.jsonl` is a `site` record, followed by one
//! `page` record per crawled page in crawl order. Summaries are recomputed
//! from these records alone.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::classify::{CauseKind, Confidence, ScopeKind};
use crate::error::ReportError;
use crate::probe::StepRecord;
use crate::session::FetchError;
use crate::site::{PageRecord, SiteReport, aggregate_site};
use crate::target::SiteTarget;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const EVIDENCE_DIR: &str = "evidence";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const RANK_BUCKET_SIZE: u32 = 5000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Site {
        target: SiteTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        site_error: Option<FetchError>,
    },
    Page(Box<PageRecord>),
}

/// `<sha256(url)>_<step>.http`
pub fn evidence_file_name(url: &str, step_index: u8) -> String {
    format!("{}_{step_index}.http", hex::encode(Sha256::digest(url.as_bytes())))
}

fn evidence_text(step: &StepRecord, store_bodies: bool) -> String {
    let mut out = String::new();
    match &step.response {
        Some(response) => {
            out.push_str(&format!("HTTP/1.1 {}\n", response.status));
            for (name, value) in response.headers.iter() {
                out.push_str(&format!("{name}: {value}\n"));
            }
            out.push('\n');
            if store_bodies {
                out.push_str(&response.body);
            } else {
                out.push_str(&format!("sha256:{}\n", hex::encode(Sha256::digest(response.body.as_bytes()))));
            }
        }
        None => {
            let message = step.error.as_ref().map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!("# no response: {message}\n"));
        }
    }
    out
}

/// Writes per-site records and evidence below one output root.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    store_bodies: bool,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, store_bodies: bool) -> Result<Self, ReportError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(ReportError::io(&root))?;
        Ok(Self { root, store_bodies })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn site_dir(&self, domain: &str) -> PathBuf {
        self.root.join(domain)
    }

    /// Starts a fresh record stream for the site and writes all its pages.
    pub fn write_site(&self, report: &SiteReport) -> Result<(), ReportError> {
        let dir = self.site_dir(&report.target.registrable_domain);
        let evidence = dir.join(EVIDENCE_DIR);
        fs::create_dir_all(&evidence).map_err(ReportError::io(&evidence))?;
        let path = dir.join(RECORDS_FILE);
        File::create(&path).map_err(ReportError::io(&path))?;
        append_record(
            &path,
            &Record::Site {
                target: report.target.clone(),
                site_error: report.site_error.clone(),
            },
        )?;
        for page in &report.pages {
            self.write_page_record(&dir, page)?;
        }
        Ok(())
    }

    /// Saves one evidence file per attempted probe step, then appends the page record.
    pub fn write_page_record(&self, site_dir: &Path, page: &PageRecord) -> Result<(), ReportError> {
        if let Some(probe) = &page.probe {
            for step in &probe.steps {
                let path = site_dir
                    .join(EVIDENCE_DIR)
                    .join(evidence_file_name(&probe.url, step.step.index()));
                fs::write(&path, evidence_text(step, self.store_bodies)).map_err(ReportError::io(&path))?;
            }
        }
        append_record(&site_dir.join(RECORDS_FILE), &Record::Page(Box::new(page.clone())))
    }

    pub fn write_summary(&self, summary: &RunSummary) -> Result<PathBuf, ReportError> {
        let path = self.root.join(SUMMARY_FILE);
        fs::write(&path, summary.to_json()?).map_err(ReportError::io(&path))?;
        Ok(path)
    }

    pub fn write_histogram(&self, histogram: &RankHistogram) -> Result<PathBuf, ReportError> {
        let path = self.root.join(HISTOGRAM_FILE);
        fs::write(&path, histogram.to_csv()).map_err(ReportError::io(&path))?;
        Ok(path)
    }
}

fn append_record(path: &Path, record: &Record) -> Result<(), ReportError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(ReportError::io(path))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, record)?;
    writer.write_all(b"\n").map_err(ReportError::io(path))?;
    writer.flush().map_err(ReportError::io(path))
}

/// Reads one site's record stream and re-aggregates it.
pub fn load_site(records: &Path) -> Result<SiteReport, ReportError> {
    let file = File::open(records).map_err(ReportError::io(records))?;
    let mut site = None;
    let mut pages = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(ReportError::io(records))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|source| ReportError::Record {
            path: records.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        match record {
            Record::Site { target, site_error } => site = Some((target, site_error)),
            Record::Page(page) => pages.push(*page),
        }
    }
    let (target, site_error) = site.ok_or_else(|| ReportError::MissingSite {
        path: records.to_path_buf(),
    })?;
    Ok(aggregate_site(target, site_error, pages))
}

/// Every site under `root`, ordered by directory name.
pub fn load_run(root: &Path) -> Result<Vec<SiteReport>, ReportError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(ReportError::io(root))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(RECORDS_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_site(&d.join(RECORDS_FILE))).collect()
}

/// A count and the base it is a share of. The percentage is derived, never stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Share {
    pub count: u64,
    pub base: u64,
}

impl Share {
    pub fn new(count: u64, base: u64) -> Self {
        Self { count, base }
    }

    /// Percentage in tenths, rounded half up; zero when the base is zero.
    pub fn percent_tenths(&self) -> u64 {
        if self.base == 0 {
            0
        } else {
            (2000 * self.count + self.base) / (2 * self.base)
        }
    }

    pub fn percent(&self) -> f64 {
        self.percent_tenths() as f64 / 10.0
    }

    pub fn percent_string(&self) -> String {
        let t = self.percent_tenths();
        format!("{}.{}%", t / 10, t % 10)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.count, self.percent_string())
    }
}

impl Serialize for Share {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("Share", 3)?;
        s.serialize_field("count", &self.count)?;
        s.serialize_field("of", &self.base)?;
        s.serialize_field("percent", &self.percent())?;
        s.end()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub sites_scanned: u64,
    pub sites_unreachable: u64,
    pub sites_using_csp: u64,
    /// Shares of `sites_using_csp`. A site with both postures counts as enforcing.
    pub enforcement_mode: Share,
    pub report_only_mode: Share,
    pub sites_with_nonces: Share,
    pub sites_reusing_nonces: Share,
    /// Reusing sites as a share of nonce sites.
    pub reuse_among_nonce_sites: Share,
    /// Shares of reusing sites.
    pub reuse_due_to_cache: Share,
    pub reuse_server_side: Share,
    pub reuse_server_side_probable: u64,
    pub reuse_same_session: Share,
    pub reuse_cross_session: Share,
    pub reuse_scope_unknown: u64,
    pub cached_nonce_sites: Share,
    /// Shares of nonce sites.
    pub short_nonce_sites: Share,
    pub length_8_nonce_sites: Share,
    pub invalid_nonce_sites: Share,
    pub report_only_meta_sites: u64,
}

impl RunSummary {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Sites scanned                 {}", self.sites_scanned)?;
        writeln!(f, "Sites unreachable             {}", self.sites_unreachable)?;
        writeln!(f, "Total sites using CSP         {}", self.sites_using_csp)?;
        writeln!(f, "  enforcement mode            {}", self.enforcement_mode)?;
        writeln!(f, "  report-only mode            {}", self.report_only_mode)?;
        writeln!(f, "Sites with CSP nonces         {}", self.sites_with_nonces)?;
        writeln!(f, "Sites reusing CSP nonces      {}", self.sites_reusing_nonces)?;
        writeln!(f, "  due to a cache              {}", self.reuse_due_to_cache)?;
        writeln!(f, "  server-side code            {}", self.reuse_server_side)?;
        writeln!(f, "    of which probable only    {}", self.reuse_server_side_probable)?;
        writeln!(f, "  in the same session         {}", self.reuse_same_session)?;
        writeln!(f, "  in different sessions       {}", self.reuse_cross_session)?;
        writeln!(f, "  session scope unknown       {}", self.reuse_scope_unknown)?;
        writeln!(f, "Sites caching nonces          {}", self.cached_nonce_sites)?;
        writeln!(f, "Short nonces                  {}", self.short_nonce_sites)?;
        writeln!(f, "  length 8                    {}", self.length_8_nonce_sites)?;
        write!(f, "Invalid nonces                {}", self.invalid_nonce_sites)
    }
}

/// Counts over site reports.
pub fn summarize(sites: &[SiteReport]) -> RunSummary {
    let count = |f: &dyn Fn(&SiteReport) -> bool| sites.iter().filter(|s| f(s)).count() as u64;
    let csp = count(&|s| s.uses_csp);
    let nonce = count(&|s| s.uses_nonce);
    let reuse = count(&|s| s.reuses_nonce);
    let cause_is = |kind: CauseKind| move |s: &SiteReport| s.reuses_nonce && s.cause.is_some_and(|c| c.cause == kind);
    let scope_is = |kind: ScopeKind| move |s: &SiteReport| s.reuses_nonce && s.session_scope == Some(kind);
    RunSummary {
        sites_scanned: sites.len() as u64,
        sites_unreachable: count(&|s| s.site_error.is_some()),
        sites_using_csp: csp,
        enforcement_mode: Share::new(count(&|s| s.uses_csp && s.enforcement_seen), csp),
        report_only_mode: Share::new(count(&|s| s.uses_csp && s.report_only_mode()), csp),
        sites_with_nonces: Share::new(nonce, csp),
        sites_reusing_nonces: Share::new(reuse, csp),
        reuse_among_nonce_sites: Share::new(reuse, nonce),
        reuse_due_to_cache: Share::new(count(&cause_is(CauseKind::Cache)), reuse),
        reuse_server_side: Share::new(count(&cause_is(CauseKind::ServerSide)), reuse),
        reuse_server_side_probable: count(&|s| {
            s.reuses_nonce
                && s.cause
                    .is_some_and(|c| c.cause == CauseKind::ServerSide && c.confidence == Confidence::Probable)
        }),
        reuse_same_session: Share::new(count(&scope_is(ScopeKind::SameSessionOnly)), reuse),
        reuse_cross_session: Share::new(count(&scope_is(ScopeKind::CrossSession)), reuse),
        reuse_scope_unknown: count(&|s| s.reuses_nonce && s.session_scope.is_none()),
        cached_nonce_sites: Share::new(count(&|s| s.reuses_nonce && s.cached_nonce_observed), reuse),
        short_nonce_sites: Share::new(count(&|s| s.uses_nonce && s.short_nonce), nonce),
        length_8_nonce_sites: Share::new(count(&|s| s.uses_nonce && s.length_8_nonce), nonce),
        invalid_nonce_sites: Share::new(count(&|s| s.uses_nonce && s.invalid_nonce), nonce),
        report_only_meta_sites: count(&|s| s.report_only_meta_seen),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankBucket {
    /// `None` for the unranked bucket.
    pub range: Option<(u32, u32)>,
    pub nonce_sites: u64,
    pub reusing_sites: u64,
}

impl RankBucket {
    /// Reusing sites over nonce sites of the same bucket.
    pub fn reuse_share(&self) -> Share {
        Share::new(self.reusing_sites, self.nonce_sites)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankHistogram {
    pub bucket_size: u32,
    pub buckets: Vec<RankBucket>,
}

impl RankHistogram {
    /// `bucket_start,bucket_end,nonce_sites,reusing_sites,reuse_pct`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start,bucket_end,nonce_sites,reusing_sites,reuse_pct\n");
        for b in &self.buckets {
            let (start, end) = match b.range {
                Some((s, e)) => (s.to_string(), e.to_string()),
                None => ("unranked".to_string(), "unranked".to_string()),
            };
            let t = b.reuse_share().percent_tenths();
            out.push_str(&format!(
                "{start},{end},{},{},{}.{}\n",
                b.nonce_sites,
                b.reusing_sites,
                t / 10,
                t % 10
            ));
        }
        out
    }
}

/// 5000-wide rank buckets from rank 1 up to the highest rank seen, then an
/// unranked bucket when some site has no rank.
pub fn rank_histogram(sites: &[SiteReport]) -> RankHistogram {
    let size = RANK_BUCKET_SIZE;
    let bucket_of = |rank: u32| (rank.max(1) - 1) / size;
    let max_bucket = sites.iter().filter_map(|s| s.target.rank).map(bucket_of).max();
    let mut buckets: Vec<RankBucket> = match max_bucket {
        Some(max) => (0..=max)
            .map(|i| RankBucket {
                range: Some((i * size + 1, (i + 1) * size)),
                nonce_sites: 0,
                reusing_sites: 0,
            })
            .collect(),
        None => Vec::new(),
    };
    let mut unranked = RankBucket {
        range: None,
        nonce_sites: 0,
        reusing_sites: 0,
    };
    let mut any_unranked = false;
    for site in sites {
        let bucket = match site.target.rank {
            Some(rank) => &mut buckets[bucket_of(rank) as usize],
            None => {
                any_unranked = true;
                &mut unranked
            }
        };
        bucket.nonce_sites += u64::from(site.uses_nonce);
        bucket.reusing_sites += u64::from(site.reuses_nonce);
    }
    if any_unranked {
        buckets.push(unranked);
    }
    RankHistogram {
        bucket_size: size,
        buckets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(Share::new(1, 8).percent_string(), "12.5%");
        assert_eq!(Share::new(1, 16).percent_string(), "6.3%");
        assert_eq!(Share::new(1, 3).percent_string(), "33.3%");
        assert_eq!(Share::new(2, 3).percent_string(), "66.7%");
        assert_eq!(Share::new(0, 0).percent_string(), "0.0%");
        assert_eq!(Share::new(5, 5).percent_string(), "100.0%");
    }

    #[test]
    fn share_serializes_percent() {
        let json = serde_json::to_string(&Share::new(2271, 10034)).unwrap();
        assert_eq!(json, r#"{"count":2271,"of":10034,"percent":22.6}"#);
    }

    #[test]
    fn evidence_name() {
        let name = evidence_file_name("https://a.test/", 3);
        assert!(name.ends_with("_3.http"));
        assert_eq!(name.len(), 64 + "_3.http".len());
    }
}
