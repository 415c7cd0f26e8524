//! Literature sources for the retrieval loop: NCBI E-utilities (`esearch` for
//! ids, `efetch` for abstracts) over an injected HTTP transport, and a local
//! corpus that answers queries by whole-phrase matching.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::corpus::{Document, SearchQuery};
use crate::extraction::TransportError;

pub const EUTILS_BASE: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
pub const NCBI_API_KEY_ENV: &str = "MEMFORGE_NCBI_API_KEY";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("literature request failed: {0}")]
    Transport(#[from] TransportError),
    #[error("unexpected literature response: {0}")]
    Parse(String),
}

pub trait LiteratureSource {
    fn search(&self, query: &SearchQuery) -> Result<Vec<Document>, SourceError>;
}

/// Blocking HTTP GET returning the response body.
pub trait HttpGet: Send + Sync {
    fn get(&self, url: &str) -> Result<String, TransportError>;
}

fn encode(value: &str) -> String {
    url::form_urlencoded::byte_serialize(value.as_bytes()).collect()
}

pub fn esearch_url(term: &str, retmax: usize, api_key: Option<&str>) -> String {
    let mut url = format!(
        "{EUTILS_BASE}/esearch.fcgi?db=pubmed&retmode=json&retmax={retmax}&term={}",
        encode(term)
    );
    if let Some(key) = api_key {
        url.push_str(&format!("&api_key={}", encode(key)));
    }
    url
}

pub fn efetch_url(ids: &[String], api_key: Option<&str>) -> String {
    let mut url = format!(
        "{EUTILS_BASE}/efetch.fcgi?db=pubmed&rettype=abstract&retmode=xml&id={}",
        encode(&ids.join(","))
    );
    if let Some(key) = api_key {
        url.push_str(&format!("&api_key={}", encode(key)));
    }
    url
}

/// Extracts `esearchresult.idlist` from an `esearch` JSON response.
pub fn parse_esearch(body: &str) -> Result<Vec<String>, SourceError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| SourceError::Parse(e.to_string()))?;
    let ids = value
        .pointer("/esearchresult/idlist")
        .and_then(serde_json::Value::as_array)
        .ok_or_else(|| SourceError::Parse("missing esearchresult.idlist".into()))?;
    Ok(ids.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
}

/// Documents from an `efetch` PubMed XML response. Articles without abstract
/// text are skipped; structured abstracts have their sections joined by a
/// space.
pub fn parse_efetch_xml(body: &str) -> Result<Vec<Document>, SourceError> {
    let xml = roxmltree::Document::parse(body).map_err(|e| SourceError::Parse(e.to_string()))?;
    let mut docs = Vec::new();
    for article in xml.descendants().filter(|n| n.has_tag_name("PubmedArticle")) {
        let text_of = |node: roxmltree::Node| -> String {
            node.descendants()
                .filter(|n| n.is_text())
                .filter_map(|n| n.text())
                .collect::<String>()
        };
        let Some(pmid) = article.descendants().find(|n| n.has_tag_name("PMID")).map(text_of) else {
            continue;
        };
        let title = article
            .descendants()
            .find(|n| n.has_tag_name("ArticleTitle"))
            .map(text_of);
        let sections: Vec<String> = article
            .descendants()
            .filter(|n| n.has_tag_name("AbstractText"))
            .map(text_of)
            .filter(|s| !s.trim().is_empty())
            .collect();
        if sections.is_empty() {
            continue;
        }
        docs.push(Document::from_parts(pmid.trim(), title.as_deref(), &sections.join(" ")));
    }
    Ok(docs)
}

/// Enforces a minimum spacing between requests.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(requests: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs(1) / requests.max(1),
            last: Mutex::new(None),
        }
    }

    pub fn wait(&self) {
        let mut last = self.last.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.interval {
                std::thread::sleep(self.interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// PubMed search via E-utilities. NCBI allows 3 requests/s without an API
/// key and 10 with one.
pub struct PubMedClient<H> {
    http: H,
    api_key: Option<String>,
    retmax: usize,
    limiter: RateLimiter,
}

impl<H: HttpGet> PubMedClient<H> {
    pub fn new(http: H, api_key: Option<String>, retmax: usize) -> Self {
        let rate = if api_key.is_some() { 10 } else { 3 };
        PubMedClient {
            http,
            api_key,
            retmax,
            limiter: RateLimiter::per_second(rate),
        }
    }

    /// Reads the API key from `MEMFORGE_NCBI_API_KEY`.
    pub fn from_env(http: H, retmax: usize) -> Self {
        let key = std::env::var(NCBI_API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(http, key, retmax)
    }
}

impl<H: HttpGet> LiteratureSource for PubMedClient<H> {
    fn search(&self, query: &SearchQuery) -> Result<Vec<Document>, SourceError> {
        self.limiter.wait();
        let ids = parse_esearch(&self.http.get(&esearch_url(&query.text, self.retmax, self.api_key.as_deref()))?)?;
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.limiter.wait();
        parse_efetch_xml(&self.http.get(&efetch_url(&ids, self.api_key.as_deref()))?)
    }
}

/// Local corpus answering a query with every document whose normalized text
/// contains the normalized query as a whole-word phrase, in corpus order.
#[derive(Debug, Clone, Default)]
pub struct LocalCorpus {
    docs: Vec<Document>,
}

impl LocalCorpus {
    pub fn new(docs: Vec<Document>) -> Self {
        LocalCorpus { docs }
    }
}

impl LiteratureSource for LocalCorpus {
    fn search(&self, query: &SearchQuery) -> Result<Vec<Document>, SourceError> {
        let needle = format!(" {} ", crate::corpus::normalize_text(&query.text));
        if needle.trim().is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .docs
            .iter()
            .filter(|d| format!(" {} ", d.normalized_text).contains(&needle))
            .cloned()
            .collect())
    }
}
