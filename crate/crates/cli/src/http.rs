//! Blocking HTTP transports for the literature client and the remote extractor.

use std::time::Duration;

use memforge::extraction::{ExtractionRequest, ExtractorTransport, TransportError, PROMPT_VERSION};
use memforge::literature::HttpGet;
use reqwest::blocking::{Client, Response};

pub const LLM_API_KEY_ENV: &str = "MEMFORGE_LLM_API_KEY";

const USER_AGENT: &str = concat!("memforge/", env!("CARGO_PKG_VERSION"));

fn client(timeout: Duration) -> Result<Client, TransportError> {
    Client::builder()
        .timeout(timeout)
        .user_agent(USER_AGENT)
        .build()
        .map_err(|e| TransportError::Network(e.to_string()))
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else {
        TransportError::Network(e.to_string())
    }
}

fn body_of(response: Response) -> Result<String, TransportError> {
    let status = response.status();
    if !status.is_success() {
        return Err(TransportError::Status(status.as_u16()));
    }
    response.text().map_err(classify)
}

pub struct ReqwestGet {
    client: Client,
}

impl ReqwestGet {
    pub fn new() -> Result<Self, TransportError> {
        Ok(ReqwestGet {
            client: client(Duration::from_secs(30))?,
        })
    }
}

impl HttpGet for ReqwestGet {
    fn get(&self, url: &str) -> Result<String, TransportError> {
        body_of(self.client.get(url).send().map_err(classify)?)
    }
}

/// POSTs the extraction request as JSON. The prompt template version travels
/// in a header so the service can render the matching template.
pub struct ReqwestExtractor {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
}

impl ReqwestExtractor {
    pub fn from_env(endpoint: String) -> Result<Self, TransportError> {
        Ok(ReqwestExtractor {
            client: client(Duration::from_secs(60))?,
            endpoint,
            api_key: std::env::var(LLM_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl ExtractorTransport for ReqwestExtractor {
    fn send(&self, request: &ExtractionRequest, _prompt: &str) -> Result<String, TransportError> {
        let mut builder = self
            .client
            .post(&self.endpoint)
            .header("X-Prompt-Version", PROMPT_VERSION)
            .json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        body_of(builder.send().map_err(classify)?)
    }
}
