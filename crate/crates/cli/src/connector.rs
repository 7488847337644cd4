//! HTTP model endpoints.
//!
//! A model endpoint accepts `POST {url}` with a JSON body
//! `{"prompt": "..."}` and answers `{"completion": "..."}`. A non-empty
//! auth token is sent as a bearer token.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use proctor_core::domain::EndpointDescriptor;
use proctor_core::orchestrator::{Connector, EndpointError, ModelEndpoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompletionBody {
    completion: String,
}

pub struct HttpEndpoint {
    url: String,
    token: String,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpEndpoint")
            .field("url", &self.url)
            .field("token", &"<redacted>")
            .finish()
    }
}

impl HttpEndpoint {
    fn request(&self, body: &PromptBody<'_>, timeout: Duration) -> reqwest::blocking::RequestBuilder {
        let mut req = self.client.post(&self.url).timeout(timeout).json(body);
        if !self.token.is_empty() {
            req = req.bearer_auth(&self.token);
        }
        req
    }
}

fn classify(e: reqwest::Error) -> EndpointError {
    if e.is_timeout() {
        EndpointError::Timeout
    } else {
        // Drop the URL so nothing request-specific leaks into annotations.
        EndpointError::Unreachable(e.without_url().to_string())
    }
}

impl ModelEndpoint for HttpEndpoint {
    fn query(&self, prompt: &str, timeout: Duration) -> Result<String, EndpointError> {
        let resp = self
            .request(&PromptBody { prompt }, timeout)
            .send()
            .map_err(classify)?;
        if !resp.status().is_success() {
            return Err(EndpointError::Unreachable(format!("status {}", resp.status())));
        }
        let body: CompletionBody = resp.json().map_err(classify)?;
        Ok(body.completion)
    }

    fn probe(&self) -> Result<(), String> {
        self.query("ping", Duration::from_secs(10)).map(drop).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Default)]
pub struct HttpConnector;

impl Connector for HttpConnector {
    fn connect(&self, endpoint: &EndpointDescriptor) -> Result<Arc<dyn ModelEndpoint>, String> {
        let url = reqwest::Url::parse(&endpoint.url).map_err(|e| format!("bad endpoint url: {e}"))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err("endpoint url must be http or https".into());
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Arc::new(HttpEndpoint {
            url: endpoint.url.clone(),
            token: endpoint.auth_token.clone(),
            client,
        }))
    }
}
