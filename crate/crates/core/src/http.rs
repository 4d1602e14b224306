//! Shared JSON-over-HTTP transport for the MLLM, generation and prediction
//! services.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{AUTHORIZATION, CONTENT_TYPE, RETRY_AFTER};
use reqwest::StatusCode;

use crate::retry::{retry, Failure, RetryError, RetryPolicy};

/// Name of the environment variable carrying the API key for a backend or
/// service id: upper-cased, non-alphanumerics replaced by `_`, suffixed with
/// `_API_KEY`.
pub fn api_key_var(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}_API_KEY")
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_json(&self) -> bool {
        self.content_type
            .as_deref()
            .is_some_and(|ct| ct.starts_with("application/json"))
    }
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpTransport {
    /// `id` selects the API key variable (see [`api_key_var`]).
    pub fn new(id: &str, endpoint: &str, retry: RetryPolicy, timeout: Duration) -> Self {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client construction");
        HttpTransport {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(api_key_var(id)).ok(),
            retry,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    /// POST a JSON body to `{endpoint}{path}` under the transport's retry
    /// policy.
    pub fn post_json(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, RetryError> {
        retry(&self.retry, |_| self.post_json_once(path, body))
    }

    /// A single POST. Connection errors, 408, 429 and 5xx are classified as
    /// retryable; `Retry-After` (seconds) is passed through as a hint.
    pub fn post_json_once(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, Failure> {
        let url = format!("{}{}", self.endpoint, path);
        let mut req = self
            .client
            .post(&url)
            .header(CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(body).expect("json values serialize"));
        if let Some(key) = &self.api_key {
            req = req.header(AUTHORIZATION, format!("Bearer {key}"));
        }
        let resp = req
            .send()
            .map_err(|e| Failure::retryable(format!("POST {url}: {e}")))?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let content_type = resp
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        if status.is_success() {
            let body = resp
                .bytes()
                .map_err(|e| Failure::retryable(format!("reading body from {url}: {e}")))?;
            return Ok(HttpResponse {
                content_type,
                body: body.to_vec(),
            });
        }
        let text = resp.text().unwrap_or_default();
        let reason = format!("POST {url}: HTTP {status}: {}", truncate(&text, 200));
        if status == StatusCode::TOO_MANY_REQUESTS
            || status == StatusCode::REQUEST_TIMEOUT
            || status.is_server_error()
        {
            Err(Failure::Retryable {
                reason,
                retry_after,
            })
        } else {
            Err(Failure::Fatal(reason))
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_var_naming() {
        assert_eq!(api_key_var("flux1-kontext-max"), "FLUX1_KONTEXT_MAX_API_KEY");
        assert_eq!(api_key_var("qie.2509"), "QIE_2509_API_KEY");
    }

    #[test]
    fn truncates_on_char_boundary() {
        assert_eq!(truncate("héllo", 2), "hé");
        assert_eq!(truncate("ab", 5), "ab");
    }
}
