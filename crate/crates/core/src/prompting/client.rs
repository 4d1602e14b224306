use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use super::{build_meta_prompt, MetaPromptSpec, SourcePrompt};
use crate::error::{Error, Result};
use crate::http::HttpTransport;
use crate::retry::{retry, Failure, RetryPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt_text: String,
    /// Base64-encoded image attachments.
    pub images: Vec<String>,
    pub max_tokens: u32,
    pub sampling: BTreeMap<String, String>,
}

/// A text-completion endpoint of a (multimodal) language model. One call is
/// one attempt; retrying is the caller's business.
pub trait MllmClient: Send + Sync {
    fn model(&self) -> &str;

    fn supports_images(&self) -> bool;

    fn complete(&self, request: &CompletionRequest) -> Result<String, Failure>;
}

/// Returns the prompt it was given. Useful to test prompt plumbing offline.
#[derive(Debug, Clone, Default)]
pub struct EchoMllm;

impl MllmClient for EchoMllm {
    fn model(&self) -> &str {
        "echo"
    }

    fn supports_images(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, Failure> {
        Ok(request.prompt_text.clone())
    }
}

/// `POST {endpoint}/v1/complete` with `{model, prompt_text, images, max_tokens}`,
/// answered by `{text}`.
#[derive(Debug, Clone)]
pub struct HttpMllmClient {
    transport: HttpTransport,
    model: String,
    multimodal: bool,
}

impl HttpMllmClient {
    pub fn new(id: &str, endpoint: &str, model: &str, multimodal: bool, timeout: Duration) -> Self {
        HttpMllmClient {
            // retries are driven by generate_source_prompt
            transport: HttpTransport::new(id, endpoint, RetryPolicy::no_delay(1), timeout),
            model: model.to_string(),
            multimodal,
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl MllmClient for HttpMllmClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn supports_images(&self) -> bool {
        self.multimodal
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, Failure> {
        let mut body = json!({
            "model": request.model,
            "prompt_text": request.prompt_text,
            "images": request.images,
            "max_tokens": request.max_tokens,
        });
        if !request.sampling.is_empty() {
            body["sampling"] = json!(request.sampling);
        }
        let resp = self.transport.post_json_once("/v1/complete", &body)?;
        let parsed: CompletionResponse = serde_json::from_slice(&resp.body)
            .map_err(|e| Failure::retryable(format!("malformed completion response: {e}")))?;
        Ok(parsed.text)
    }
}

/// Ask `client` for the source-domain prompt described by `spec`.
///
/// Empty completions count as failed attempts. Example images are attached
/// only when the client accepts them.
pub fn generate_source_prompt(
    spec: &MetaPromptSpec,
    client: &dyn MllmClient,
    policy: &RetryPolicy,
    max_tokens: u32,
    sampling: &BTreeMap<String, String>,
) -> Result<SourcePrompt> {
    let meta = build_meta_prompt(spec)?;
    let images = if spec.example_images.is_empty() {
        Vec::new()
    } else if client.supports_images() {
        spec.example_images
            .iter()
            .map(|img| BASE64.encode(img.bytes()))
            .collect()
    } else {
        log::warn!(
            "{} example image(s) dropped: `{}` takes text only",
            spec.example_images.len(),
            client.model()
        );
        Vec::new()
    };
    let request = CompletionRequest {
        model: client.model().to_string(),
        prompt_text: meta,
        images,
        max_tokens,
        sampling: sampling.clone(),
    };
    let text = retry(policy, |_| {
        let text = client.complete(&request)?;
        if text.trim().is_empty() {
            Err(Failure::retryable("empty completion"))
        } else {
            Ok(text.trim().to_string())
        }
    })
    .map_err(|e| Error::PromptGeneration {
        attempts: e.attempts,
        last: e.last,
    })?;
    let mut prompt = SourcePrompt::mllm_generated(text, client.model(), spec.digest()?)?;
    prompt.sampling = sampling.clone();
    prompt
        .sampling
        .insert("max_tokens".into(), max_tokens.to_string());
    Ok(prompt)
}
