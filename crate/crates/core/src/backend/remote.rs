//! JSON-over-HTTP clients for chat-completions and embeddings endpoints.

use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{Completion, Embedder, ExtractionRequest, Generator, ResponseSchema};
use crate::error::{Error, Result};
use crate::text::whitespace_tokens;

fn client(timeout: Duration) -> Result<Client> {
    Client::builder().timeout(timeout).build().map_err(|e| Error::BackendUnavailable(e.to_string()))
}

fn post(client: &Client, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value> {
    let mut rb = client.post(url).json(body);
    if let Some(key) = api_key {
        rb = rb.bearer_auth(key);
    }
    let resp = rb.send().map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
    let status = resp.status();
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(Error::BackendUnavailable(format!("{url}: HTTP {status}")));
    }
    let text = resp.text().map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
    if !status.is_success() {
        return Err(Error::MalformedResponse(format!("{url}: HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(format!("{url}: {e}")))
}

/// Chat-completions style generator (`POST {base_url}/chat/completions`).
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl RemoteGenerator {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            client: client(timeout)?,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        })
    }
}

impl Generator for RemoteGenerator {
    fn complete(&self, req: &ExtractionRequest) -> Result<Completion> {
        let mut body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": req.system_message},
                {"role": "user", "content": req.user_message},
            ],
        });
        if req.expected_schema != ResponseSchema::FreeText {
            body["response_format"] = json!({"type": "json_object"});
        }
        let v = post(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::MalformedResponse("missing choices[0].message.content".into()))?
            .to_string();
        let prompt_tokens = v
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or_else(|| (whitespace_tokens(&req.system_message) + whitespace_tokens(&req.user_message)) as u64);
        let completion_tokens = v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or_else(|| whitespace_tokens(&text) as u64);
        Ok(Completion { text, prompt_tokens, completion_tokens })
    }
}

/// Batch embeddings client (`POST {base_url}/embeddings`). Accepts either
/// `{"data":[{"embedding":[..]}]}` or a bare list of float arrays.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(Self {
            client: client(timeout)?,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            dim,
        })
    }
}

fn floats(v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::MalformedResponse("embedding is not an array".into()))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::MalformedResponse("non-numeric embedding value".into())))
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = json!({ "model": self.model, "input": texts });
        let v = post(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        match &v {
            Value::Array(rows) => rows.iter().map(floats).collect(),
            _ => {
                let data = v
                    .get("data")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::MalformedResponse("missing `data`".into()))?;
                let mut rows: Vec<(u64, Vec<f64>)> = data
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let idx = d.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                        let emb =
                            d.get("embedding").ok_or_else(|| Error::MalformedResponse("missing `embedding`".into()))?;
                        Ok((idx, floats(emb)?))
                    })
                    .collect::<Result<_>>()?;
                rows.sort_by_key(|(i, _)| *i);
                Ok(rows.into_iter().map(|(_, r)| r).collect())
            }
        }
    }
}
