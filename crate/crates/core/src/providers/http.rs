//! Adapter for OpenAI-compatible HTTP endpoints
//! (`/chat/completions`, `/images/generations`, `/embeddings`).

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{ChatModel, Embedder, EmbeddingVector, GeneratedImage, ImageModel, ProviderError, StructuredSchema};
use crate::config::ProviderConfig;
use crate::prompts::RenderedPrompt;

const MAX_BODY_BYTES: u64 = 64 * 1024 * 1024;

pub struct HttpProviders {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProviders {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        if config.endpoint.trim().is_empty() {
            return Err(ProviderError::InvalidInput("http provider needs an endpoint".into()));
        }
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_millis(config.timeout_ms))).build().into();
        Ok(Self { config, agent })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(key) = self.config.api_key.as_deref() {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(map_err)?;
        resp.into_body().with_config().limit(MAX_BODY_BYTES).read_json::<Value>().map_err(map_err)
    }
}

fn map_err(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

fn malformed(what: &str) -> ProviderError {
    ProviderError::Transport(format!("malformed {what} response"))
}

impl ChatModel for HttpProviders {
    fn complete(&self, prompt: &RenderedPrompt, schema: &StructuredSchema) -> Result<Value, ProviderError> {
        let body = json!({
            "model": self.config.chat_model,
            "temperature": self.config.temperature,
            "messages": [{"role": "system", "content": prompt.text}],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": schema.id.name(), "schema": schema.json_schema()},
            },
        });
        let resp = self.post("chat/completions", &body)?;
        let content = resp["choices"][0]["message"]["content"].as_str().ok_or_else(|| malformed("chat"))?;
        // Unparseable content is a schema problem, not a transport one.
        Ok(serde_json::from_str(content).unwrap_or(Value::String(content.to_owned())))
    }
}

impl ImageModel for HttpProviders {
    fn generate(&self, prompt: &str, width: u32, height: u32, _nonce: u64) -> Result<GeneratedImage, ProviderError> {
        if prompt.trim().is_empty() || width == 0 || height == 0 {
            return Err(ProviderError::InvalidInput("image prompt must be non-empty with positive size".into()));
        }
        let body = json!({
            "model": self.config.image_model,
            "prompt": prompt,
            "size": format!("{width}x{height}"),
            "n": 1,
        });
        let resp = self.post("images/generations", &body)?;
        let b64 = resp["data"][0]["b64_json"].as_str().ok_or_else(|| malformed("image"))?;
        let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|_| malformed("image"))?;
        let format = image::guess_format(&bytes).map_err(|_| malformed("image"))?;
        let (w, h) = image::ImageReader::with_format(std::io::Cursor::new(&bytes), format)
            .into_dimensions()
            .map_err(|_| malformed("image"))?;
        Ok(GeneratedImage { media_type: format.to_mime_type().to_owned(), bytes, width: w, height: h })
    }
}

impl Embedder for HttpProviders {
    fn dims(&self) -> usize {
        self.config.embed_dims
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidInput("cannot embed empty text".into()));
        }
        let resp = self.post("embeddings", &json!({"model": self.config.embed_model, "input": text}))?;
        let values = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| malformed("embedding"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed("embedding")))
            .collect::<Result<Vec<_>, _>>()?;
        EmbeddingVector::new(values)
    }

    fn embed_image(&self, _bytes: &[u8]) -> Result<EmbeddingVector, ProviderError> {
        // FIXME: no OpenAI-compatible image embedding route; needs a
        // perceptual-embedding endpoint configured separately.
        Err(ProviderError::InvalidInput("image embeddings are not supported by the http provider".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Opt-in smoke test against a real endpoint:
    /// `B2D_HTTP_ENDPOINT=... B2D_HTTP_API_KEY=... cargo test -- --ignored http_smoke`
    #[test]
    #[ignore]
    fn http_smoke() {
        let config = crate::config::AppConfig::from_env_only().providers;
        let providers = HttpProviders::new(config).expect("endpoint configured");
        let v = providers.embed_text("smoke test").unwrap();
        assert!(v.dims() > 0);
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let config =
            ProviderConfig { endpoint: "http://127.0.0.1:9".into(), timeout_ms: 500, ..ProviderConfig::default() };
        let providers = HttpProviders::new(config).unwrap();
        let err = providers.embed_text("x").unwrap_err();
        assert!(matches!(err, ProviderError::Transport(_) | ProviderError::Timeout), "{err:?}");
        assert!(HttpProviders::new(ProviderConfig::default()).is_err());
    }
}
