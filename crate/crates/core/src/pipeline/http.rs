//! Provider backed by an OpenAI-compatible HTTP API.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::check_schema;

use super::provider::{CompletionRequest, GenerationProvider, MediaBlob, ProviderError, ProviderMode};

static NETWORK_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests any [`HttpProvider`] in this process has started.
pub fn network_request_count() -> u64 {
    NETWORK_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpProviderConfig {
    /// Base URL, for example `https://api.openai.com/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer credential.
    pub api_key_env: String,
    /// Model per stage name (`framework`, `episode`, ...) plus `image`,
    /// `speech` and `transcribe`. `default` covers text stages without an
    /// entry of their own.
    pub models: BTreeMap<String, String>,
    pub timeout_secs: u64,
    pub voice: String,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        let models = [
            ("default", "gpt-4o-mini"),
            ("image", "gpt-image-1"),
            ("speech", "tts-1"),
            ("transcribe", "whisper-1"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        HttpProviderConfig {
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "STORYECHO_API_KEY".into(),
            models,
            timeout_secs: 120,
            voice: "alloy".into(),
        }
    }
}

impl HttpProviderConfig {
    fn model(&self, key: &str) -> Result<&str, ProviderError> {
        self.models
            .get(key)
            .or_else(|| self.models.get("default"))
            .map(String::as_str)
            .ok_or_else(|| ProviderError::Config(format!("no model configured for `{key}`")))
    }
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            ProviderError::Config(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Ok(Self::new(config, api_key))
    }

    pub fn new(config: HttpProviderConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider { config, api_key, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.api_key)
    }

    fn finish(
        &self,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Vec<u8>, ProviderError> {
        let mut resp = result.map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            let text = String::from_utf8_lossy(&body);
            return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
        }
        Ok(body)
    }

    fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<Vec<u8>, ProviderError> {
        NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let result = self
            .agent
            .post(&self.url(path))
            .header("Authorization", &self.auth())
            .send_json(body);
        self.finish(result)
    }

    fn post_multipart(&self, path: &str, form: Multipart) -> Result<Vec<u8>, ProviderError> {
        NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let (content_type, bytes) = form.finish();
        let result = self
            .agent
            .post(&self.url(path))
            .header("Authorization", &self.auth())
            .header("Content-Type", &content_type)
            .send(&bytes[..]);
        self.finish(result)
    }
}

fn json_field<'a>(v: &'a serde_json::Value, path: &[&str]) -> Option<&'a serde_json::Value> {
    path.iter().try_fold(v, |v, key| match key.parse::<usize>() {
        Ok(i) => v.get(i),
        Err(_) => v.get(*key),
    })
}

fn transport(detail: impl Into<String>) -> ProviderError {
    ProviderError::Transport(detail.into())
}

impl GenerationProvider for HttpProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Real
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Vec<u8>, ProviderError> {
        let user = serde_json::to_string(&req.user_payload).expect("json values serialize");
        let body = json!({
            "model": self.config.model(req.stage.as_str())?,
            "response_format": { "type": "json_object" },
            "messages": [
                { "role": "system", "content": req.system_prompt },
                { "role": "user", "content": user },
            ],
        });
        let raw = self.post_json("chat/completions", &body)?;
        let resp: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| transport(format!("bad response: {e}")))?;
        let content = json_field(&resp, &["choices", "0", "message", "content"])
            .and_then(|c| c.as_str())
            .ok_or_else(|| transport("response has no message content"))?;
        let bytes = content.trim().as_bytes().to_vec();
        check_schema(&bytes, req.output_schema).map_err(|e| ProviderError::InvalidOutput {
            expected: req.output_schema,
            detail: e.to_string(),
        })?;
        Ok(bytes)
    }

    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError> {
        let model = self.config.model("image")?;
        let full = if negative_prompt.is_empty() {
            prompt.to_string()
        } else {
            format!("{prompt}\nAvoid: {negative_prompt}")
        };
        let raw = match reference {
            None => self.post_json(
                "images/generations",
                &json!({ "model": model, "prompt": full, "n": 1, "size": "1024x1024" }),
            )?,
            Some(r) => {
                let mut form = Multipart::new();
                form.text("model", model);
                form.text("prompt", &full);
                form.file("image", "reference.png", &r.media_type, &r.bytes);
                self.post_multipart("images/edits", form)?
            }
        };
        let resp: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| transport(format!("bad response: {e}")))?;
        let b64 = json_field(&resp, &["data", "0", "b64_json"])
            .and_then(|v| v.as_str())
            .ok_or_else(|| transport("image response has no b64_json"))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| transport(format!("image payload is not base64: {e}")))?;
        Ok(MediaBlob { media_type: "image/png".into(), bytes })
    }

    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError> {
        let body = json!({
            "model": self.config.model("speech")?,
            "input": text,
            "voice": self.config.voice,
            "response_format": "mp3",
        });
        let bytes = self.post_json("audio/speech", &body)?;
        Ok(MediaBlob { media_type: "audio/mpeg".into(), bytes })
    }

    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError> {
        let mut form = Multipart::new();
        form.text("model", self.config.model("transcribe")?);
        form.file("file", "recording", &audio.media_type, &audio.bytes);
        let raw = self.post_multipart("audio/transcriptions", form)?;
        let resp: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| transport(format!("bad response: {e}")))?;
        resp.get("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| transport("transcription response has no text"))
    }
}

/// Minimal `multipart/form-data` body builder.
struct Multipart {
    boundary: String,
    body: Vec<u8>,
}

impl Multipart {
    fn new() -> Self {
        let n = NETWORK_REQUESTS.load(Ordering::SeqCst);
        Multipart { boundary: format!("storyecho-boundary-{n:016x}"), body: Vec::new() }
    }

    fn text(&mut self, name: &str, value: &str) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n",
                self.boundary
            )
            .as_bytes(),
        );
    }

    fn file(&mut self, name: &str, filename: &str, media_type: &str, bytes: &[u8]) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{filename}\"\r\nContent-Type: {media_type}\r\n\r\n",
                self.boundary
            )
            .as_bytes(),
        );
        self.body.extend_from_slice(bytes);
        self.body.extend_from_slice(b"\r\n");
    }

    fn finish(mut self) -> (String, Vec<u8>) {
        self.body.extend_from_slice(format!("--{}--\r\n", self.boundary).as_bytes());
        (format!("multipart/form-data; boundary={}", self.boundary), self.body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipart_layout() {
        let mut m = Multipart::new();
        m.text("model", "x");
        m.file("file", "a.wav", "audio/wav", b"RIFF");
        let (ct, body) = m.finish();
        let boundary = ct.split("boundary=").nth(1).unwrap();
        let text = String::from_utf8(body).unwrap();
        assert!(text.starts_with(&format!("--{boundary}\r\n")));
        assert!(text.ends_with(&format!("--{boundary}--\r\n")));
        assert!(text.contains("filename=\"a.wav\""));
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        let cfg = HttpProviderConfig {
            api_key_env: "STORYECHO_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..Default::default()
        };
        assert!(matches!(HttpProvider::from_env(cfg), Err(ProviderError::Config(_))));
    }

    #[test]
    fn model_lookup_falls_back_to_default() {
        let cfg = HttpProviderConfig::default();
        assert_eq!(cfg.model("episode").unwrap(), "gpt-4o-mini");
        assert_eq!(cfg.model("image").unwrap(), "gpt-image-1");
    }
}
