use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::domain::TypeTag;

use super::Stage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned output that does not match the {expected:?} schema: {detail}")]
    InvalidOutput { expected: TypeTag, detail: String },
    #[error("provider is not configured: {0}")]
    Config(String),
    #[error("provider does not support {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Mock,
    Real,
}

impl std::fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProviderMode::Mock => "mock",
            ProviderMode::Real => "real",
        })
    }
}

/// A structured-output request for one generation stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub stage: Stage,
    pub system_prompt: String,
    pub user_payload: serde_json::Value,
    pub output_schema: TypeTag,
}

/// Raw media produced or consumed by a provider. The store content-addresses
/// these into asset ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaBlob {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// Text, image and speech generation behind one interface.
///
/// `complete` returns a serialized JSON object matching
/// `request.output_schema`, or an error. It never returns free prose.
/// Implementations must be safe to call from several threads at once.
pub trait GenerationProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<u8>, ProviderError>;

    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError>;

    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError>;

    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError>;
}

impl<P: GenerationProvider + ?Sized> GenerationProvider for Arc<P> {
    fn mode(&self) -> ProviderMode {
        (**self).mode()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<u8>, ProviderError> {
        (**self).complete(request)
    }
    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError> {
        (**self).generate_image(prompt, negative_prompt, reference)
    }
    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError> {
        (**self).synthesize_speech(text)
    }
    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError> {
        (**self).transcribe(audio)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallKind {
    Complete { stage: Stage, schema: TypeTag },
    Image,
    Speech,
    Transcribe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub kind: CallKind,
    pub mode: ProviderMode,
    pub payload: Option<serde_json::Value>,
}

/// Wraps a provider and records every call made through it.
pub struct RecordingProvider<P> {
    inner: P,
    calls: Mutex<Vec<RecordedCall>>,
}

impl<P: GenerationProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    fn record(&self, kind: CallKind, payload: Option<serde_json::Value>) {
        let mode = self.inner.mode();
        self.calls.lock().unwrap().push(RecordedCall { kind, mode, payload });
    }
}

impl<P: GenerationProvider> GenerationProvider for RecordingProvider<P> {
    fn mode(&self) -> ProviderMode {
        self.inner.mode()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<u8>, ProviderError> {
        self.record(
            CallKind::Complete { stage: request.stage, schema: request.output_schema },
            Some(request.user_payload.clone()),
        );
        self.inner.complete(request)
    }

    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError> {
        self.record(CallKind::Image, Some(serde_json::Value::String(prompt.to_owned())));
        self.inner.generate_image(prompt, negative_prompt, reference)
    }

    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError> {
        self.record(CallKind::Speech, None);
        self.inner.synthesize_speech(text)
    }

    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError> {
        self.record(CallKind::Transcribe, None);
        self.inner.transcribe(audio)
    }
}

/// A step in a [`ScriptedProvider`] script.
pub enum ScriptStep {
    /// Return these bytes verbatim.
    Reply(Vec<u8>),
    /// Rewrite what the fallback provider would have produced.
    Edit(Box<dyn Fn(serde_json::Value) -> serde_json::Value + Send + Sync>),
    Fail(ProviderError),
}

/// Plays scripted `complete` responses in order, then defers to a fallback
/// provider. Media calls always go to the fallback.
pub struct ScriptedProvider<P> {
    fallback: P,
    script: Mutex<VecDeque<ScriptStep>>,
    repeat_last_edit: Option<Arc<dyn Fn(serde_json::Value) -> serde_json::Value + Send + Sync>>,
}

impl<P: GenerationProvider> ScriptedProvider<P> {
    pub fn new(fallback: P, script: impl IntoIterator<Item = ScriptStep>) -> Self {
        ScriptedProvider {
            fallback,
            script: Mutex::new(script.into_iter().collect()),
            repeat_last_edit: None,
        }
    }

    /// Applies `edit` to every fallback completion, forever.
    pub fn always(
        fallback: P,
        edit: impl Fn(serde_json::Value) -> serde_json::Value + Send + Sync + 'static,
    ) -> Self {
        ScriptedProvider {
            fallback,
            script: Mutex::new(VecDeque::new()),
            repeat_last_edit: Some(Arc::new(edit)),
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }

    fn edited(
        &self,
        request: &CompletionRequest,
        edit: &dyn Fn(serde_json::Value) -> serde_json::Value,
    ) -> Result<Vec<u8>, ProviderError> {
        let bytes = self.fallback.complete(request)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| {
            ProviderError::InvalidOutput { expected: request.output_schema, detail: e.to_string() }
        })?;
        Ok(serde_json::to_vec(&edit(value)).expect("json values serialize"))
    }
}

impl<P: GenerationProvider> GenerationProvider for ScriptedProvider<P> {
    fn mode(&self) -> ProviderMode {
        self.fallback.mode()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<u8>, ProviderError> {
        let step = self.script.lock().unwrap().pop_front();
        match step {
            Some(ScriptStep::Reply(bytes)) => Ok(bytes),
            Some(ScriptStep::Fail(e)) => Err(e),
            Some(ScriptStep::Edit(edit)) => self.edited(request, edit.as_ref()),
            None => match &self.repeat_last_edit {
                Some(edit) => self.edited(request, edit.as_ref()),
                None => self.fallback.complete(request),
            },
        }
    }

    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError> {
        self.fallback.generate_image(prompt, negative_prompt, reference)
    }

    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError> {
        self.fallback.synthesize_speech(text)
    }

    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError> {
        self.fallback.transcribe(audio)
    }
}
