//! Content generation: prompt templates, provider calls and the
//! validate-and-retry gate that every stage goes through.

mod http;
mod payload;
mod mock;
mod prompts;
mod provider;
mod retry;
mod rules;
mod stages;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{JobId, Timestamp};
use crate::validate::ValidationReport;

pub use http::{network_request_count, HttpProvider, HttpProviderConfig};
pub use mock::MockProvider;
pub use prompts::{PromptError, PromptLibrary, PromptTemplate};
pub use provider::{
    CallKind, CompletionRequest, GenerationProvider, MediaBlob, ProviderError, ProviderMode,
    RecordedCall, RecordingProvider, ScriptStep, ScriptedProvider,
};
pub use retry::{run_with_validation, DEFAULT_MAX_RETRIES};
pub use rules::{
    avatar_feedback_state, classify_feedback_type, description_signal, select_ending_variant,
    AvatarFeedbackState, DescriptionSignal, Lexicons, RangeError,
};
pub use stages::{assemble_image_prompt, AssembledPrompt, EpisodeOverrides, Pipeline, SUMMARY_HISTORY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Framework,
    Summarize,
    Episode,
    Ending,
    Feedback,
    PageImage,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Framework,
        Stage::Summarize,
        Stage::Episode,
        Stage::Ending,
        Stage::Feedback,
        Stage::PageImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Framework => "framework",
            Stage::Summarize => "summarize",
            Stage::Episode => "episode",
            Stage::Ending => "ending",
            Stage::Feedback => "feedback",
            Stage::PageImage => "page_image",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    AwaitingReview,
    Succeeded,
    Failed,
}

/// Bookkeeping for one stage invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationJob {
    pub job_id: JobId,
    pub stage: Stage,
    pub status: JobStatus,
    pub attempts: u32,
    pub last_report: Option<ValidationReport>,
    /// Id of the value the job produced, once it has one.
    pub output_ref: Option<String>,
    pub error: Option<String>,
    pub session_id: Option<crate::domain::SessionId>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

impl GenerationJob {
    pub fn new(job_id: JobId, stage: Stage) -> Self {
        GenerationJob {
            job_id,
            stage,
            status: JobStatus::Queued,
            attempts: 0,
            last_report: None,
            output_ref: None,
            error: None,
            session_id: None,
            created_at: Timestamp(0),
            updated_at: Timestamp(0),
        }
    }

    /// A throwaway job for direct calls whose bookkeeping nobody keeps.
    pub fn scratch(stage: Stage) -> Self {
        Self::new(JobId::new(format!("scratch_{stage}")), stage)
    }

    pub fn check(&self, max_retries: u32) -> Result<(), String> {
        if self.attempts > max_retries + 1 {
            return Err(format!("{} attempts exceed the limit of {}", self.attempts, max_retries + 1));
        }
        if self.status == JobStatus::Succeeded && !self.last_report.as_ref().is_some_and(|r| r.ok) {
            return Err("a succeeded job must carry an ok report".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{stage} generation failed after {attempts} attempts: {}", report.summary())]
    GenerationFailed { stage: Stage, attempts: u32, report: ValidationReport },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("food mismatch: expected `{expected}`, got `{actual}`")]
    FoodMismatch { expected: String, actual: String },
    #[error(transparent)]
    Range(#[from] RangeError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Precondition(_) => "PreconditionFailed",
            PipelineError::GenerationFailed { .. } => "GenerationFailed",
            PipelineError::Provider(_) => "ProviderError",
            PipelineError::FoodMismatch { .. } => "FoodMismatch",
            PipelineError::Range(_) => "RangeError",
        }
    }
}
