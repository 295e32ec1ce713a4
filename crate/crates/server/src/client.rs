//! Blocking client for the HTTP service, plus a [`LoopDriver`] over it.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use storyecho_core::demo::{DriverFailure, DriverResult, LoopDriver};
use storyecho_core::domain::*;
use storyecho_core::engine::{
    Accepted, FeedbackView, GenerateRequest, NewAvatar, NewFramework, NewInteraction, NewPostMealRecord, NewSession,
    ReviewRequest,
};
use storyecho_core::pipeline::{GenerationJob, JobStatus};
use storyecho_core::session::{InteractionEvent, TfoSession};
use storyecho_core::store::StoredEpisode;

use crate::ApiError;

/// A raw response: status and body bytes.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json<T: DeserializeOwned>(&self) -> DriverResult<T> {
        if !(200..300).contains(&self.status) {
            return Err(self.failure());
        }
        serde_json::from_slice(&self.body)
            .map_err(|e| DriverFailure { code: "ParseError".into(), detail: e.to_string() })
    }

    pub fn failure(&self) -> DriverFailure {
        match serde_json::from_slice::<ApiError>(&self.body) {
            Ok(e) => DriverFailure { code: e.code, detail: e.detail },
            Err(_) => DriverFailure {
                code: format!("Http{}", self.status),
                detail: String::from_utf8_lossy(&self.body).into_owned(),
            },
        }
    }
}

pub struct ApiClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
    /// How long to wait for a job before giving up.
    pub job_timeout: Duration,
}

fn transport(e: ureq::Error) -> DriverFailure {
    DriverFailure { code: "Transport".into(), detail: e.to_string() }
}

impl ApiClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        ApiClient { base: base.into().trim_end_matches('/').to_string(), token, agent, job_timeout: Duration::from_secs(60) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> DriverResult<Reply> {
        let mut resp = resp.map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(crate::MAX_BODY_BYTES as u64)
            .read_to_vec()
            .map_err(transport)?;
        Ok(Reply { status, body })
    }

    pub fn get(&self, path: &str) -> DriverResult<Reply> {
        let mut req = self.agent.get(&self.url(path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    /// POSTs raw bytes with optional content type and idempotency key.
    pub fn post_bytes(
        &self,
        path: &str,
        content_type: &str,
        body: &[u8],
        idempotency_key: Option<&str>,
    ) -> DriverResult<Reply> {
        let mut req = self.agent.post(&self.url(path)).header("Content-Type", content_type);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        if let Some(k) = idempotency_key {
            req = req.header("Idempotency-Key", k);
        }
        Self::finish(req.send(body))
    }

    pub fn post<B: Serialize>(&self, path: &str, body: &B) -> DriverResult<Reply> {
        let bytes = serde_json::to_vec(body)
            .map_err(|e| DriverFailure { code: "SchemaViolation".into(), detail: e.to_string() })?;
        self.post_bytes(path, "application/json", &bytes, None)
    }

    pub fn post_empty(&self, path: &str) -> DriverResult<Reply> {
        self.post_bytes(path, "application/json", b"", None)
    }

    /// Polls a job until it stops running.
    pub fn wait_job(&self, id: &JobId) -> DriverResult<GenerationJob> {
        let start = Instant::now();
        loop {
            let job: GenerationJob = self.get(&format!("/jobs/{id}"))?.json()?;
            if !matches!(job.status, JobStatus::Queued | JobStatus::Running) {
                return Ok(job);
            }
            if start.elapsed() > self.job_timeout {
                return Err(DriverFailure { code: "Timeout".into(), detail: format!("job {id} did not finish") });
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    fn wait_all(&self, accepted: &Accepted) -> DriverResult<Vec<GenerationJob>> {
        accepted.jobs.iter().map(|j| self.wait_job(j)).collect()
    }
}

/// Drives the loop through the HTTP API.
pub struct HttpDriver {
    pub client: ApiClient,
}

impl LoopDriver for HttpDriver {
    fn create_avatar(&mut self, req: NewAvatar) -> DriverResult<ChildAvatar> {
        self.client.post("/avatars", &req)?.json()
    }

    fn create_framework(&mut self, req: NewFramework) -> DriverResult<StoryFramework> {
        let accepted: Accepted = self.client.post("/frameworks", &req)?.json()?;
        let jobs = self.client.wait_all(&accepted)?;
        let job = jobs.first().ok_or_else(|| DriverFailure { code: "NoJob".into(), detail: String::new() })?;
        if job.status == JobStatus::Failed {
            return Err(DriverFailure { code: "GenerationFailed".into(), detail: job.error.clone().unwrap_or_default() });
        }
        let id = job.output_ref.clone().unwrap_or_default();
        self.client.get(&format!("/frameworks/{id}"))?.json()
    }

    fn create_session(&mut self, req: NewSession) -> DriverResult<TfoSession> {
        self.client.post("/sessions", &req)?.json()
    }

    fn generate(&mut self, session: &SessionId, req: GenerateRequest) -> DriverResult<Vec<GenerationJob>> {
        let accepted: Accepted = self.client.post(&format!("/sessions/{session}/generate"), &req)?.json()?;
        self.client.wait_all(&accepted)
    }

    fn episode(&mut self, session: &SessionId) -> DriverResult<StoredEpisode> {
        self.client.get(&format!("/sessions/{session}/episode"))?.json()
    }

    fn review(&mut self, session: &SessionId, req: ReviewRequest) -> DriverResult<TfoSession> {
        let accepted: Accepted = self.client.post(&format!("/sessions/{session}/review"), &req)?.json()?;
        self.client.wait_all(&accepted)?;
        self.session(session)
    }

    fn interact(&mut self, session: &SessionId, req: NewInteraction) -> DriverResult<()> {
        let _: InteractionEvent = self.client.post(&format!("/sessions/{session}/events"), &req)?.json()?;
        Ok(())
    }

    fn reading_finished(&mut self, session: &SessionId) -> DriverResult<TfoSession> {
        self.client.post_empty(&format!("/sessions/{session}/reading-finished"))?.json()
    }

    fn post_meal(&mut self, session: &SessionId, req: NewPostMealRecord) -> DriverResult<Vec<GenerationJob>> {
        let accepted: Accepted = self.client.post(&format!("/sessions/{session}/post-meal"), &req)?.json()?;
        self.client.wait_all(&accepted)
    }

    fn feedback(&mut self, session: &SessionId) -> DriverResult<FeedbackView> {
        self.client.get(&format!("/sessions/{session}/feedback"))?.json()
    }

    fn ending(&mut self, session: &SessionId) -> DriverResult<StoredEpisode> {
        self.client.get(&format!("/sessions/{session}/ending"))?.json()
    }

    fn session(&mut self, session: &SessionId) -> DriverResult<TfoSession> {
        self.client.get(&format!("/sessions/{session}"))?.json()
    }
}
