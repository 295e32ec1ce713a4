//! The family loop as a service: every operation the HTTP layer and the
//! command line expose, backed by one store and one pipeline.
//!
//! Generation work is split in two halves. An `enqueue_*`/`start_*` call
//! checks preconditions, moves the session and records queued jobs, then
//! hands back a [`Task`]. [`Engine::run`] performs the task. Callers decide
//! whether to run it inline or on a worker.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use crate::domain::*;
use crate::pipeline::{
    avatar_feedback_state, select_ending_variant, AvatarFeedbackState, EpisodeOverrides, GenerationJob,
    JobStatus, MediaBlob, Pipeline, PipelineError, ProviderMode, Stage, SUMMARY_HISTORY,
};
use crate::session::{
    check_interaction, next_state, EventKind, InteractionEvent, InteractionPayload, LoopError, SessionEvent,
    SessionState, TfoSession,
};
use crate::store::{IdempotentResponse, Store, StoreError, StoredEpisode, StoredFeedback};
use crate::validate::{validate_episode, ValidationReport};

/// How many delivered messages count as a child's recent feedback history.
pub const FEEDBACK_HISTORY: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("validation failed: {}", .0.summary())]
    Validation(ValidationReport),
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("busy: {0}")]
    Busy(String),
}

/// Coarse error classes, each with one fixed HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Internal,
}

impl ErrorClass {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Validation => 422,
            ErrorClass::NotFound => 404,
            ErrorClass::Conflict => 409,
            ErrorClass::Provider => 502,
            ErrorClass::Internal => 500,
        }
    }
}

impl EngineError {
    pub fn code(&self) -> String {
        match self {
            EngineError::Store(e) => e.code().into(),
            EngineError::Loop(e) => e.code().into(),
            EngineError::Pipeline(PipelineError::GenerationFailed { report, .. }) => report
                .violations
                .first()
                .map_or_else(|| "GenerationFailed".to_string(), |v| v.code.to_string()),
            EngineError::Pipeline(e) => e.code().into(),
            EngineError::Domain(e) => e.code().into(),
            EngineError::Validation(r) => {
                r.violations.first().map_or_else(|| "ValidationFailed".to_string(), |v| v.code.to_string())
            }
            EngineError::NotReady(_) => "NotReady".into(),
            EngineError::Busy(_) => "Busy".into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            EngineError::Store(e) => match e {
                StoreError::Referential(_) | StoreError::Domain(_) => Validation,
                StoreError::Conflict(_) => Conflict,
                StoreError::ChildNotFound(_) | StoreError::NotFound { .. } => NotFound,
                StoreError::Storage(_) | StoreError::Corrupt { .. } => Internal,
                StoreError::Loop(l) => loop_class(l),
            },
            EngineError::Loop(l) => loop_class(l),
            EngineError::Pipeline(p) => match p {
                PipelineError::Precondition(_) | PipelineError::FoodMismatch { .. } | PipelineError::Range(_) => {
                    Validation
                }
                PipelineError::GenerationFailed { .. } | PipelineError::Provider(_) => Provider,
            },
            EngineError::Domain(_) | EngineError::Validation(_) => Validation,
            EngineError::NotReady(_) | EngineError::Busy(_) => Conflict,
        }
    }
}

fn loop_class(e: &LoopError) -> ErrorClass {
    match e {
        LoopError::ChildNotFound(_) | LoopError::SessionNotFound(_) => ErrorClass::NotFound,
        LoopError::SessionAlreadyActive { .. }
        | LoopError::IllegalTransition { .. }
        | LoopError::SessionClosed(_)
        | LoopError::DuplicateChoice(_) => ErrorClass::Conflict,
        LoopError::FoodMismatch { .. }
        | LoopError::UnknownEventKey(_)
        | LoopError::InvalidEvent(_)
        | LoopError::Precondition(_)
        | LoopError::Domain(_) => ErrorClass::Validation,
    }
}

pub type EngineResult<T> = Result<T, EngineError>;

/// Source of timestamps. The stepped clock makes runs reproducible.
#[derive(Debug)]
pub enum Clock {
    System,
    Stepped { next: AtomicU64, step: u64 },
}

impl Clock {
    pub fn stepped(start: u64, step: u64) -> Self {
        Clock::Stepped { next: AtomicU64::new(start), step }
    }

    pub fn now(&self) -> Timestamp {
        match self {
            Clock::System => Timestamp::now(),
            Clock::Stepped { next, step } => Timestamp(next.fetch_add(*step, Ordering::SeqCst)),
        }
    }
}

// ---- request and response bodies -------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewAvatar {
    pub nickname: String,
    pub gender: Gender,
    #[serde(default)]
    pub clothing: String,
    #[serde(default)]
    pub accessories: Vec<String>,
    #[serde(default)]
    pub base_reference_image: Option<AssetId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewFramework {
    pub child_id: ChildId,
    pub theme: String,
    pub mode: StoryMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    pub child_id: ChildId,
    pub target_food: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateRequest {
    /// Defaults to the child's most recent framework.
    pub framework_id: Option<FrameworkId>,
    pub overrides: EpisodeOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve,
    Regenerate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewInteraction {
    pub page_id: PageId,
    pub event_key: String,
    pub payload: InteractionPayload,
}

/// A post-meal record before the store assigns its id and time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewPostMealRecord {
    pub target_food: String,
    pub baseline_try: u8,
    pub try_level: u8,
    pub intake: u8,
    pub resistance: u8,
    pub emotion: u8,
    pub parent_pressure: u8,
    pub helpfulness: u8,
    pub self_rating: u8,
    #[serde(default)]
    pub self_description: String,
    #[serde(default)]
    pub special_circumstances: Vec<SpecialCircumstance>,
}

impl NewPostMealRecord {
    pub fn into_record(self, record_id: RecordId, timestamp: Timestamp) -> PostMealRecord {
        PostMealRecord {
            record_id,
            target_food: self.target_food,
            baseline_try: self.baseline_try,
            try_level: self.try_level,
            intake: self.intake,
            resistance: self.resistance,
            emotion: self.emotion,
            parent_pressure: self.parent_pressure,
            helpfulness: self.helpfulness,
            self_rating: self.self_rating,
            self_description: self.self_description,
            special_circumstances: self.special_circumstances,
            timestamp,
        }
    }
}

/// Returned by calls that start background work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accepted {
    pub session_id: Option<SessionId>,
    pub jobs: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackView {
    pub feedback: FeedbackMessage,
    pub avatar_state: AvatarFeedbackState,
    pub ending_variant: EndingVariant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub status: String,
    pub mode: ProviderMode,
}

/// Deferred generation work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Framework { job_id: JobId, framework_id: FrameworkId, request: NewFramework },
    Episode { job_id: JobId, session_id: SessionId, framework_id: FrameworkId, overrides: EpisodeOverrides },
    FollowUp { feedback_job: JobId, ending_job: JobId, session_id: SessionId },
}

impl Task {
    pub fn job_ids(&self) -> Vec<JobId> {
        match self {
            Task::Framework { job_id, .. } | Task::Episode { job_id, .. } => vec![job_id.clone()],
            Task::FollowUp { feedback_job, ending_job, .. } => vec![feedback_job.clone(), ending_job.clone()],
        }
    }

    pub fn session_id(&self) -> Option<&SessionId> {
        match self {
            Task::Framework { .. } => None,
            Task::Episode { session_id, .. } | Task::FollowUp { session_id, .. } => Some(session_id),
        }
    }

    pub fn accepted(&self) -> Accepted {
        Accepted { session_id: self.session_id().cloned(), jobs: self.job_ids() }
    }
}

pub struct Engine {
    store: RwLock<Store>,
    pipeline: Pipeline,
    constraints: BasicConstraints,
    clock: Clock,
    session_locks: Mutex<HashMap<SessionId, Arc<Mutex<()>>>>,
}

impl Engine {
    /// Wraps an open store. Jobs left queued or running by an earlier
    /// process are marked failed, since their work is gone.
    pub fn new(mut store: Store, pipeline: Pipeline, constraints: BasicConstraints, clock: Clock) -> EngineResult<Self> {
        let stale: Vec<GenerationJob> = store
            .tables()
            .jobs
            .values()
            .filter(|j| matches!(j.status, JobStatus::Queued | JobStatus::Running))
            .cloned()
            .collect();
        for mut job in stale {
            job.status = JobStatus::Failed;
            job.error = Some("Interrupted: the process stopped before the job finished".into());
            job.updated_at = clock.now();
            store.put_job(job)?;
        }
        Ok(Engine { store: RwLock::new(store), pipeline, constraints, clock, session_locks: Mutex::new(HashMap::new()) })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn constraints(&self) -> &BasicConstraints {
        &self.constraints
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn session_lock(&self, id: &SessionId) -> Arc<Mutex<()>> {
        let mut map = self.session_locks.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(id.clone()).or_default().clone()
    }

    /// Runs `f` while holding the single-writer lock of `session`.
    fn with_session<T>(&self, session: &SessionId, f: impl FnOnce() -> EngineResult<T>) -> EngineResult<T> {
        let lock = self.session_lock(session);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        f()
    }

    pub fn health(&self) -> Health {
        Health { status: "ok".into(), mode: self.pipeline.provider().mode() }
    }

    // ---- avatars, assets, tokens -----------------------------------------

    pub fn create_avatar(&self, req: NewAvatar, family: Option<&str>) -> EngineResult<ChildAvatar> {
        let mut store = self.write();
        let avatar = ChildAvatar {
            avatar_id: store.next_avatar_id(),
            nickname: req.nickname.trim().to_string(),
            gender: req.gender,
            clothing: req.clothing,
            accessories: req.accessories,
            base_reference_image: req.base_reference_image,
        };
        avatar.check_invariants()?;
        store.put_avatar(avatar.clone(), family)?;
        Ok(avatar)
    }

    pub fn avatar(&self, id: &AvatarId) -> EngineResult<ChildAvatar> {
        Ok(self.read().avatar(id)?)
    }

    pub fn put_asset(&self, blob: &MediaBlob) -> EngineResult<AssetId> {
        Ok(self.write().put_blob(blob)?)
    }

    pub fn asset(&self, id: &AssetId) -> EngineResult<MediaBlob> {
        Ok(self.read().read_blob(id)?)
    }

    pub fn delete_asset(&self, id: &AssetId) -> EngineResult<()> {
        Ok(self.write().delete_asset(id)?)
    }

    pub fn transcribe(&self, id: &AssetId) -> EngineResult<String> {
        let blob = self.asset(id)?;
        Ok(self.pipeline.provider().transcribe(&blob).map_err(PipelineError::from)?)
    }

    /// Creates a bearer token for `family` and returns it.
    pub fn issue_token(&self, family: &str, entropy: &[u8]) -> EngineResult<String> {
        use sha2::{Digest, Sha256};
        let token = hex::encode(Sha256::digest([entropy, family.as_bytes()].concat()));
        self.write().put_token(&token, family)?;
        Ok(token)
    }

    pub fn token_family(&self, token: &str) -> Option<String> {
        self.read().token_family(token).map(str::to_string)
    }

    pub fn idempotent(&self, key: &str) -> Option<IdempotentResponse> {
        self.read().idempotent(key).cloned()
    }

    pub fn remember(&self, key: &str, response: IdempotentResponse) -> EngineResult<()> {
        Ok(self.write().put_idempotent(key, response)?)
    }

    // ---- frameworks ---------------------------------------------------------

    pub fn enqueue_framework(&self, req: NewFramework) -> EngineResult<Task> {
        let mut store = self.write();
        let avatar = store.avatar(&req.child_id)?;
        if req.theme.trim().is_empty() {
            return Err(PipelineError::Precondition("theme must not be empty".into()).into());
        }
        avatar.check_invariants()?;
        let job = self.new_job(&store, Stage::Framework, None);
        let job_id = store.put_job(job)?;
        // Named after its job so that concurrent requests never collide.
        let framework_id = FrameworkId::new(job_id.as_str().replacen("job", "fw", 1));
        Ok(Task::Framework { job_id, framework_id, request: req })
    }

    pub fn framework(&self, id: &FrameworkId) -> EngineResult<StoryFramework> {
        Ok(self.read().framework(id)?.framework)
    }

    // ---- sessions -------------------------------------------------------------

    pub fn create_session(&self, req: NewSession) -> EngineResult<TfoSession> {
        let mut store = self.write();
        store.avatar(&req.child_id).map_err(|_| LoopError::ChildNotFound(req.child_id.clone()))?;
        if let Some(active) = store.active_session(&req.child_id) {
            return Err(LoopError::SessionAlreadyActive {
                child: req.child_id.clone(),
                session: active.session_id.clone(),
            }
            .into());
        }
        let session = TfoSession::new(store.next_session_id(), req.child_id, &req.target_food, self.now())?;
        store.create_session(session.clone())?;
        Ok(session)
    }

    pub fn session(&self, id: &SessionId) -> EngineResult<TfoSession> {
        Ok(self.read().session(id)?)
    }

    pub fn close_session(&self, id: &SessionId) -> EngineResult<TfoSession> {
        self.with_session(id, || Ok(self.write().close_session(id, self.now())?))
    }

    pub fn set_task_done(&self, id: &SessionId, done: bool) -> EngineResult<TfoSession> {
        self.with_session(id, || Ok(self.write().set_task_done(id, done, self.now())?))
    }

    fn transition(&self, id: &SessionId, event: SessionEvent) -> EngineResult<TfoSession> {
        Ok(self.write().transition(id, event, self.now())?)
    }

    fn has_active_job(store: &Store, session: &SessionId) -> bool {
        store
            .jobs_for_session(session)
            .iter()
            .any(|j| matches!(j.status, JobStatus::Queued | JobStatus::Running))
    }

    /// Starts (or restarts) the work a session is waiting on: a main episode
    /// before review, or feedback and ending after the meal.
    pub fn start_generation(&self, id: &SessionId, req: GenerateRequest) -> EngineResult<Task> {
        self.with_session(id, || {
            let session = self.session(id)?;
            if session.closed {
                return Err(LoopError::SessionClosed(id.clone()).into());
            }
            if Self::has_active_job(&self.read(), id) {
                return Err(EngineError::Busy(format!("session {id} already has a generation job")));
            }
            match session.state {
                SessionState::FoodSelected | SessionState::StoryGenerating => {
                    let framework_id = self.resolve_framework(&session, req.framework_id.as_ref())?;
                    if session.state == SessionState::FoodSelected {
                        self.transition(id, SessionEvent::GenerationStarted)?;
                    }
                    let mut overrides = req.overrides;
                    overrides.variation = overrides.variation.max(session.regeneration_count);
                    self.queue_episode(id, framework_id, overrides)
                }
                SessionState::PostMealRecorded | SessionState::FeedbackDelivered => self.queue_follow_up(id),
                state => Err(LoopError::IllegalTransition { state, event: EventKind::GenerationStarted }.into()),
            }
        })
    }

    fn resolve_framework(&self, session: &TfoSession, requested: Option<&FrameworkId>) -> EngineResult<FrameworkId> {
        let store = self.read();
        match requested {
            Some(id) => {
                let f = store.framework(id)?;
                if f.child_id != session.child_id {
                    return Err(StoreError::NotFound { kind: "framework", id: id.to_string() }.into());
                }
                Ok(id.clone())
            }
            None => store
                .frameworks_for(&session.child_id)
                .last()
                .map(|f| f.framework.framework_id.clone())
                .ok_or_else(|| PipelineError::Precondition("the child has no story framework yet".into()).into()),
        }
    }

    fn new_job(&self, store: &Store, stage: Stage, session: Option<&SessionId>) -> GenerationJob {
        let mut job = GenerationJob::new(store.next_job_id(), stage);
        job.session_id = session.cloned();
        let now = self.now();
        job.created_at = now;
        job.updated_at = now;
        job
    }

    fn queue_episode(&self, id: &SessionId, framework_id: FrameworkId, overrides: EpisodeOverrides) -> EngineResult<Task> {
        let mut store = self.write();
        let job = self.new_job(&store, Stage::Episode, Some(id));
        let job_id = store.put_job(job)?;
        Ok(Task::Episode { job_id, session_id: id.clone(), framework_id, overrides })
    }

    fn queue_follow_up(&self, id: &SessionId) -> EngineResult<Task> {
        let mut store = self.write();
        let feedback = self.new_job(&store, Stage::Feedback, Some(id));
        let feedback_job = store.put_job(feedback)?;
        let ending = self.new_job(&store, Stage::Ending, Some(id));
        let ending_job = store.put_job(ending)?;
        Ok(Task::FollowUp { feedback_job, ending_job, session_id: id.clone() })
    }

    /// The current main episode of a session, with its page images.
    pub fn episode(&self, id: &SessionId) -> EngineResult<StoredEpisode> {
        let store = self.read();
        let session = store.session(id)?;
        let ep = session
            .main_episode_id
            .ok_or_else(|| EngineError::NotReady(format!("session {id} has no episode yet")))?;
        Ok(store.episode(&ep)?)
    }

    pub fn review(&self, id: &SessionId, req: ReviewRequest) -> EngineResult<(TfoSession, Option<Task>)> {
        self.with_session(id, || {
            let session = self.session(id)?;
            match req.decision {
                ReviewDecision::Approve => {
                    if session.state != SessionState::ReviewPending {
                        return Err(LoopError::IllegalTransition { state: session.state, event: EventKind::Approved }.into());
                    }
                    let episode_id = session.main_episode_id.clone().expect("set from ReviewPending on");
                    self.write().approve_episode(&episode_id)?;
                    Ok((self.transition(id, SessionEvent::Approved)?, None))
                }
                ReviewDecision::Regenerate => {
                    let next = self.transition(id, SessionEvent::RegenerationRequested)?;
                    let framework_id = self.read().episode(next.main_episode_id.as_ref().expect("kept"))?.episode.framework_id;
                    let overrides = EpisodeOverrides {
                        parent_note: req.note.filter(|n| !n.trim().is_empty()),
                        variation: next.regeneration_count,
                        ..EpisodeOverrides::default()
                    };
                    let task = self.queue_episode(id, framework_id, overrides)?;
                    Ok((next, Some(task)))
                }
            }
        })
    }

    pub fn reading_finished(&self, id: &SessionId) -> EngineResult<TfoSession> {
        self.with_session(id, || self.transition(id, SessionEvent::ReadingFinished))
    }

    pub fn revisit(&self, id: &SessionId) -> EngineResult<TfoSession> {
        self.with_session(id, || self.transition(id, SessionEvent::Revisited))
    }

    pub fn record_interaction(&self, id: &SessionId, req: NewInteraction) -> EngineResult<InteractionEvent> {
        self.with_session(id, || {
            let mut store = self.write();
            let session = store.session(id)?;
            let main = session.main_episode_id.as_ref().map(|e| store.episode(e)).transpose()?;
            let ending = session.ending_episode_id.as_ref().map(|e| store.episode(e)).transpose()?;
            let mut pages: Vec<&Page> = Vec::new();
            if let Some(m) = &main {
                pages.extend(m.episode.pages.iter());
            }
            if matches!(session.state, SessionState::EndingReady | SessionState::Revisited) {
                if let Some(e) = &ending {
                    pages.extend(e.episode.pages.iter());
                }
            }
            if let Some(asset) = &req.payload.audio_asset {
                if !store.tables().assets.contains_key(asset) {
                    return Err(StoreError::Referential(format!("missing asset {asset}")).into());
                }
            }
            let event = InteractionEvent {
                event_id: store.next_event_id(),
                session_id: id.clone(),
                page_id: req.page_id,
                event_key: req.event_key,
                payload: req.payload,
                timestamp: self.now(),
            };
            let logged = store.interactions_for(id);
            check_interaction(&session, &pages, &logged, &event)?;
            store.append_interaction(event.clone())?;
            Ok(event)
        })
    }

    pub fn submit_post_meal(&self, id: &SessionId, req: NewPostMealRecord) -> EngineResult<(TfoSession, Task)> {
        self.with_session(id, || {
            let session = self.session(id)?;
            if session.closed {
                return Err(LoopError::SessionClosed(id.clone()).into());
            }
            if next_state(session.state, EventKind::PostMealSubmitted).is_none() {
                return Err(LoopError::IllegalTransition { state: session.state, event: EventKind::PostMealSubmitted }.into());
            }
            if req.target_food.trim() != session.target_food {
                return Err(LoopError::FoodMismatch {
                    expected: session.target_food.clone(),
                    actual: req.target_food.clone(),
                }
                .into());
            }
            let now = self.now();
            let record_id = self.read().next_record_id();
            let record = req.into_record(record_id.clone(), now);
            record.check_invariants()?;
            self.write().put_record(id, record)?;
            let next = self.transition(id, SessionEvent::PostMealSubmitted { record_id })?;
            let task = self.queue_follow_up(id)?;
            Ok((next, task))
        })
    }

    pub fn feedback(&self, id: &SessionId) -> EngineResult<FeedbackView> {
        let store = self.read();
        let session = store.session(id)?;
        let delivered = store
            .feedback_for_session(id)
            .ok_or_else(|| EngineError::NotReady(format!("no feedback for session {id} yet")))?;
        let record = store.record(&delivered.message.record_id)?.record;
        debug_assert_eq!(session.record_id.as_ref(), Some(&record.record_id));
        Ok(FeedbackView {
            avatar_state: avatar_feedback_state(&record),
            ending_variant: select_ending_variant(i64::from(record.self_rating)).map_err(PipelineError::from)?,
            feedback: delivered.message,
        })
    }

    pub fn ending(&self, id: &SessionId) -> EngineResult<StoredEpisode> {
        let store = self.read();
        let session = store.session(id)?;
        let ep = session
            .ending_episode_id
            .filter(|_| session.state.at_or_after(SessionState::EndingReady))
            .ok_or_else(|| EngineError::NotReady(format!("the ending of session {id} is not ready")))?;
        Ok(store.episode(&ep)?)
    }

    /// Approved main episodes and delivered endings, in creation order.
    pub fn library(&self, child: &ChildId) -> EngineResult<Vec<StoredEpisode>> {
        let store = self.read();
        store.avatar(child)?;
        let endings: Vec<EpisodeId> = store
            .tables()
            .sessions
            .values()
            .filter(|s| &s.child_id == child && s.state.at_or_after(SessionState::EndingReady))
            .filter_map(|s| s.ending_episode_id.clone())
            .collect();
        let mut out: Vec<StoredEpisode> = store
            .tables()
            .episodes
            .values()
            .filter(|e| &e.child_id == child && (e.approved || endings.contains(&e.episode.episode_id)))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.episode.episode_id.cmp(&b.episode.episode_id));
        Ok(out)
    }

    /// Reads a page aloud and stores the audio.
    pub fn page_speech(&self, id: &SessionId, page: &PageId) -> EngineResult<AssetId> {
        let text = {
            let store = self.read();
            let session = store.session(id)?;
            [session.main_episode_id, session.ending_episode_id]
                .into_iter()
                .flatten()
                .filter_map(|e| store.episode(&e).ok())
                .find_map(|e| e.episode.page(page).map(|p| p.page_text_cn.clone()))
                .ok_or_else(|| StoreError::NotFound { kind: "page", id: page.to_string() })?
        };
        let blob = self.pipeline.provider().synthesize_speech(&text).map_err(PipelineError::from)?;
        self.put_asset(&blob)
    }

    pub fn job(&self, id: &JobId) -> EngineResult<GenerationJob> {
        Ok(self.read().job(id)?)
    }

    pub fn export(&self, child: &ChildId) -> EngineResult<crate::store::FamilyArchive> {
        Ok(self.read().export(child)?)
    }

    /// Validates raw episode bytes the same way for every caller: `Err` for
    /// bytes that are not an episode at all, a report otherwise.
    pub fn validate_episode_bytes(&self, bytes: &[u8]) -> Result<ValidationReport, DomainError> {
        validate_episode_bytes(bytes, &self.constraints)
    }

    // ---- running tasks -------------------------------------------------------

    fn update_job(&self, job: &GenerationJob) -> EngineResult<()> {
        let mut job = job.clone();
        job.updated_at = self.now();
        self.write().put_job(job)?;
        Ok(())
    }

    fn load_job(&self, id: &JobId) -> EngineResult<GenerationJob> {
        let mut job = self.job(id)?;
        job.status = JobStatus::Running;
        self.update_job(&job)?;
        Ok(job)
    }

    fn fail_job(&self, job: &mut GenerationJob, err: &EngineError) {
        job.status = JobStatus::Failed;
        job.error = Some(format!("{}: {err}", err.code()));
        if let Err(e) = self.update_job(job) {
            tracing::error!(job = %job.job_id, error = %e, "could not record a failed job");
        }
    }

    /// Performs a task. Failures are recorded on the task's jobs and returned.
    pub fn run(&self, task: Task) -> EngineResult<()> {
        match task {
            Task::Framework { job_id, framework_id, request } => self.run_framework(&job_id, framework_id, request),
            Task::Episode { job_id, session_id, framework_id, overrides } => {
                self.run_episode(&job_id, &session_id, &framework_id, &overrides)
            }
            Task::FollowUp { feedback_job, ending_job, session_id } => {
                self.run_follow_up(&feedback_job, &ending_job, &session_id)
            }
        }
    }

    fn guarded<T>(&self, job: &mut GenerationJob, f: impl FnOnce(&mut GenerationJob) -> EngineResult<T>) -> EngineResult<T> {
        match f(job) {
            Ok(v) => Ok(v),
            Err(e) => {
                self.fail_job(job, &e);
                Err(e)
            }
        }
    }

    fn run_framework(&self, job_id: &JobId, framework_id: FrameworkId, req: NewFramework) -> EngineResult<()> {
        let mut job = self.load_job(job_id)?;
        self.guarded(&mut job, |job| {
            let avatar = self.avatar(&req.child_id)?;
            let others: Vec<StoryFramework> =
                self.read().frameworks_for(&req.child_id).into_iter().map(|f| f.framework).collect();
            let framework = self.pipeline.generate_framework(
                job,
                framework_id,
                &req.theme,
                req.mode,
                &self.constraints,
                &avatar,
                &others,
            )?;
            let id = self.write().put_framework(&req.child_id, framework)?;
            job.status = JobStatus::Succeeded;
            job.output_ref = Some(id.to_string());
            self.update_job(job)
        })
    }

    fn run_episode(
        &self,
        job_id: &JobId,
        session_id: &SessionId,
        framework_id: &FrameworkId,
        overrides: &EpisodeOverrides,
    ) -> EngineResult<()> {
        let mut job = self.load_job(job_id)?;
        self.guarded(&mut job, |job| {
            let session = self.session(session_id)?;
            let avatar = self.avatar(&session.child_id)?;
            let framework = self.framework(framework_id)?;
            let history = self.read().latest_episodes(&session.child_id, SUMMARY_HISTORY)?;
            let recap = if history.is_empty() {
                None
            } else {
                Some(self.sub_stage(Stage::Summarize, session_id, |j| {
                    self.pipeline.summarize(j, &history, Some(&framework))
                })?)
            };
            let episode_id = self.read().next_episode_id();
            let episode = self.pipeline.generate_episode(
                job,
                episode_id,
                &framework,
                recap.as_ref(),
                &session.target_food,
                &avatar,
                &self.constraints,
                overrides,
            )?;
            let images = self.illustrate(&episode, &avatar)?;
            let id = self.write().put_episode(&session.child_id, Some(session_id), episode, images)?;
            self.with_session(session_id, || self.transition(session_id, SessionEvent::EpisodeDrafted { episode_id: id.clone() }))?;
            job.status = JobStatus::AwaitingReview;
            job.output_ref = Some(id.to_string());
            self.update_job(job)
        })
    }

    /// Runs a helper stage under a job of its own so its attempts are kept.
    fn sub_stage<T>(
        &self,
        stage: Stage,
        session: &SessionId,
        f: impl FnOnce(&mut GenerationJob) -> Result<T, PipelineError>,
    ) -> EngineResult<T> {
        let mut job = {
            let mut store = self.write();
            let mut job = self.new_job(&store, stage, Some(session));
            job.status = JobStatus::Running;
            store.put_job(job.clone())?;
            job
        };
        match f(&mut job) {
            Ok(v) => {
                job.status = JobStatus::Succeeded;
                self.update_job(&job)?;
                Ok(v)
            }
            Err(e) => {
                let e = EngineError::from(e);
                self.fail_job(&mut job, &e);
                Err(e)
            }
        }
    }

    fn illustrate(&self, episode: &Episode, avatar: &ChildAvatar) -> EngineResult<BTreeMap<PageId, AssetId>> {
        let reference = avatar.base_reference_image.as_ref().map(|a| self.asset(a)).transpose()?;
        let images = self
            .pipeline
            .generate_page_images(episode, reference.as_ref())
            .map_err(PipelineError::from)?;
        let mut out = BTreeMap::new();
        for (page, blob) in images {
            out.insert(page, self.put_asset(&blob)?);
        }
        Ok(out)
    }

    fn run_follow_up(&self, feedback_job: &JobId, ending_job: &JobId, session_id: &SessionId) -> EngineResult<()> {
        let session = self.session(session_id)?;
        let record_id = session
            .record_id
            .clone()
            .ok_or_else(|| LoopError::Precondition("the session has no post-meal record".into()))?;
        let record = self.read().record(&record_id)?.record;
        let avatar = self.avatar(&session.child_id)?;

        let mut job = self.load_job(feedback_job)?;
        if session.state == SessionState::PostMealRecorded {
            self.guarded(&mut job, |job| {
                let recent = self.read().recent_feedback_phrases(&session.child_id, FEEDBACK_HISTORY)?;
                let seed = self.pipeline.seed() ^ u64::from_le_bytes(seed_bytes(record_id.as_str()));
                let message = self.pipeline.generate_feedback(job, &record, &avatar, &recent, seed)?;
                self.write().append_feedback(StoredFeedback {
                    child_id: session.child_id.clone(),
                    session_id: session_id.clone(),
                    message,
                    delivered_at: self.now(),
                })?;
                self.with_session(session_id, || self.transition(session_id, SessionEvent::FeedbackShown))?;
                job.status = JobStatus::Succeeded;
                job.output_ref = Some(record_id.to_string());
                self.update_job(job)
            })
            .inspect_err(|e| {
                let mut ending = self.job(ending_job).expect("queued with the feedback job");
                self.fail_job(&mut ending, &EngineError::NotReady(format!("feedback failed: {e}")));
            })?;
        } else {
            job.status = JobStatus::Succeeded;
            job.output_ref = Some(record_id.to_string());
            self.update_job(&job)?;
        }

        let mut job = self.load_job(ending_job)?;
        self.guarded(&mut job, |job| {
            let main_id = session.main_episode_id.clone().expect("set from ReviewPending on");
            let main = self.read().episode(&main_id)?.episode;
            let framework = self.framework(&main.framework_id).ok();
            let mut history = self.read().latest_episodes(&session.child_id, SUMMARY_HISTORY)?;
            if !history.iter().any(|e| e.episode_id == main.episode_id) {
                history.push(main.clone());
                let skip = history.len().saturating_sub(SUMMARY_HISTORY);
                history.drain(..skip);
            }
            let summary = self.sub_stage(Stage::Summarize, session_id, |j| {
                self.pipeline.summarize(j, &history, framework.as_ref())
            })?;
            let episode_id = self.read().next_episode_id();
            let ending = self.pipeline.generate_ending(
                job,
                episode_id,
                &main,
                &record,
                &summary,
                &avatar,
                framework.as_ref(),
                &self.constraints,
            )?;
            let images = self.illustrate(&ending, &avatar)?;
            let id = self.write().put_episode(&session.child_id, Some(session_id), ending, images)?;
            self.with_session(session_id, || {
                self.transition(session_id, SessionEvent::EndingGenerated { episode_id: id.clone() })
            })?;
            job.status = JobStatus::Succeeded;
            job.output_ref = Some(id.to_string());
            self.update_job(job)
        })
    }
}

fn seed_bytes(s: &str) -> [u8; 8] {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(s.as_bytes());
    let mut out = [0u8; 8];
    out.copy_from_slice(&d[..8]);
    out
}

/// Parses raw bytes as an episode against the closed schema and runs every
/// content rule. Bytes that do not form an episode give `Err`.
pub fn validate_episode_bytes(bytes: &[u8], constraints: &BasicConstraints) -> Result<ValidationReport, DomainError> {
    let episode: Episode = parse_schema_only(bytes)?;
    Ok(validate_episode(&episode, constraints))
}
