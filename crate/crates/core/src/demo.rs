//! A scripted pass through the whole loop, used by the `demo-loop` command
//! and by tests that drive the same scenario over HTTP.
//!
//! The scenario talks to a [`LoopDriver`]. [`DirectDriver`] calls the engine
//! in-process; other drivers can reach the engine any other way. The
//! transcript only contains values that a driver returns, so two drivers
//! over equivalent engines print the same bytes.

use std::fmt::Write as _;

use crate::domain::*;
use crate::engine::{
    Engine, EngineError, FeedbackView, GenerateRequest, NewAvatar, NewFramework, NewInteraction, NewPostMealRecord,
    NewSession, ReviewDecision, ReviewRequest,
};
use crate::pipeline::{select_ending_variant, GenerationJob, JobStatus, RangeError};
use crate::session::{InteractionKind, InteractionPayload, TfoSession};
use crate::store::StoredEpisode;
use crate::validate::validate_episode;

/// A failed driver call, reduced to an error code and a message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct DriverFailure {
    pub code: String,
    pub detail: String,
}

impl From<EngineError> for DriverFailure {
    fn from(e: EngineError) -> Self {
        DriverFailure { code: e.code(), detail: e.to_string() }
    }
}

pub type DriverResult<T> = Result<T, DriverFailure>;

/// The loop operations the scenario needs. Generation calls return only
/// after their work has finished.
pub trait LoopDriver {
    fn create_avatar(&mut self, req: NewAvatar) -> DriverResult<ChildAvatar>;
    fn create_framework(&mut self, req: NewFramework) -> DriverResult<StoryFramework>;
    fn create_session(&mut self, req: NewSession) -> DriverResult<TfoSession>;
    fn generate(&mut self, session: &SessionId, req: GenerateRequest) -> DriverResult<Vec<GenerationJob>>;
    fn episode(&mut self, session: &SessionId) -> DriverResult<StoredEpisode>;
    fn review(&mut self, session: &SessionId, req: ReviewRequest) -> DriverResult<TfoSession>;
    fn interact(&mut self, session: &SessionId, req: NewInteraction) -> DriverResult<()>;
    fn reading_finished(&mut self, session: &SessionId) -> DriverResult<TfoSession>;
    fn post_meal(&mut self, session: &SessionId, req: NewPostMealRecord) -> DriverResult<Vec<GenerationJob>>;
    fn feedback(&mut self, session: &SessionId) -> DriverResult<FeedbackView>;
    fn ending(&mut self, session: &SessionId) -> DriverResult<StoredEpisode>;
    fn session(&mut self, session: &SessionId) -> DriverResult<TfoSession>;
}

/// Calls the engine in-process and runs generation work inline.
pub struct DirectDriver<'a> {
    pub engine: &'a Engine,
}

impl DirectDriver<'_> {
    fn finished(&self, jobs: Vec<JobId>) -> DriverResult<Vec<GenerationJob>> {
        jobs.iter().map(|j| self.engine.job(j).map_err(DriverFailure::from)).collect()
    }
}

impl LoopDriver for DirectDriver<'_> {
    fn create_avatar(&mut self, req: NewAvatar) -> DriverResult<ChildAvatar> {
        Ok(self.engine.create_avatar(req, None)?)
    }

    fn create_framework(&mut self, req: NewFramework) -> DriverResult<StoryFramework> {
        let task = self.engine.enqueue_framework(req)?;
        let jobs = task.job_ids();
        self.engine.run(task)?;
        let job = self.engine.job(&jobs[0])?;
        let id = FrameworkId::new(job.output_ref.unwrap_or_default());
        Ok(self.engine.framework(&id)?)
    }

    fn create_session(&mut self, req: NewSession) -> DriverResult<TfoSession> {
        Ok(self.engine.create_session(req)?)
    }

    fn generate(&mut self, session: &SessionId, req: GenerateRequest) -> DriverResult<Vec<GenerationJob>> {
        let task = self.engine.start_generation(session, req)?;
        let jobs = task.job_ids();
        self.engine.run(task)?;
        self.finished(jobs)
    }

    fn episode(&mut self, session: &SessionId) -> DriverResult<StoredEpisode> {
        Ok(self.engine.episode(session)?)
    }

    fn review(&mut self, session: &SessionId, req: ReviewRequest) -> DriverResult<TfoSession> {
        let (next, task) = self.engine.review(session, req)?;
        match task {
            Some(task) => {
                self.engine.run(task)?;
                Ok(self.engine.session(session)?)
            }
            None => Ok(next),
        }
    }

    fn interact(&mut self, session: &SessionId, req: NewInteraction) -> DriverResult<()> {
        self.engine.record_interaction(session, req)?;
        Ok(())
    }

    fn reading_finished(&mut self, session: &SessionId) -> DriverResult<TfoSession> {
        Ok(self.engine.reading_finished(session)?)
    }

    fn post_meal(&mut self, session: &SessionId, req: NewPostMealRecord) -> DriverResult<Vec<GenerationJob>> {
        let (_, task) = self.engine.submit_post_meal(session, req)?;
        let jobs = task.job_ids();
        self.engine.run(task)?;
        self.finished(jobs)
    }

    fn feedback(&mut self, session: &SessionId) -> DriverResult<FeedbackView> {
        Ok(self.engine.feedback(session)?)
    }

    fn ending(&mut self, session: &SessionId) -> DriverResult<StoredEpisode> {
        Ok(self.engine.ending(session)?)
    }

    fn session(&mut self, session: &SessionId) -> DriverResult<TfoSession> {
        Ok(self.engine.session(session)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoOptions {
    pub food: String,
    /// Checked against 1..=10 before anything is generated.
    pub self_rating: i64,
    pub nickname: String,
    pub theme: String,
    pub mode: StoryMode,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            food: "西兰花".into(),
            self_rating: 8,
            nickname: "小满".into(),
            theme: "森林里的小厨房".into(),
            mode: StoryMode::LightFantasyFamiliar,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Range(#[from] RangeError),
    #[error("{step} failed: {failure}")]
    Step { step: &'static str, failure: DriverFailure },
    #[error("{step} produced an invalid result: {detail}")]
    Check { step: &'static str, detail: String },
}

impl DemoError {
    pub fn code(&self) -> String {
        match self {
            DemoError::Range(_) => "RangeError".into(),
            DemoError::Step { failure, .. } => failure.code.clone(),
            DemoError::Check { .. } => "DemoCheckFailed".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub transcript: String,
    pub session: TfoSession,
    pub main: StoredEpisode,
    pub ending: StoredEpisode,
    pub feedback: FeedbackView,
}

/// A post-meal record that matches a given self-rating.
pub fn synthetic_record(food: &str, rating: u8) -> NewPostMealRecord {
    let seven = |r: u8| -> u8 { ((u16::from(r) * 7).div_ceil(10)).clamp(1, 7) as u8 };
    let level = seven(rating);
    let description = match rating {
        7..=10 => format!("今天咬了一口{food}，还慢慢嚼完了"),
        4..=6 => format!("今天看了看{food}，摸了摸它"),
        _ => format!("今天把{food}推开了，不肯碰"),
    };
    NewPostMealRecord {
        target_food: food.to_string(),
        baseline_try: 2,
        try_level: level,
        intake: level,
        resistance: 8 - level,
        emotion: level,
        parent_pressure: 2,
        helpfulness: level,
        self_rating: rating,
        self_description: description,
        special_circumstances: Vec::new(),
    }
}

fn step<T>(name: &'static str, r: DriverResult<T>) -> Result<T, DemoError> {
    r.map_err(|failure| DemoError::Step { step: name, failure })
}

fn write_pages(out: &mut String, ep: &StoredEpisode) {
    for p in &ep.episode.pages {
        let kind = match p.interaction_type() {
            InteractionType::None => String::new(),
            t => format!(" [{}]", serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        };
        let _ = writeln!(out, "  {:>2} {}{}: {}", p.page_no, p.page_id, kind, p.page_text_cn);
        for b in &p.branch_choices {
            let _ = writeln!(out, "       -> {} {}", b.next_page_id, b.label_cn);
        }
    }
}

/// Runs the loop from a new avatar to a delivered ending.
pub fn run_scenario(driver: &mut dyn LoopDriver, opts: &DemoOptions, constraints: &BasicConstraints) -> Result<DemoOutcome, DemoError> {
    let variant = select_ending_variant(opts.self_rating)?;
    let rating = opts.self_rating as u8;
    let mut out = String::new();

    let avatar = step(
        "create_avatar",
        driver.create_avatar(NewAvatar {
            nickname: opts.nickname.clone(),
            gender: Gender::Unspecified,
            clothing: "黄色雨衣".into(),
            accessories: vec!["小书包".into()],
            base_reference_image: None,
        }),
    )?;
    let _ = writeln!(out, "avatar {} {}", avatar.avatar_id, avatar.nickname);

    let framework = step(
        "create_framework",
        driver.create_framework(NewFramework {
            child_id: avatar.avatar_id.clone(),
            theme: opts.theme.clone(),
            mode: opts.mode,
        }),
    )?;
    let _ = writeln!(
        out,
        "framework {} mode={} role={} phrase={}",
        framework.framework_id,
        framework.story_mode.as_str(),
        framework.child_role,
        framework.recurring_elements.recurring_phrase
    );

    let session = step(
        "create_session",
        driver.create_session(NewSession { child_id: avatar.avatar_id.clone(), target_food: opts.food.clone() }),
    )?;
    let sid = session.session_id.clone();
    let _ = writeln!(out, "session {} food={} state={}", sid, session.target_food, session.state);

    let jobs = step("generate", driver.generate(&sid, GenerateRequest::default()))?;
    for j in &jobs {
        let _ = writeln!(out, "job {} stage={} status={:?} attempts={}", j.job_id, j.stage, j.status, j.attempts);
    }
    let main = step("episode", driver.episode(&sid))?;
    let report = validate_episode(&main.episode, constraints);
    if !report.ok {
        return Err(DemoError::Check { step: "episode", detail: report.summary() });
    }
    let _ = writeln!(
        out,
        "episode {} pages={} valid={}",
        main.episode.episode_id,
        main.episode.pages.len(),
        report.ok
    );
    write_pages(&mut out, &main);

    let s = step("review", driver.review(&sid, ReviewRequest { decision: ReviewDecision::Approve, note: None }))?;
    let _ = writeln!(out, "review approve state={}", s.state);

    // Read the book along its first branch, completing every interaction.
    let mut page = main.episode.pages.first().map(|p| p.page_id.clone());
    while let Some(id) = page {
        let p = main.episode.page(&id).expect("the graph was validated");
        let mut next = p.next_page_id.clone();
        if let Some(key) = p.event_key() {
            let (kind, branch) = match p.interaction_type() {
                InteractionType::Tap => (InteractionKind::Tap, None),
                InteractionType::Drag => (InteractionKind::Drag, None),
                InteractionType::Mimic => (InteractionKind::MimicDone, None),
                InteractionType::RecordVoice => (InteractionKind::VoiceRecorded, None),
                InteractionType::Choice => {
                    let b = p.branch_choices.first().map(|b| b.next_page_id.clone());
                    next = b.clone();
                    (InteractionKind::ChoiceSelected, b)
                }
                InteractionType::None => unreachable!("pages without interaction carry no key"),
            };
            step(
                "interact",
                driver.interact(
                    &sid,
                    NewInteraction {
                        page_id: p.page_id.clone(),
                        event_key: key.to_string(),
                        payload: InteractionPayload { kind, choice_branch: branch.clone(), audio_asset: None },
                    },
                ),
            )?;
            let _ = writeln!(out, "event {} {}", p.page_id, key);
        }
        page = next;
    }
    let s = step("reading_finished", driver.reading_finished(&sid))?;
    let _ = writeln!(out, "reading finished state={}", s.state);

    let record = synthetic_record(&opts.food, rating);
    let jobs = step("post_meal", driver.post_meal(&sid, record.clone()))?;
    let _ = writeln!(
        out,
        "post-meal try_level={} self_rating={} description={}",
        record.try_level, record.self_rating, record.self_description
    );
    for j in &jobs {
        let _ = writeln!(out, "job {} stage={} status={:?} attempts={}", j.job_id, j.stage, j.status, j.attempts);
        if j.status == JobStatus::Failed {
            return Err(DemoError::Check { step: "post_meal", detail: j.error.clone().unwrap_or_default() });
        }
    }

    let feedback = step("feedback", driver.feedback(&sid))?;
    let _ = writeln!(out, "feedback type={:?} avatar={}", feedback.feedback.basic_type, feedback.avatar_state);
    let _ = writeln!(out, "  {}", feedback.feedback.text_cn);

    let ending = step("ending", driver.ending(&sid))?;
    let ending_report = validate_episode(&ending.episode, constraints);
    if !ending_report.ok {
        return Err(DemoError::Check { step: "ending", detail: ending_report.summary() });
    }
    if ending.episode.ending_variant != Some(variant) {
        return Err(DemoError::Check { step: "ending", detail: format!("expected the {variant} variant") });
    }
    let _ = writeln!(
        out,
        "ending {} variant={} pages={} valid={}",
        ending.episode.episode_id,
        variant,
        ending.episode.pages.len(),
        ending_report.ok
    );
    write_pages(&mut out, &ending);

    let session = step("session", driver.session(&sid))?;
    let _ = writeln!(out, "final state={} regenerations={}", session.state, session.regeneration_count);
    Ok(DemoOutcome { transcript: out, session, main, ending, feedback })
}
