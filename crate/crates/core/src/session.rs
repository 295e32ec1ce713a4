//! The Target Food Opportunity (TFO) session: one pass through story,
//! meal, post-meal record, feedback and ending, driven by a fixed
//! transition table and recorded as an append-only log.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SessionState {
    FoodSelected,
    StoryGenerating,
    ReviewPending,
    StoryReady,
    ReadDone,
    PostMealRecorded,
    FeedbackDelivered,
    EndingReady,
    Revisited,
}

impl SessionState {
    pub const ALL: [SessionState; 9] = [
        SessionState::FoodSelected,
        SessionState::StoryGenerating,
        SessionState::ReviewPending,
        SessionState::StoryReady,
        SessionState::ReadDone,
        SessionState::PostMealRecorded,
        SessionState::FeedbackDelivered,
        SessionState::EndingReady,
        SessionState::Revisited,
    ];

    fn rank(self) -> usize {
        SessionState::ALL.iter().position(|s| *s == self).expect("listed")
    }

    /// True for this state and every state after `other` in loop order.
    pub fn at_or_after(self, other: SessionState) -> bool {
        self.rank() >= other.rank()
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GenerationStarted,
    EpisodeDrafted,
    Approved,
    RegenerationRequested,
    ReadingFinished,
    PostMealSubmitted,
    FeedbackShown,
    EndingGenerated,
    Revisited,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::GenerationStarted,
        EventKind::EpisodeDrafted,
        EventKind::Approved,
        EventKind::RegenerationRequested,
        EventKind::ReadingFinished,
        EventKind::PostMealSubmitted,
        EventKind::FeedbackShown,
        EventKind::EndingGenerated,
        EventKind::Revisited,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variants serialize");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// A loop event with the ids it brings along.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionEvent {
    GenerationStarted,
    EpisodeDrafted { episode_id: EpisodeId },
    Approved,
    RegenerationRequested,
    ReadingFinished,
    PostMealSubmitted { record_id: RecordId },
    FeedbackShown,
    EndingGenerated { episode_id: EpisodeId },
    Revisited,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            SessionEvent::GenerationStarted => EventKind::GenerationStarted,
            SessionEvent::EpisodeDrafted { .. } => EventKind::EpisodeDrafted,
            SessionEvent::Approved => EventKind::Approved,
            SessionEvent::RegenerationRequested => EventKind::RegenerationRequested,
            SessionEvent::ReadingFinished => EventKind::ReadingFinished,
            SessionEvent::PostMealSubmitted { .. } => EventKind::PostMealSubmitted,
            SessionEvent::FeedbackShown => EventKind::FeedbackShown,
            SessionEvent::EndingGenerated { .. } => EventKind::EndingGenerated,
            SessionEvent::Revisited => EventKind::Revisited,
        }
    }
}

/// The transition table. `None` means the pair is illegal.
pub fn next_state(state: SessionState, event: EventKind) -> Option<SessionState> {
    use EventKind as E;
    use SessionState as S;
    Some(match (state, event) {
        (S::FoodSelected, E::GenerationStarted) => S::StoryGenerating,
        (S::StoryGenerating, E::EpisodeDrafted) => S::ReviewPending,
        (S::ReviewPending, E::Approved) => S::StoryReady,
        (S::ReviewPending, E::RegenerationRequested) => S::StoryGenerating,
        (S::StoryReady, E::ReadingFinished) => S::ReadDone,
        (S::StoryReady | S::ReadDone, E::PostMealSubmitted) => S::PostMealRecorded,
        (S::PostMealRecorded, E::FeedbackShown) => S::FeedbackDelivered,
        (S::FeedbackDelivered, E::EndingGenerated) => S::EndingReady,
        (S::EndingReady, E::Revisited) => S::Revisited,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoopError {
    #[error("child {0} not found")]
    ChildNotFound(AvatarId),
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("child {child} already has the active session {session}")]
    SessionAlreadyActive { child: AvatarId, session: SessionId },
    #[error("event {event} is not allowed in state {state}")]
    IllegalTransition { state: SessionState, event: EventKind },
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error("food mismatch: session is about `{expected}`, record is about `{actual}`")]
    FoodMismatch { expected: String, actual: String },
    #[error("event_key `{0}` does not exist on the referenced page")]
    UnknownEventKey(String),
    #[error("a branch was already chosen on page {0}")]
    DuplicateChoice(PageId),
    #[error("invalid interaction event: {0}")]
    InvalidEvent(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl LoopError {
    pub fn code(&self) -> &'static str {
        match self {
            LoopError::ChildNotFound(_) => "ChildNotFound",
            LoopError::SessionNotFound(_) => "SessionNotFound",
            LoopError::SessionAlreadyActive { .. } => "SessionAlreadyActive",
            LoopError::IllegalTransition { .. } => "IllegalTransition",
            LoopError::SessionClosed(_) => "SessionClosed",
            LoopError::FoodMismatch { .. } => "FoodMismatch",
            LoopError::UnknownEventKey(_) => "UnknownEventKey",
            LoopError::DuplicateChoice(_) => "DuplicateChoice",
            LoopError::InvalidEvent(_) => "InvalidEvent",
            LoopError::Precondition(_) => "PreconditionFailed",
            LoopError::Domain(e) => e.code(),
        }
    }
}

/// One applied transition, as stored in the session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub session_id: SessionId,
    pub seq: u64,
    pub from: SessionState,
    pub to: SessionState,
    pub event: SessionEvent,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfoSession {
    pub session_id: SessionId,
    pub child_id: ChildId,
    pub target_food: String,
    pub state: SessionState,
    pub main_episode_id: Option<EpisodeId>,
    pub ending_episode_id: Option<EpisodeId>,
    pub record_id: Option<RecordId>,
    /// How many times the parent asked for a new draft.
    pub regeneration_count: u32,
    pub real_world_task_done: bool,
    /// Set by an operator to retire a stale session.
    pub closed: bool,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

impl TfoSession {
    pub fn new(
        session_id: SessionId,
        child_id: ChildId,
        target_food: &str,
        now: Timestamp,
    ) -> Result<Self, LoopError> {
        let food = target_food.trim();
        if food.is_empty() {
            return Err(LoopError::Precondition("target_food must not be empty".into()));
        }
        Ok(TfoSession {
            session_id,
            child_id,
            target_food: food.to_string(),
            state: SessionState::FoodSelected,
            main_episode_id: None,
            ending_episode_id: None,
            record_id: None,
            regeneration_count: 0,
            real_world_task_done: false,
            closed: false,
            created_at: now,
            updated_at: now,
        })
    }

    /// Terminal sessions no longer block a new session for the same child.
    pub fn is_terminal(&self) -> bool {
        self.closed || self.state == SessionState::Revisited
    }

    /// Applies `event`, returning the new session and its log record.
    pub fn apply(
        &self,
        event: SessionEvent,
        seq: u64,
        now: Timestamp,
    ) -> Result<(TfoSession, TransitionRecord), LoopError> {
        if self.closed {
            return Err(LoopError::SessionClosed(self.session_id.clone()));
        }
        let kind = event.kind();
        let to = next_state(self.state, kind)
            .ok_or(LoopError::IllegalTransition { state: self.state, event: kind })?;
        let mut next = self.clone();
        next.state = to;
        next.updated_at = now;
        match &event {
            SessionEvent::EpisodeDrafted { episode_id } => next.main_episode_id = Some(episode_id.clone()),
            SessionEvent::RegenerationRequested => next.regeneration_count += 1,
            SessionEvent::PostMealSubmitted { record_id } => next.record_id = Some(record_id.clone()),
            SessionEvent::EndingGenerated { episode_id } => next.ending_episode_id = Some(episode_id.clone()),
            _ => {}
        }
        let record = TransitionRecord {
            session_id: self.session_id.clone(),
            seq,
            from: self.state,
            to,
            event,
            timestamp: now,
        };
        Ok((next, record))
    }

    /// Rebuilds the loop fields of a session from its creation data and log.
    pub fn replay(initial: &TfoSession, log: &[TransitionRecord]) -> Result<TfoSession, LoopError> {
        let mut s = initial.clone();
        s.state = SessionState::FoodSelected;
        s.main_episode_id = None;
        s.ending_episode_id = None;
        s.record_id = None;
        s.regeneration_count = 0;
        s.closed = false;
        s.updated_at = s.created_at;
        for rec in log {
            if rec.from != s.state {
                return Err(LoopError::Precondition(format!(
                    "log record {} starts from {} but the session is in {}",
                    rec.seq, rec.from, s.state
                )));
            }
            let (next, _) = s.apply(rec.event.clone(), rec.seq, rec.timestamp)?;
            s = next;
        }
        Ok(s)
    }
}

impl Invariants for TfoSession {
    fn check_invariants(&self) -> Result<(), DomainError> {
        let fail = |m: &str| Err(DomainError::Invariant(m.to_string()));
        if self.target_food.trim().is_empty() {
            return fail("target_food must not be empty");
        }
        if self.state.at_or_after(SessionState::ReviewPending) && self.main_episode_id.is_none() {
            return fail("main_episode_id is required from ReviewPending on");
        }
        if self.state.at_or_after(SessionState::PostMealRecorded) && self.record_id.is_none() {
            return fail("record_id is required from PostMealRecorded on");
        }
        if self.state.at_or_after(SessionState::EndingReady) && self.ending_episode_id.is_none() {
            return fail("ending_episode_id is required from EndingReady on");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Tap,
    Drag,
    ChoiceSelected,
    MimicDone,
    VoiceRecorded,
}

impl InteractionKind {
    pub fn page_type(self) -> InteractionType {
        match self {
            InteractionKind::Tap => InteractionType::Tap,
            InteractionKind::Drag => InteractionType::Drag,
            InteractionKind::ChoiceSelected => InteractionType::Choice,
            InteractionKind::MimicDone => InteractionType::Mimic,
            InteractionKind::VoiceRecorded => InteractionType::RecordVoice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionPayload {
    pub kind: InteractionKind,
    #[serde(default)]
    pub choice_branch: Option<PageId>,
    #[serde(default)]
    pub audio_asset: Option<AssetId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub event_id: EventId,
    pub session_id: SessionId,
    pub page_id: PageId,
    pub event_key: String,
    pub payload: InteractionPayload,
    pub timestamp: Timestamp,
}

/// States in which reading interactions are accepted.
pub const READING_STATES: [SessionState; 4] = [
    SessionState::StoryReady,
    SessionState::ReadDone,
    SessionState::EndingReady,
    SessionState::Revisited,
];

/// Checks an interaction against the session, the pages it can refer to and
/// the interactions already logged for the session.
pub fn check_interaction(
    session: &TfoSession,
    pages: &[&Page],
    logged: &[InteractionEvent],
    event: &InteractionEvent,
) -> Result<(), LoopError> {
    if session.closed {
        return Err(LoopError::SessionClosed(session.session_id.clone()));
    }
    if !READING_STATES.contains(&session.state) {
        return Err(LoopError::Precondition(format!(
            "interactions are not accepted in state {}",
            session.state
        )));
    }
    if event.session_id != session.session_id {
        return Err(LoopError::InvalidEvent("event belongs to another session".into()));
    }
    let page = pages
        .iter()
        .find(|p| p.page_id == event.page_id && p.event_key() == Some(event.event_key.as_str()))
        .ok_or_else(|| LoopError::UnknownEventKey(event.event_key.clone()))?;
    let expected = page.interaction_type();
    if event.payload.kind.page_type() != expected {
        return Err(LoopError::InvalidEvent(format!(
            "{:?} does not match the page's {:?} interaction",
            event.payload.kind, expected
        )));
    }
    if event.payload.kind == InteractionKind::ChoiceSelected {
        let branch = event
            .payload
            .choice_branch
            .as_ref()
            .ok_or_else(|| LoopError::InvalidEvent("choice_selected needs choice_branch".into()))?;
        if !page.branch_choices.iter().any(|b| &b.next_page_id == branch) {
            return Err(LoopError::InvalidEvent(format!("{branch} is not a branch of {}", page.page_id)));
        }
        if logged.iter().any(|e| {
            e.session_id == event.session_id
                && e.page_id == event.page_id
                && e.payload.kind == InteractionKind::ChoiceSelected
        }) {
            return Err(LoopError::DuplicateChoice(event.page_id.clone()));
        }
    } else if event.payload.choice_branch.is_some() {
        return Err(LoopError::InvalidEvent("choice_branch is only valid for choices".into()));
    }
    Ok(())
}

/// The branch fixed for each choice page, replayed from the interaction log.
pub fn chosen_branches(session: &SessionId, logged: &[InteractionEvent]) -> BTreeMap<PageId, PageId> {
    logged
        .iter()
        .filter(|e| &e.session_id == session && e.payload.kind == InteractionKind::ChoiceSelected)
        .filter_map(|e| Some((e.page_id.clone(), e.payload.choice_branch.clone()?)))
        .fold(BTreeMap::new(), |mut acc, (page, branch)| {
            acc.entry(page).or_insert(branch);
            acc
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> TfoSession {
        TfoSession::new("s1".into(), "c1".into(), "西兰花", Timestamp(0)).unwrap()
    }

    #[test]
    fn happy_path_and_replay() {
        let mut s = session();
        let mut log = Vec::new();
        let events = [
            SessionEvent::GenerationStarted,
            SessionEvent::EpisodeDrafted { episode_id: "e1".into() },
            SessionEvent::RegenerationRequested,
            SessionEvent::EpisodeDrafted { episode_id: "e2".into() },
            SessionEvent::Approved,
            SessionEvent::PostMealSubmitted { record_id: "r1".into() },
            SessionEvent::FeedbackShown,
            SessionEvent::EndingGenerated { episode_id: "e3".into() },
            SessionEvent::Revisited,
        ];
        for (i, e) in events.into_iter().enumerate() {
            let (next, rec) = s.apply(e, i as u64, Timestamp(i as u64 + 1)).unwrap();
            next.check_invariants().unwrap();
            log.push(rec);
            s = next;
        }
        assert_eq!(s.state, SessionState::Revisited);
        assert_eq!(s.regeneration_count, 1);
        assert_eq!(s.main_episode_id, Some("e2".into()));
        assert!(s.is_terminal());
        assert_eq!(TfoSession::replay(&session(), &log).unwrap(), s);
    }

    #[test]
    fn illegal_pairs() {
        let s = session();
        let err = s.apply(SessionEvent::PostMealSubmitted { record_id: "r".into() }, 0, Timestamp(1));
        assert_eq!(
            err.unwrap_err(),
            LoopError::IllegalTransition { state: SessionState::FoodSelected, event: EventKind::PostMealSubmitted }
        );
    }

    #[test]
    fn empty_food_is_rejected() {
        assert!(TfoSession::new("s".into(), "c".into(), "  ", Timestamp(0)).is_err());
    }

    #[test]
    fn table_has_ten_edges() {
        let legal = SessionState::ALL
            .iter()
            .flat_map(|s| EventKind::ALL.iter().map(move |e| (*s, *e)))
            .filter(|(s, e)| next_state(*s, *e).is_some())
            .count();
        assert_eq!(legal, 10);
    }

    #[test]
    fn event_wire_form() {
        let e = SessionEvent::PostMealSubmitted { record_id: "r1".into() };
        let text = serde_json::to_string(&e).unwrap();
        assert_eq!(text, r#"{"event":"post_meal_submitted","record_id":"r1"}"#);
        assert_eq!(EventKind::PostMealSubmitted.to_string(), "post_meal_submitted");
    }
}
