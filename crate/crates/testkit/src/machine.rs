//! Session-machine reference: the legal edges, listed by hand, and random
//! walks over them.

use rand::seq::IndexedRandom;
use rand::{Rng, RngExt};
use storyecho_core::domain::{EpisodeId, RecordId};
use storyecho_core::session::{EventKind, SessionEvent, SessionState};

use EventKind as E;
use SessionState as S;

pub const LEGAL: [(SessionState, EventKind, SessionState); 10] = [
    (S::FoodSelected, E::GenerationStarted, S::StoryGenerating),
    (S::StoryGenerating, E::EpisodeDrafted, S::ReviewPending),
    (S::ReviewPending, E::Approved, S::StoryReady),
    (S::ReviewPending, E::RegenerationRequested, S::StoryGenerating),
    (S::StoryReady, E::ReadingFinished, S::ReadDone),
    (S::StoryReady, E::PostMealSubmitted, S::PostMealRecorded),
    (S::ReadDone, E::PostMealSubmitted, S::PostMealRecorded),
    (S::PostMealRecorded, E::FeedbackShown, S::FeedbackDelivered),
    (S::FeedbackDelivered, E::EndingGenerated, S::EndingReady),
    (S::EndingReady, E::Revisited, S::Revisited),
];

pub fn legal_target(state: SessionState, event: EventKind) -> Option<SessionState> {
    LEGAL.iter().find(|(s, e, _)| *s == state && *e == event).map(|(_, _, t)| *t)
}

/// An event of `kind`, carrying fresh ids where the kind needs them.
pub fn event_of(kind: EventKind, n: usize) -> SessionEvent {
    match kind {
        E::GenerationStarted => SessionEvent::GenerationStarted,
        E::EpisodeDrafted => SessionEvent::EpisodeDrafted { episode_id: EpisodeId::new(format!("ep_{n}")) },
        E::Approved => SessionEvent::Approved,
        E::RegenerationRequested => SessionEvent::RegenerationRequested,
        E::ReadingFinished => SessionEvent::ReadingFinished,
        E::PostMealSubmitted => SessionEvent::PostMealSubmitted { record_id: RecordId::new(format!("rec_{n}")) },
        E::FeedbackShown => SessionEvent::FeedbackShown,
        E::EndingGenerated => SessionEvent::EndingGenerated { episode_id: EpisodeId::new(format!("end_{n}")) },
        E::Revisited => SessionEvent::Revisited,
    }
}

/// A random legal event sequence from `FoodSelected`. The walk may stop
/// early at any point; regeneration loops are allowed.
pub fn random_walk<R: Rng>(rng: &mut R, max_len: usize) -> Vec<SessionEvent> {
    let mut state = S::FoodSelected;
    let mut out = Vec::new();
    while out.len() < max_len {
        let options: Vec<_> = LEGAL.iter().filter(|(s, _, _)| *s == state).collect();
        let Some(&&(_, kind, to)) = options.choose(rng) else { break };
        if rng.random_bool(0.03) {
            break;
        }
        out.push(event_of(kind, out.len()));
        state = to;
    }
    out
}
