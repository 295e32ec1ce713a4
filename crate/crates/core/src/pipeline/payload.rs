//! The user payloads sent with each completion request.

use serde::{Deserialize, Serialize};

use crate::domain::{
    BasicConstraints, ChildAvatar, EndingVariant, Episode, FeedbackType, PostMealRecord,
    RecapAndGoal, StoryFramework, StoryMode,
};
use crate::validate::ValidationReport;

use super::DescriptionSignal;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct FrameworkPayload {
    pub theme: String,
    pub story_mode: StoryMode,
    pub avatar: ChildAvatar,
    pub constraints: BasicConstraints,
    pub existing_recurring_phrases: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<ValidationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SummarizePayload {
    pub framework: Option<StoryFramework>,
    pub previous_episodes: Vec<Episode>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<ValidationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct OverridesPayload {
    pub food_override_must_follow: bool,
    pub temporary_props: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_note: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub variation: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EpisodePayload {
    pub framework: StoryFramework,
    pub recap: Option<RecapAndGoal>,
    pub target_food: String,
    pub avatar: ChildAvatar,
    pub constraints: BasicConstraints,
    pub overrides: OverridesPayload,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<ValidationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EndingPayload {
    pub main_episode: Episode,
    pub record: PostMealRecord,
    pub summary: RecapAndGoal,
    pub ending_variant: EndingVariant,
    pub avatar: ChildAvatar,
    pub framework: Option<StoryFramework>,
    pub constraints: BasicConstraints,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<ValidationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct FeedbackPayload {
    pub nickname: String,
    pub target_food: String,
    pub self_rating: u8,
    pub try_level: u8,
    pub self_description: String,
    pub basic_type: FeedbackType,
    pub description_signal: DescriptionSignal,
    pub recent_phrases: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<ValidationReport>,
}
