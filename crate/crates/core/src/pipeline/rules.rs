use serde::{Deserialize, Serialize};

use crate::domain::{EndingVariant, FeedbackType, PostMealRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("score {score} is outside {min}..={max}")]
pub struct RangeError {
    pub score: i64,
    pub min: i64,
    pub max: i64,
}

pub const PRAISE_MIN_RATING: u8 = 7;
pub const GENTLE_MAX_RATING: u8 = 3;

fn check_rating(score: i64) -> Result<u8, RangeError> {
    if (1..=10).contains(&score) {
        Ok(score as u8)
    } else {
        Err(RangeError { score, min: 1, max: 10 })
    }
}

/// 7 and above is positive, 3 and below is gentle, the middle is warm.
pub fn select_ending_variant(score: i64) -> Result<EndingVariant, RangeError> {
    let s = check_rating(score)?;
    Ok(if s >= PRAISE_MIN_RATING {
        EndingVariant::Positive
    } else if s <= GENTLE_MAX_RATING {
        EndingVariant::Gentle
    } else {
        EndingVariant::Warm
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSignal {
    Progress,
    Avoidance,
    Neutral,
}

impl DescriptionSignal {
    pub const ALL: [DescriptionSignal; 3] =
        [DescriptionSignal::Progress, DescriptionSignal::Avoidance, DescriptionSignal::Neutral];
}

/// The description wins over the rating whenever it says something.
pub fn classify_feedback_type(record: &PostMealRecord, signal: DescriptionSignal) -> FeedbackType {
    match signal {
        DescriptionSignal::Progress => FeedbackType::Praise,
        DescriptionSignal::Avoidance => FeedbackType::Encourage,
        DescriptionSignal::Neutral if record.self_rating >= PRAISE_MIN_RATING => FeedbackType::Praise,
        DescriptionSignal::Neutral => FeedbackType::Encourage,
    }
}

/// Keyword lists used to read a free-text meal description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicons {
    pub progress: Vec<String>,
    pub avoidance: Vec<String>,
    /// Words that must not show up in a micro-goal.
    pub stage_vocabulary: Vec<String>,
    /// First-person pronouns that must not show up in narration.
    pub first_person: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons {
            progress: words(&[
                "尝了", "尝尝", "尝试", "试了", "吃了", "咬了", "舔了", "闻了", "吃完", "咽下",
                "tasted", "tried", "ate",
            ]),
            avoidance: words(&[
                "拒绝", "不吃", "不肯", "不要", "推开", "吐出", "哭", "躲开", "扔掉", "refused",
                "pushed", "cried",
            ]),
            stage_vocabulary: words(&[
                "前意向", "意向期", "准备期", "行动期", "维持期", "准备度", "改变阶段", "行为阶段",
                "readiness", "precontemplation", "contemplation", "stage of change",
            ]),
            first_person: words(&["我们", "咱们", "我", "俺"]),
        }
    }
}

impl Lexicons {
    pub fn first_person_hit<'a>(&'a self, text: &str) -> Option<&'a str> {
        self.first_person.iter().find(|w| text.contains(w.as_str())).map(String::as_str)
    }

    pub fn stage_vocabulary_hit<'a>(&'a self, text: &str) -> Option<&'a str> {
        let lower = text.to_lowercase();
        self.stage_vocabulary
            .iter()
            .find(|w| lower.contains(&w.to_lowercase()))
            .map(String::as_str)
    }
}

/// Reads a meal description. Avoidance words win when both kinds appear,
/// so "tasted then pushed away" is not praised.
pub fn description_signal(text: &str, lexicons: &Lexicons) -> DescriptionSignal {
    let lower = text.to_lowercase();
    let hit = |list: &[String]| list.iter().any(|w| lower.contains(&w.to_lowercase()));
    if hit(&lexicons.avoidance) {
        DescriptionSignal::Avoidance
    } else if hit(&lexicons.progress) {
        DescriptionSignal::Progress
    } else {
        DescriptionSignal::Neutral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AvatarFeedbackState {
    #[serde(rename = "happy")]
    Happy,
    #[serde(rename = "neutral")]
    Neutral,
    #[serde(rename = "sad-but-hopeful")]
    SadButHopeful,
}

impl std::fmt::Display for AvatarFeedbackState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AvatarFeedbackState::Happy => "happy",
            AvatarFeedbackState::Neutral => "neutral",
            AvatarFeedbackState::SadButHopeful => "sad-but-hopeful",
        })
    }
}

pub fn avatar_feedback_state(record: &PostMealRecord) -> AvatarFeedbackState {
    if record.self_rating >= PRAISE_MIN_RATING {
        AvatarFeedbackState::Happy
    } else if record.self_rating <= GENTLE_MAX_RATING {
        AvatarFeedbackState::SadButHopeful
    } else {
        AvatarFeedbackState::Neutral
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_scores() {
        assert!(select_ending_variant(0).is_err());
        assert!(select_ending_variant(11).is_err());
        assert_eq!(select_ending_variant(7), Ok(EndingVariant::Positive));
        assert_eq!(select_ending_variant(3), Ok(EndingVariant::Gentle));
        assert_eq!(select_ending_variant(4), Ok(EndingVariant::Warm));
    }

    #[test]
    fn description_reading() {
        let lx = Lexicons::default();
        assert_eq!(description_signal("今天尝了一小口", &lx), DescriptionSignal::Progress);
        assert_eq!(description_signal("看了一眼就推开了", &lx), DescriptionSignal::Avoidance);
        assert_eq!(description_signal("尝了一口又吐出来", &lx), DescriptionSignal::Avoidance);
        assert_eq!(description_signal("", &lx), DescriptionSignal::Neutral);
        assert_eq!(description_signal("She TASTED it", &lx), DescriptionSignal::Progress);
    }

    #[test]
    fn pronoun_hits() {
        let lx = Lexicons::default();
        assert_eq!(lx.first_person_hit("我们一起去"), Some("我们"));
        assert_eq!(lx.first_person_hit("小明一起去"), None);
        assert_eq!(lx.stage_vocabulary_hit("提升 Readiness"), Some("readiness"));
    }
}
