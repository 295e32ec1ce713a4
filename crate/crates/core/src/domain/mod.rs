//! Shared domain types.
//!
//! Every type here is an immutable value. Types that travel over the wire
//! reject unknown keys and unknown enum literals, and carry their own
//! invariant check through [`Invariants`].

mod canonical;
mod ids;

pub use canonical::{
    canonical_parse, canonical_serialize, check_schema, parse_schema_only, to_canonical_value, Canonical,
    DomainError, DomainValue, TypeTag,
};
pub use ids::*;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn now() -> Self {
        let millis = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Timestamp(millis)
    }
}

/// Checks the invariants a value must hold on its own.
pub trait Invariants {
    fn check_invariants(&self) -> Result<(), DomainError>;
}

// Makes an `Option` field mandatory on the wire: the key must be present,
// `null` is the only spelling of "absent".
fn required<'de, D, T>(de: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(de)
}

fn invariant(msg: impl Into<String>) -> DomainError {
    DomainError::Invariant(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Girl,
    Boy,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChildAvatar {
    pub avatar_id: AvatarId,
    pub nickname: String,
    pub gender: Gender,
    pub clothing: String,
    pub accessories: Vec<String>,
    #[serde(deserialize_with = "required")]
    pub base_reference_image: Option<AssetId>,
}

impl Invariants for ChildAvatar {
    fn check_invariants(&self) -> Result<(), DomainError> {
        if self.nickname.trim().is_empty() {
            return Err(invariant("nickname must not be empty"));
        }
        if self.avatar_id.as_str().is_empty() {
            return Err(invariant("avatar_id must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "zh-CN")]
    ZhCn,
}

/// Length, page-count and interaction limits shared by every generation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicConstraints {
    pub episode_page_count: u32,
    pub ending_page_count: u32,
    pub han_chars_per_page_min: u32,
    pub han_chars_per_page_max: u32,
    pub han_chars_total_min: u32,
    pub han_chars_total_max: u32,
    pub micro_interactions_max_per_episode: u32,
    pub record_voice_max: u32,
    pub choice_max: u32,
    pub language: Language,
}

impl Default for BasicConstraints {
    fn default() -> Self {
        Self::with_page_band(60, 80)
    }
}

impl BasicConstraints {
    /// Default constraints with a different per-page band; totals follow the
    /// band times the episode page count.
    pub fn with_page_band(min: u32, max: u32) -> Self {
        let pages = 12;
        BasicConstraints {
            episode_page_count: pages,
            ending_page_count: 4,
            han_chars_per_page_min: min,
            han_chars_per_page_max: max,
            han_chars_total_min: min * pages,
            han_chars_total_max: max * pages,
            micro_interactions_max_per_episode: 4,
            record_voice_max: 1,
            choice_max: 1,
            language: Language::ZhCn,
        }
    }

    pub fn page_count_for(&self, kind: EpisodeKind) -> u32 {
        match kind {
            EpisodeKind::Main => self.episode_page_count,
            EpisodeKind::EndingExtension => self.ending_page_count,
        }
    }

    /// Total Han-character band for an episode of `kind`. Main episodes use
    /// the configured totals; endings derive theirs from the per-page band.
    pub fn total_band_for(&self, kind: EpisodeKind) -> (u32, u32) {
        match kind {
            EpisodeKind::Main => (self.han_chars_total_min, self.han_chars_total_max),
            EpisodeKind::EndingExtension => (
                self.han_chars_per_page_min * self.ending_page_count,
                self.han_chars_per_page_max * self.ending_page_count,
            ),
        }
    }

    /// Interaction caps for an episode of `kind`. Endings get at most one
    /// micro-interaction and no choice or voice recording.
    pub fn budget_for(&self, kind: EpisodeKind) -> InteractionBudget {
        match kind {
            EpisodeKind::Main => InteractionBudget {
                micro_max: self.micro_interactions_max_per_episode,
                choice_max: self.choice_max,
                record_voice_max: self.record_voice_max,
            },
            EpisodeKind::EndingExtension => InteractionBudget {
                micro_max: self.micro_interactions_max_per_episode.min(1),
                choice_max: 0,
                record_voice_max: 0,
            },
        }
    }
}

impl Invariants for BasicConstraints {
    fn check_invariants(&self) -> Result<(), DomainError> {
        if self.episode_page_count < 2 {
            return Err(invariant("episode_page_count must be at least 2"));
        }
        if self.ending_page_count < 1 {
            return Err(invariant("ending_page_count must be at least 1"));
        }
        if self.han_chars_per_page_max == 0 {
            return Err(invariant("han_chars_per_page_max must be positive"));
        }
        if self.han_chars_per_page_min > self.han_chars_per_page_max {
            return Err(invariant("han_chars_per_page_min exceeds han_chars_per_page_max"));
        }
        if self.han_chars_total_min > self.han_chars_total_max {
            return Err(invariant("han_chars_total_min exceeds han_chars_total_max"));
        }
        let lo = self.han_chars_per_page_min * self.episode_page_count;
        let hi = self.han_chars_per_page_max * self.episode_page_count;
        if self.han_chars_total_max < lo || self.han_chars_total_min > hi {
            return Err(invariant(format!(
                "total band {}..={} cannot be met by {} pages of {}..={} Han characters",
                self.han_chars_total_min,
                self.han_chars_total_max,
                self.episode_page_count,
                self.han_chars_per_page_min,
                self.han_chars_per_page_max
            )));
        }
        if self.record_voice_max != 1 || self.choice_max != 1 {
            return Err(invariant("record_voice_max and choice_max are fixed at 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionBudget {
    pub micro_max: u32,
    pub choice_max: u32,
    pub record_voice_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoryMode {
    RealisticEveryday,
    LightFantasyFamiliar,
    HybridExpositoryNarrative,
    JourneyDiscoveryFramework,
}

impl StoryMode {
    pub const ALL: [StoryMode; 4] = [
        StoryMode::RealisticEveryday,
        StoryMode::LightFantasyFamiliar,
        StoryMode::HybridExpositoryNarrative,
        StoryMode::JourneyDiscoveryFramework,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StoryMode::RealisticEveryday => "realistic_everyday",
            StoryMode::LightFantasyFamiliar => "light_fantasy_familiar",
            StoryMode::HybridExpositoryNarrative => "hybrid_expository_narrative",
            StoryMode::JourneyDiscoveryFramework => "journey_discovery_framework",
        }
    }
}

impl std::str::FromStr for StoryMode {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StoryMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DomainError::Schema(format!("unknown story mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSetting {
    pub concept: String,
    pub core_locations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurringElements {
    pub recurring_object: String,
    pub recurring_phrase: String,
    pub opening_ritual: String,
    pub closing_hook_style: String,
    pub episode_trigger_style: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelperRole {
    pub name: String,
    pub role: String,
}

/// The series bible: everything that stays stable across episodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryFramework {
    pub framework_id: FrameworkId,
    pub story_mode: StoryMode,
    pub world_setting: WorldSetting,
    pub world_rules: Vec<String>,
    pub recurring_elements: RecurringElements,
    pub helper_roles: Vec<HelperRole>,
    pub child_role: String,
}

impl StoryFramework {
    /// Every free-text field, labelled with its path.
    pub fn text_fields(&self) -> Vec<(String, &str)> {
        let mut out: Vec<(String, &str)> = vec![
            ("world_setting.concept".into(), &self.world_setting.concept),
            (
                "recurring_elements.recurring_object".into(),
                &self.recurring_elements.recurring_object,
            ),
            (
                "recurring_elements.recurring_phrase".into(),
                &self.recurring_elements.recurring_phrase,
            ),
            (
                "recurring_elements.opening_ritual".into(),
                &self.recurring_elements.opening_ritual,
            ),
            (
                "recurring_elements.closing_hook_style".into(),
                &self.recurring_elements.closing_hook_style,
            ),
            (
                "recurring_elements.episode_trigger_style".into(),
                &self.recurring_elements.episode_trigger_style,
            ),
            ("child_role".into(), &self.child_role),
        ];
        for (i, loc) in self.world_setting.core_locations.iter().enumerate() {
            out.push((format!("world_setting.core_locations[{i}]"), loc));
        }
        for (i, rule) in self.world_rules.iter().enumerate() {
            out.push((format!("world_rules[{i}]"), rule));
        }
        for (i, h) in self.helper_roles.iter().enumerate() {
            out.push((format!("helper_roles[{i}].name"), &h.name));
            out.push((format!("helper_roles[{i}].role"), &h.role));
        }
        out
    }

    pub fn distinct_location_count(&self) -> usize {
        self.world_setting
            .core_locations
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// What a provider returns for the framework stage: a framework before an
/// id is assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkDraft {
    pub story_mode: StoryMode,
    pub world_setting: WorldSetting,
    pub world_rules: Vec<String>,
    pub recurring_elements: RecurringElements,
    pub helper_roles: Vec<HelperRole>,
    pub child_role: String,
}

impl FrameworkDraft {
    pub fn into_framework(self, framework_id: FrameworkId) -> StoryFramework {
        StoryFramework {
            framework_id,
            story_mode: self.story_mode,
            world_setting: self.world_setting,
            world_rules: self.world_rules,
            recurring_elements: self.recurring_elements,
            helper_roles: self.helper_roles,
            child_role: self.child_role,
        }
    }
}

impl Invariants for FrameworkDraft {
    fn check_invariants(&self) -> Result<(), DomainError> {
        Ok(())
    }
}

impl Invariants for StoryFramework {
    fn check_invariants(&self) -> Result<(), DomainError> {
        let report = crate::validate::validate_framework(self);
        if report.ok {
            Ok(())
        } else {
            Err(invariant(report.summary()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityHooks {
    pub carry_over_anchors: Vec<String>,
    pub next_episode_seed: String,
}

/// Output of the summarize stage: what happened so far and where to go next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecapAndGoal {
    pub recap_cn: String,
    pub micro_goal: String,
    pub key_story_elements: Vec<String>,
    pub continuity_hooks: ContinuityHooks,
}

/// Sentence-terminal marks, full- and half-width.
pub const SENTENCE_TERMINALS: &[char] = &['。', '！', '？', '!', '?', '.'];

/// True when `text` reads as a single sentence: no terminal mark except in
/// a trailing run at the very end.
pub fn is_single_sentence(text: &str) -> bool {
    let body = text.trim().trim_end_matches(SENTENCE_TERMINALS);
    !body.is_empty() && !body.contains(SENTENCE_TERMINALS)
}

impl Invariants for RecapAndGoal {
    fn check_invariants(&self) -> Result<(), DomainError> {
        if !is_single_sentence(&self.continuity_hooks.next_episode_seed) {
            return Err(invariant("next_episode_seed must be exactly one sentence"));
        }
        let anchors = self
            .key_story_elements
            .iter()
            .chain(&self.continuity_hooks.carry_over_anchors);
        for a in anchors {
            if a.trim().is_empty() {
                return Err(invariant("story anchors must not be empty"));
            }
        }
        if self.recap_cn.trim().is_empty() || self.micro_goal.trim().is_empty() {
            return Err(invariant("recap_cn and micro_goal must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionType {
    None,
    Tap,
    Drag,
    Choice,
    Mimic,
    RecordVoice,
}

impl InteractionType {
    /// Counts against the per-episode micro-interaction budget.
    pub fn is_micro(self) -> bool {
        matches!(self, InteractionType::Tap | InteractionType::Drag | InteractionType::Mimic)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionExt {
    pub encouragement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    #[serde(rename = "type")]
    pub kind: InteractionType,
    pub instruction: String,
    #[serde(default)]
    pub event_key: Option<String>,
    #[serde(default)]
    pub ext: InteractionExt,
}

/// `[a-z][a-z0-9_]*`
pub fn is_snake_case_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchChoice {
    pub label_cn: String,
    pub next_page_id: PageId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub page_no: u32,
    pub page_id: PageId,
    pub page_text_cn: String,
    #[serde(deserialize_with = "required")]
    pub next_page_id: Option<PageId>,
    #[serde(deserialize_with = "required")]
    pub interaction: Option<Interaction>,
    #[serde(default)]
    pub branch_choices: Vec<BranchChoice>,
}

impl Page {
    pub fn interaction_type(&self) -> InteractionType {
        self.interaction
            .as_ref()
            .map_or(InteractionType::None, |i| i.kind)
    }

    pub fn event_key(&self) -> Option<&str> {
        self.interaction.as_ref().and_then(|i| i.event_key.as_deref())
    }

    /// Outgoing edges: the default successor followed by branch targets.
    pub fn successors(&self) -> impl Iterator<Item = &PageId> {
        self.next_page_id
            .iter()
            .chain(self.branch_choices.iter().map(|b| &b.next_page_id))
    }
}

impl Invariants for Page {
    fn check_invariants(&self) -> Result<(), DomainError> {
        if self.page_id.as_str().is_empty() {
            return Err(invariant("page_id must not be empty"));
        }
        let is_choice = self.interaction_type() == InteractionType::Choice;
        if is_choice && self.branch_choices.len() != 2 {
            return Err(invariant(format!(
                "page {}: a choice page needs exactly 2 branch_choices, found {}",
                self.page_id,
                self.branch_choices.len()
            )));
        }
        if !is_choice && !self.branch_choices.is_empty() {
            return Err(invariant(format!(
                "page {}: branch_choices are only allowed on choice pages",
                self.page_id
            )));
        }
        if let Some(i) = &self.interaction {
            match (&i.event_key, i.kind) {
                (None, InteractionType::None) => {}
                (Some(k), t) if t != InteractionType::None && is_snake_case_key(k) => {}
                (Some(k), InteractionType::None) => {
                    return Err(invariant(format!(
                        "page {}: event_key `{k}` on a page without interaction",
                        self.page_id
                    )))
                }
                (Some(k), _) => {
                    return Err(invariant(format!(
                        "page {}: event_key `{k}` is not snake_case",
                        self.page_id
                    )))
                }
                (None, _) => {
                    return Err(invariant(format!(
                        "page {}: interactive page without event_key",
                        self.page_id
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualCanon {
    pub global_visual_prompt_prefix_en: String,
    pub character_lock_prompt_en: String,
    pub world_lock_prompt_en: String,
    pub negative_prompt_en: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PagePromptPackage {
    pub page_no: u32,
    pub page_id: PageId,
    pub image_prompt_suffix_en: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Main,
    EndingExtension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndingVariant {
    Positive,
    Gentle,
    Warm,
}

impl fmt::Display for EndingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndingVariant::Positive => "positive",
            EndingVariant::Gentle => "gentle",
            EndingVariant::Warm => "warm",
        })
    }
}

/// Exactly what a generation provider returns for the episode and ending
/// stages; the top level is closed to these three keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeDraft {
    pub pages: Vec<Page>,
    pub visual_canon: VisualCanon,
    pub page_image_prompt_packages: Vec<PagePromptPackage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub episode_id: EpisodeId,
    pub framework_id: FrameworkId,
    pub target_food: String,
    pub kind: EpisodeKind,
    #[serde(deserialize_with = "required")]
    pub ending_variant: Option<EndingVariant>,
    pub pages: Vec<Page>,
    pub visual_canon: VisualCanon,
    pub page_image_prompt_packages: Vec<PagePromptPackage>,
}

impl Episode {
    pub fn from_draft(
        draft: EpisodeDraft,
        episode_id: EpisodeId,
        framework_id: FrameworkId,
        target_food: impl Into<String>,
        kind: EpisodeKind,
        ending_variant: Option<EndingVariant>,
    ) -> Self {
        Episode {
            episode_id,
            framework_id,
            target_food: target_food.into(),
            kind,
            ending_variant,
            pages: draft.pages,
            visual_canon: draft.visual_canon,
            page_image_prompt_packages: draft.page_image_prompt_packages,
        }
    }

    pub fn to_draft(&self) -> EpisodeDraft {
        EpisodeDraft {
            pages: self.pages.clone(),
            visual_canon: self.visual_canon.clone(),
            page_image_prompt_packages: self.page_image_prompt_packages.clone(),
        }
    }

    pub fn page(&self, id: &PageId) -> Option<&Page> {
        self.pages.iter().find(|p| &p.page_id == id)
    }

    pub fn terminal_page(&self) -> Option<&Page> {
        self.pages.iter().find(|p| p.next_page_id.is_none())
    }

    pub fn page_by_event_key(&self, key: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.event_key() == Some(key))
    }
}

impl Invariants for Episode {
    fn check_invariants(&self) -> Result<(), DomainError> {
        if self.target_food.trim().is_empty() {
            return Err(invariant("target_food must not be empty"));
        }
        if self.pages.is_empty() {
            return Err(invariant("an episode needs at least one page"));
        }
        match (self.kind, self.ending_variant) {
            (EpisodeKind::Main, Some(_)) => {
                return Err(invariant("a main episode carries no ending_variant"))
            }
            (EpisodeKind::EndingExtension, None) => {
                return Err(invariant("an ending extension needs an ending_variant"))
            }
            _ => {}
        }
        let mut ids = HashSet::new();
        let mut keys = HashSet::new();
        for (i, page) in self.pages.iter().enumerate() {
            page.check_invariants()?;
            if page.page_no as usize != i + 1 {
                return Err(invariant(format!(
                    "page {} has page_no {}, expected {}",
                    page.page_id,
                    page.page_no,
                    i + 1
                )));
            }
            if !ids.insert(&page.page_id) {
                return Err(invariant(format!("duplicate page_id {}", page.page_id)));
            }
            if let Some(k) = page.event_key() {
                if !keys.insert(k) {
                    return Err(invariant(format!("duplicate event_key {k}")));
                }
            }
        }
        if self.pages.last().and_then(|p| p.next_page_id.as_ref()).is_some() {
            return Err(invariant("the final page must have next_page_id = null"));
        }
        if self.page_image_prompt_packages.len() != self.pages.len() {
            return Err(invariant("exactly one prompt package per page is required"));
        }
        for pkg in &self.page_image_prompt_packages {
            match self.page(&pkg.page_id) {
                Some(p) if p.page_no == pkg.page_no => {}
                _ => {
                    return Err(invariant(format!(
                        "prompt package for {} does not match a page",
                        pkg.page_id
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialCircumstance {
    Illness,
    PoorSleep,
    OutsideHome,
    Visitors,
    TimePressure,
    Other,
}

/// Outcome of one target-food opportunity, recorded after the meal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMealRecord {
    pub record_id: RecordId,
    pub target_food: String,
    /// Acceptance of this food before the first session, 1–7.
    pub baseline_try: u8,
    /// Highest engagement reached: 1 refusal … 7 swallows at least one bite.
    pub try_level: u8,
    pub intake: u8,
    pub resistance: u8,
    pub emotion: u8,
    pub parent_pressure: u8,
    pub helpfulness: u8,
    /// The child's own "how well I did today", 1–10.
    pub self_rating: u8,
    pub self_description: String,
    pub special_circumstances: Vec<SpecialCircumstance>,
    pub timestamp: Timestamp,
}

impl PostMealRecord {
    fn seven_point_scales(&self) -> [(&'static str, u8); 7] {
        [
            ("baseline_try", self.baseline_try),
            ("try_level", self.try_level),
            ("intake", self.intake),
            ("resistance", self.resistance),
            ("emotion", self.emotion),
            ("parent_pressure", self.parent_pressure),
            ("helpfulness", self.helpfulness),
        ]
    }
}

impl Invariants for PostMealRecord {
    fn check_invariants(&self) -> Result<(), DomainError> {
        for (name, v) in self.seven_point_scales() {
            if !(1..=7).contains(&v) {
                return Err(invariant(format!("{name} = {v} is outside 1..=7")));
            }
        }
        if !(1..=10).contains(&self.self_rating) {
            return Err(invariant(format!(
                "self_rating = {} is outside 1..=10",
                self.self_rating
            )));
        }
        if self.target_food.trim().is_empty() {
            return Err(invariant("target_food must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackType {
    Praise,
    Encourage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackMessage {
    pub text_cn: String,
    pub basic_type: FeedbackType,
    pub record_id: RecordId,
}

/// What a provider returns for the feedback stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackDraft {
    pub text_cn: String,
}

impl Invariants for FeedbackDraft {
    fn check_invariants(&self) -> Result<(), DomainError> {
        Ok(())
    }
}

impl Invariants for FeedbackMessage {
    fn check_invariants(&self) -> Result<(), DomainError> {
        // Full checks need the source record and avatar; see
        // `validate::validate_feedback_text`.
        if self.text_cn.trim().is_empty() {
            return Err(invariant("feedback text must not be empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snake_case_keys() {
        assert!(is_snake_case_key("tap_apple_2"));
        assert!(is_snake_case_key("a"));
        assert!(!is_snake_case_key("TapApple"));
        assert!(!is_snake_case_key("2tap"));
        assert!(!is_snake_case_key("tap-apple"));
        assert!(!is_snake_case_key(""));
        assert!(!is_snake_case_key("_tap"));
    }

    #[test]
    fn single_sentence() {
        assert!(is_single_sentence("下次去看看菜园里的秘密。"));
        assert!(is_single_sentence("下次还会发生什么呢？！"));
        assert!(is_single_sentence("no terminal at all"));
        assert!(!is_single_sentence("先去菜园。再去厨房。"));
        assert!(!is_single_sentence("。"));
    }

    #[test]
    fn default_constraints_hold() {
        let c = BasicConstraints::default();
        c.check_invariants().unwrap();
        assert_eq!(c.han_chars_total_min, 720);
        assert_eq!(c.han_chars_total_max, 960);
        BasicConstraints::with_page_band(80, 100).check_invariants().unwrap();
    }

    #[test]
    fn constraint_bands_must_be_consistent() {
        let mut c = BasicConstraints::default();
        c.han_chars_per_page_min = 90;
        assert!(c.check_invariants().is_err());

        let mut c = BasicConstraints::default();
        c.han_chars_total_min = 2000;
        c.han_chars_total_max = 3000;
        assert!(c.check_invariants().is_err());

        let mut c = BasicConstraints::default();
        c.episode_page_count = 1;
        assert!(c.check_invariants().is_err());
    }

    #[test]
    fn ending_budget_is_low_density() {
        let b = BasicConstraints::default().budget_for(EpisodeKind::EndingExtension);
        assert_eq!(b, InteractionBudget { micro_max: 1, choice_max: 0, record_voice_max: 0 });
    }
}
