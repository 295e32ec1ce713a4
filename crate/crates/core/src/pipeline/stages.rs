use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::domain::*;
use crate::validate::{
    validate_ending_continuity, validate_episode, validate_feedback_text, validate_framework,
    ValidationReport, ViolationCode, FEEDBACK_MAX_HAN, MIN_CORE_LOCATIONS, OPENING_PREFIX_CHARS,
};

use super::payload::*;
use super::provider::{CompletionRequest, GenerationProvider, MediaBlob, ProviderError};
use super::rules::{classify_feedback_type, description_signal, select_ending_variant, Lexicons};
use super::{run_with_validation, GenerationJob, PipelineError, PromptLibrary, Stage, DEFAULT_MAX_RETRIES};

/// How many earlier episodes the summarize stage sees.
pub const SUMMARY_HISTORY: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeOverrides {
    pub food_override_must_follow: bool,
    pub temporary_props: Vec<String>,
    /// Free-text guidance from the parent, usually given with a regeneration request.
    pub parent_note: Option<String>,
    /// Bumped on each regeneration so a new draft differs from the last.
    pub variation: u32,
}

/// A page's image prompt with the negative prompt kept apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssembledPrompt {
    pub prompt: String,
    pub negative_prompt: String,
}

/// Joins the canon locks and the page suffix in the order global prefix,
/// character lock, world lock, page suffix. Empty parts are skipped.
pub fn assemble_image_prompt(canon: &VisualCanon, package: &PagePromptPackage) -> AssembledPrompt {
    let prompt = [
        canon.global_visual_prompt_prefix_en.as_str(),
        canon.character_lock_prompt_en.as_str(),
        canon.world_lock_prompt_en.as_str(),
        package.image_prompt_suffix_en.as_str(),
    ]
    .iter()
    .map(|s| s.trim())
    .filter(|s| !s.is_empty())
    .collect::<Vec<_>>()
    .join(", ");
    AssembledPrompt { prompt, negative_prompt: canon.negative_prompt_en.trim().to_string() }
}

fn gate(report: &mut ValidationReport, code: ViolationCode, page: Option<&PageId>, detail: String) {
    report.push(code, page, detail);
}

/// The generation stages bound to one provider and one prompt library.
#[derive(Clone)]
pub struct Pipeline {
    provider: Arc<dyn GenerationProvider>,
    prompts: PromptLibrary,
    lexicons: Lexicons,
    max_retries: u32,
    seed: u64,
}

impl Pipeline {
    pub fn new(provider: Arc<dyn GenerationProvider>, prompts: PromptLibrary) -> Self {
        Pipeline { provider, prompts, lexicons: Lexicons::default(), max_retries: DEFAULT_MAX_RETRIES, seed: 0 }
    }

    pub fn with_lexicons(mut self, lexicons: Lexicons) -> Self {
        self.lexicons = lexicons;
        self
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn provider(&self) -> &Arc<dyn GenerationProvider> {
        &self.provider
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn complete<T: DeserializeOwned>(
        &self,
        stage: Stage,
        tag: TypeTag,
        vars: &BTreeMap<&str, String>,
        payload: &impl Serialize,
        repair: Option<&ValidationReport>,
    ) -> Result<T, ProviderError> {
        let system_prompt = self
            .prompts
            .get(stage)
            .and_then(|t| t.render(vars))
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let mut user_payload = serde_json::to_value(payload).expect("payloads serialize");
        if let (Some(obj), Some(r)) = (user_payload.as_object_mut(), repair) {
            obj.insert("repair".into(), serde_json::to_value(r).expect("reports serialize"));
        }
        let request = CompletionRequest { stage, system_prompt, user_payload, output_schema: tag };
        let bytes = self.provider.complete(&request)?;
        parse_schema_only::<T>(&bytes)
            .map_err(|e| ProviderError::InvalidOutput { expected: tag, detail: e.to_string() })
    }

    // ------------------------------------------------------------ framework

    /// Produces a series setup for `avatar` in `mode`. `other_frameworks`
    /// are the family's existing setups, whose recurring phrases must not be
    /// reused.
    #[allow(clippy::too_many_arguments)]
    pub fn generate_framework(
        &self,
        job: &mut GenerationJob,
        framework_id: FrameworkId,
        theme: &str,
        mode: StoryMode,
        constraints: &BasicConstraints,
        avatar: &ChildAvatar,
        other_frameworks: &[StoryFramework],
    ) -> Result<StoryFramework, PipelineError> {
        avatar.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        constraints.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        let existing: Vec<String> = other_frameworks
            .iter()
            .map(|f| f.recurring_elements.recurring_phrase.trim().to_string())
            .collect();
        let payload = FrameworkPayload {
            theme: theme.to_string(),
            story_mode: mode,
            avatar: avatar.clone(),
            constraints: constraints.clone(),
            existing_recurring_phrases: existing.clone(),
            seed: self.seed,
            repair: None,
        };
        let mut vars = BTreeMap::new();
        vars.insert("mode", mode.as_str().to_string());
        vars.insert("nickname", avatar.nickname.trim().to_string());
        vars.insert("min_locations", MIN_CORE_LOCATIONS.to_string());

        run_with_validation(
            job,
            self.max_retries,
            |repair| {
                let draft: FrameworkDraft =
                    self.complete(Stage::Framework, TypeTag::FrameworkDraft, &vars, &payload, repair)?;
                Ok(draft.into_framework(framework_id.clone()))
            },
            |f| self.check_framework(f, mode, avatar, &existing),
        )
    }

    pub fn check_framework(
        &self,
        f: &StoryFramework,
        mode: StoryMode,
        avatar: &ChildAvatar,
        existing_phrases: &[String],
    ) -> ValidationReport {
        let mut report = validate_framework(f);
        if f.story_mode != mode {
            gate(
                &mut report,
                ViolationCode::InvariantViolation,
                None,
                format!("story_mode is {}, requested {}", f.story_mode.as_str(), mode.as_str()),
            );
        }
        if !f.child_role.contains(avatar.nickname.trim()) {
            gate(
                &mut report,
                ViolationCode::InvariantViolation,
                None,
                "child_role does not name the child".into(),
            );
        }
        let phrase = f.recurring_elements.recurring_phrase.trim();
        if !phrase.is_empty() && existing_phrases.iter().any(|p| p == phrase) {
            gate(
                &mut report,
                ViolationCode::InvariantViolation,
                None,
                format!("recurring_phrase `{phrase}` is already used by this family"),
            );
        }
        report
    }

    // ------------------------------------------------------------ summarize

    pub fn summarize(
        &self,
        job: &mut GenerationJob,
        previous_episodes: &[Episode],
        framework: Option<&StoryFramework>,
    ) -> Result<RecapAndGoal, PipelineError> {
        if previous_episodes.is_empty() {
            return Err(PipelineError::Precondition("summarize needs at least one earlier episode".into()));
        }
        let start = previous_episodes.len().saturating_sub(SUMMARY_HISTORY);
        let payload = SummarizePayload {
            framework: framework.cloned(),
            previous_episodes: previous_episodes[start..].to_vec(),
            seed: self.seed,
            repair: None,
        };
        let mut vars = BTreeMap::new();
        vars.insert("max_history", SUMMARY_HISTORY.to_string());
        run_with_validation(
            job,
            self.max_retries,
            |repair| self.complete(Stage::Summarize, TypeTag::RecapAndGoal, &vars, &payload, repair),
            |r| self.check_recap(r),
        )
    }

    pub fn check_recap(&self, recap: &RecapAndGoal) -> ValidationReport {
        let mut report = ValidationReport::new();
        if let Err(e) = recap.check_invariants() {
            gate(&mut report, ViolationCode::InvariantViolation, None, e.to_string());
        }
        if let Some(w) = self.lexicons.stage_vocabulary_hit(&recap.micro_goal) {
            gate(
                &mut report,
                ViolationCode::StageVocabularyDetected,
                None,
                format!("micro_goal uses the stage term `{w}`"),
            );
        }
        report
    }

    // -------------------------------------------------------------- episode

    #[allow(clippy::too_many_arguments)]
    pub fn generate_episode(
        &self,
        job: &mut GenerationJob,
        episode_id: EpisodeId,
        framework: &StoryFramework,
        recap: Option<&RecapAndGoal>,
        target_food: &str,
        avatar: &ChildAvatar,
        constraints: &BasicConstraints,
        overrides: &EpisodeOverrides,
    ) -> Result<Episode, PipelineError> {
        let food = target_food.trim();
        if food.is_empty() {
            return Err(PipelineError::Precondition("target_food must not be empty".into()));
        }
        framework.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        avatar.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        constraints.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;

        let payload = EpisodePayload {
            framework: framework.clone(),
            recap: recap.cloned(),
            target_food: food.to_string(),
            avatar: avatar.clone(),
            constraints: constraints.clone(),
            overrides: OverridesPayload {
                food_override_must_follow: overrides.food_override_must_follow,
                temporary_props: overrides.temporary_props.clone(),
                parent_note: overrides.parent_note.clone(),
                variation: overrides.variation,
            },
            seed: self.seed,
            repair: None,
        };
        let vars = self.book_vars(constraints, EpisodeKind::Main, avatar, None);
        run_with_validation(
            job,
            self.max_retries,
            |repair| {
                let draft: EpisodeDraft =
                    self.complete(Stage::Episode, TypeTag::EpisodeDraft, &vars, &payload, repair)?;
                Ok(Episode::from_draft(
                    draft,
                    episode_id.clone(),
                    framework.framework_id.clone(),
                    food,
                    EpisodeKind::Main,
                    None,
                ))
            },
            |e| self.check_episode(e, constraints, avatar, overrides.food_override_must_follow),
        )
    }

    fn book_vars(
        &self,
        c: &BasicConstraints,
        kind: EpisodeKind,
        avatar: &ChildAvatar,
        variant: Option<EndingVariant>,
    ) -> BTreeMap<&'static str, String> {
        let mut vars = BTreeMap::new();
        vars.insert("page_count", c.page_count_for(kind).to_string());
        vars.insert("han_min", c.han_chars_per_page_min.to_string());
        vars.insert("han_max", c.han_chars_per_page_max.to_string());
        vars.insert("micro_max", c.budget_for(kind).micro_max.to_string());
        vars.insert("nickname", avatar.nickname.trim().to_string());
        if let Some(v) = variant {
            vars.insert("variant", v.to_string());
        }
        vars
    }

    /// The full gate for a generated book: every episode rule plus the
    /// narration and food-placement checks.
    pub fn check_episode(
        &self,
        episode: &Episode,
        constraints: &BasicConstraints,
        avatar: &ChildAvatar,
        food_must_follow: bool,
    ) -> ValidationReport {
        let mut report = validate_episode(episode, constraints);
        for page in &episode.pages {
            if let Some(w) = self.lexicons.first_person_hit(&page.page_text_cn) {
                gate(
                    &mut report,
                    ViolationCode::FirstPersonNarration,
                    Some(&page.page_id),
                    format!("narration uses `{w}`"),
                );
            }
        }
        let nickname = avatar.nickname.trim();
        if !episode.pages.iter().any(|p| p.page_text_cn.contains(nickname)) {
            gate(
                &mut report,
                ViolationCode::InvariantViolation,
                None,
                format!("no page names the child `{nickname}`"),
            );
        }
        if food_must_follow {
            let food = episode.target_food.trim();
            if !episode.pages.iter().any(|p| p.page_text_cn.contains(food)) {
                gate(
                    &mut report,
                    ViolationCode::FoodMentionMissing,
                    None,
                    format!("no page text mentions `{food}`"),
                );
            }
            if !episode.page_image_prompt_packages.iter().any(|p| p.image_prompt_suffix_en.contains(food)) {
                gate(
                    &mut report,
                    ViolationCode::FoodMentionMissing,
                    None,
                    format!("no image prompt suffix mentions `{food}`"),
                );
            }
        }
        if report.ok {
            if let Err(e) = episode.check_invariants() {
                gate(&mut report, ViolationCode::InvariantViolation, None, e.to_string());
            }
        }
        report
    }

    // --------------------------------------------------------------- ending

    #[allow(clippy::too_many_arguments)]
    pub fn generate_ending(
        &self,
        job: &mut GenerationJob,
        episode_id: EpisodeId,
        main_episode: &Episode,
        record: &PostMealRecord,
        summary: &RecapAndGoal,
        avatar: &ChildAvatar,
        framework: Option<&StoryFramework>,
        constraints: &BasicConstraints,
    ) -> Result<Episode, PipelineError> {
        if record.target_food.trim() != main_episode.target_food.trim() {
            return Err(PipelineError::FoodMismatch {
                expected: main_episode.target_food.clone(),
                actual: record.target_food.clone(),
            });
        }
        let variant = select_ending_variant(i64::from(record.self_rating))?;
        if main_episode.kind != EpisodeKind::Main {
            return Err(PipelineError::Precondition("an ending extends a main episode".into()));
        }
        record.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        constraints.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;

        let payload = EndingPayload {
            main_episode: main_episode.clone(),
            record: record.clone(),
            summary: summary.clone(),
            ending_variant: variant,
            avatar: avatar.clone(),
            framework: framework.cloned(),
            constraints: constraints.clone(),
            seed: self.seed,
            repair: None,
        };
        let vars = self.book_vars(constraints, EpisodeKind::EndingExtension, avatar, Some(variant));
        run_with_validation(
            job,
            self.max_retries,
            |repair| {
                let draft: EpisodeDraft =
                    self.complete(Stage::Ending, TypeTag::EpisodeDraft, &vars, &payload, repair)?;
                Ok(Episode::from_draft(
                    draft,
                    episode_id.clone(),
                    main_episode.framework_id.clone(),
                    main_episode.target_food.clone(),
                    EpisodeKind::EndingExtension,
                    Some(variant),
                ))
            },
            |ending| {
                let mut report = self.check_episode(ending, constraints, avatar, false);
                report.merge(validate_ending_continuity(main_episode, ending));
                report
            },
        )
    }

    // ------------------------------------------------------------- feedback

    pub fn generate_feedback(
        &self,
        job: &mut GenerationJob,
        record: &PostMealRecord,
        avatar: &ChildAvatar,
        recent_phrases: &[String],
        seed: u64,
    ) -> Result<FeedbackMessage, PipelineError> {
        record.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        avatar.check_invariants().map_err(|e| PipelineError::Precondition(e.to_string()))?;
        let signal = description_signal(&record.self_description, &self.lexicons);
        let basic_type = classify_feedback_type(record, signal);
        let nickname = avatar.nickname.trim().to_string();
        let food = record.target_food.trim().to_string();
        let payload = FeedbackPayload {
            nickname: nickname.clone(),
            target_food: food.clone(),
            self_rating: record.self_rating,
            try_level: record.try_level,
            self_description: record.self_description.clone(),
            basic_type,
            description_signal: signal,
            recent_phrases: recent_phrases.to_vec(),
            seed,
            repair: None,
        };
        let mut vars = BTreeMap::new();
        vars.insert("max_han", FEEDBACK_MAX_HAN.to_string());
        vars.insert("prefix_chars", OPENING_PREFIX_CHARS.to_string());
        let draft: FeedbackDraft = run_with_validation(
            job,
            self.max_retries,
            |repair| self.complete(Stage::Feedback, TypeTag::FeedbackDraft, &vars, &payload, repair),
            |d: &FeedbackDraft| validate_feedback_text(&d.text_cn, &nickname, &food, recent_phrases),
        )?;
        Ok(FeedbackMessage { text_cn: draft.text_cn, basic_type, record_id: record.record_id.clone() })
    }

    // --------------------------------------------------------------- images

    /// One illustration per page, in page order.
    pub fn generate_page_images(
        &self,
        episode: &Episode,
        reference: Option<&MediaBlob>,
    ) -> Result<Vec<(PageId, MediaBlob)>, ProviderError> {
        episode
            .page_image_prompt_packages
            .iter()
            .map(|pkg| {
                let p = assemble_image_prompt(&episode.visual_canon, pkg);
                let blob = self.provider.generate_image(&p.prompt, &p.negative_prompt, reference)?;
                Ok((pkg.page_id.clone(), blob))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon() -> VisualCanon {
        VisualCanon {
            global_visual_prompt_prefix_en: "watercolor".into(),
            character_lock_prompt_en: "same girl".into(),
            world_lock_prompt_en: "same garden".into(),
            negative_prompt_en: "text".into(),
        }
    }

    #[test]
    fn assembly_order_and_empty_suffix() {
        let pkg = PagePromptPackage { page_no: 1, page_id: "p".into(), image_prompt_suffix_en: String::new() };
        let a = assemble_image_prompt(&canon(), &pkg);
        assert_eq!(a.prompt, "watercolor, same girl, same garden");
        assert_eq!(a.negative_prompt, "text");
        let pkg = PagePromptPackage { image_prompt_suffix_en: "holding 冬瓜".into(), ..pkg };
        let b = assemble_image_prompt(&canon(), &pkg);
        assert_eq!(b.prompt, "watercolor, same girl, same garden, holding 冬瓜");
        assert_eq!(b, assemble_image_prompt(&canon(), &pkg));
    }
}
