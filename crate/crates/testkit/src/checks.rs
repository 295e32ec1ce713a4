//! Whole-criterion checks over the core crate. Each returns an [`Outcome`]
//! instead of panicking so a runner can report every check in one pass.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storyecho_core::domain::*;
use storyecho_core::pipeline::*;
use storyecho_core::session::{EventKind, LoopError, SessionState, TfoSession};
use storyecho_core::validate::*;

use crate::corpus::{valid_episodes, valid_feedback, valid_frameworks};
use crate::graphs::{as_episode, oracle_codes, random_graph, GRAPH_CODES};
use crate::han::{random_string, reference_count};
use crate::machine::{event_of, legal_target, random_walk};
use crate::mutants::{all_mutants, suite_constraints};
use crate::records::random_record;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} {} [{:.2}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    match result {
        Ok(detail) => Outcome { name, passed: true, detail, elapsed },
        Err(detail) => Outcome { name, passed: false, detail, elapsed },
    }
}

fn first_few(problems: &[String]) -> String {
    let shown: Vec<_> = problems.iter().take(5).cloned().collect();
    format!("{} problem(s): {}", problems.len(), shown.join("; "))
}

/// Corpus accepted, every mutant rejected with exactly its code, at least
/// 26 classes of at least 3 mutants, all within five seconds.
pub fn constraint_suite() -> Outcome {
    let out = timed("constraint suite", || {
        let c = suite_constraints();
        let mut problems = Vec::new();
        let episodes = valid_episodes();
        for ep in &episodes {
            let r = validate_episode(ep, &c);
            if !r.ok {
                problems.push(format!("corpus {} rejected: {}", ep.episode_id, r.summary()));
            }
        }
        let feedback = valid_feedback();
        for f in &feedback {
            if !validate_feedback_text(&f.text, &f.nickname, &f.food, &f.recent).ok {
                problems.push(format!("corpus feedback rejected: {}", f.text));
            }
        }
        let frameworks = valid_frameworks();
        for f in &frameworks {
            if !validate_framework(f).ok {
                problems.push(format!("corpus framework {} rejected", f.framework_id));
            }
        }
        let mutants = all_mutants();
        let mut per_code: BTreeMap<ViolationCode, usize> = BTreeMap::new();
        for m in &mutants {
            *per_code.entry(m.expected).or_default() += 1;
            let got = m.codes(&c);
            if got != vec![m.expected] {
                problems.push(format!("{:?} / {}: got {:?}", m.expected, m.label, got));
            }
        }
        for code in ViolationCode::VALIDATOR {
            let n = per_code.get(&code).copied().unwrap_or(0);
            if n < 3 {
                problems.push(format!("{code:?} has {n} mutants"));
            }
        }
        if per_code.len() < 26 {
            problems.push(format!("only {} mutation classes", per_code.len()));
        }
        if !problems.is_empty() {
            return Err(first_few(&problems));
        }
        Ok(format!(
            "{} valid episodes, {} feedback, {} frameworks; {} mutants in {} classes (min {} each)",
            episodes.len(),
            feedback.len(),
            frameworks.len(),
            mutants.len(),
            per_code.len(),
            per_code.values().min().copied().unwrap_or(0)
        ))
    });
    within(out, Duration::from_secs(5))
}

fn within(mut out: Outcome, limit: Duration) -> Outcome {
    if out.passed && out.elapsed >= limit {
        out.passed = false;
        out.detail = format!("{} but took longer than {:?}", out.detail, limit);
    }
    out
}

/// Random page graphs: the validator and the all-paths reference agree on
/// validity and on every graph code.
pub fn page_graph_oracle(graphs: usize, seed: u64) -> Outcome {
    timed("page-graph oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut disagreements = Vec::new();
        let mut invalid = 0;
        let mut fired: BTreeMap<ViolationCode, usize> = BTreeMap::new();
        for i in 0..graphs {
            let pages = random_graph(&mut rng);
            let expected = oracle_codes(&pages);
            let report = validate_page_graph(&as_episode(pages));
            let got: BTreeSet<ViolationCode> = report.codes().into_iter().collect();
            if !expected.is_empty() {
                invalid += 1;
            }
            for c in &expected {
                *fired.entry(*c).or_default() += 1;
            }
            if got != expected || report.ok != expected.is_empty() {
                disagreements.push(format!("graph {i}: oracle {expected:?}, validator {got:?}"));
            }
        }
        if !disagreements.is_empty() {
            return Err(first_few(&disagreements));
        }
        let missing: Vec<_> = GRAPH_CODES.iter().filter(|c| !fired.contains_key(c)).collect();
        if !missing.is_empty() {
            return Err(format!("generator never produced {missing:?}"));
        }
        Ok(format!("{graphs}/{graphs} agree ({} valid, {invalid} invalid)", graphs - invalid))
    })
}

/// Fuzzed strings: the Han counter matches the reference script table.
pub fn han_oracle(strings: usize, seed: u64) -> Outcome {
    timed("han-count oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bad = Vec::new();
        let mut total_han = 0;
        for _ in 0..strings {
            let s = random_string(&mut rng);
            let expected = reference_count(&s);
            total_han += expected;
            let got = count_han_chars(&s);
            if got != expected {
                bad.push(format!("{s:?}: {got} vs {expected}"));
            }
        }
        if bad.is_empty() {
            Ok(format!("{strings}/{strings} strings exact ({total_han} Han code points)"))
        } else {
            Err(first_few(&bad))
        }
    })
}

fn expected_feedback_type(signal: DescriptionSignal, rating: u8) -> FeedbackType {
    match (signal, rating) {
        (DescriptionSignal::Progress, _) => FeedbackType::Praise,
        (DescriptionSignal::Avoidance, _) => FeedbackType::Encourage,
        (DescriptionSignal::Neutral, 7..=10) => FeedbackType::Praise,
        (DescriptionSignal::Neutral, _) => FeedbackType::Encourage,
    }
}

fn expected_variant(score: u8) -> EndingVariant {
    match score {
        7..=10 => EndingVariant::Positive,
        1..=3 => EndingVariant::Gentle,
        _ => EndingVariant::Warm,
    }
}

fn record_with_rating(rating: u8) -> PostMealRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(rating));
    let mut r = random_record(&mut rng, usize::from(rating));
    r.self_rating = rating;
    r
}

/// Feedback type over every signal and rating, ending variant over every
/// score, avatar state consistent with the variant.
pub fn rule_tables() -> Outcome {
    timed("rule tables", || {
        let mut bad = Vec::new();
        let mut cases = 0;
        for signal in DescriptionSignal::ALL {
            for rating in 1..=10u8 {
                cases += 1;
                let got = classify_feedback_type(&record_with_rating(rating), signal);
                let want = expected_feedback_type(signal, rating);
                if got != want {
                    bad.push(format!("({signal:?}, {rating}): {got:?}, expected {want:?}"));
                }
            }
        }
        for score in 1..=10u8 {
            cases += 1;
            let want = expected_variant(score);
            match select_ending_variant(i64::from(score)) {
                Ok(v) if v == want => {}
                other => bad.push(format!("score {score}: {other:?}, expected {want:?}")),
            }
            let state = avatar_feedback_state(&record_with_rating(score));
            let paired = match want {
                EndingVariant::Positive => AvatarFeedbackState::Happy,
                EndingVariant::Gentle => AvatarFeedbackState::SadButHopeful,
                EndingVariant::Warm => AvatarFeedbackState::Neutral,
            };
            if state != paired {
                bad.push(format!("score {score}: avatar {state} with {want} ending"));
            }
        }
        for score in [-1i64, 0, 11, 100] {
            if select_ending_variant(score).is_ok() {
                bad.push(format!("score {score} accepted"));
            }
        }
        if bad.is_empty() {
            Ok(format!("{cases} cases, out-of-range scores refused"))
        } else {
            Err(first_few(&bad))
        }
    })
}

fn test_avatar(nickname: &str) -> ChildAvatar {
    ChildAvatar {
        avatar_id: AvatarId::new(format!("child_{nickname}")),
        nickname: nickname.into(),
        gender: Gender::Unspecified,
        clothing: "蓝色外套".into(),
        accessories: vec![],
        base_reference_image: None,
    }
}

fn retry_pipeline(edits: usize) -> Pipeline {
    let steps = (0..edits).map(|_| {
        ScriptStep::Edit(Box::new(|mut v: serde_json::Value| {
            if let Some(pages) = v.get_mut("pages").and_then(|p| p.as_array_mut()) {
                pages.pop();
            } else {
                v["text_cn"] = "这段话没有提到名字也没有提到食物。".into();
            }
            v
        }))
    });
    Pipeline::new(Arc::new(ScriptedProvider::new(MockProvider::new(3), steps)), PromptLibrary::bundled())
        .with_max_retries(DEFAULT_MAX_RETRIES)
}

/// A provider that fails `k` times then succeeds: attempts = k + 1 for
/// k ≤ max_retries, GenerationFailed beyond that. Checked on the episode
/// and feedback stages.
pub fn validate_retry() -> Outcome {
    timed("validate-retry", || {
        let avatar = test_avatar("小满");
        let c = BasicConstraints::default();
        let framework = {
            let mut job = GenerationJob::scratch(Stage::Framework);
            retry_pipeline(0)
                .generate_framework(&mut job, "fw_r".into(), "小镇", StoryMode::RealisticEveryday, &c, &avatar, &[])
                .map_err(|e| format!("framework: {e}"))?
        };
        let mut record = record_with_rating(8);
        record.target_food = "西兰花".into();
        let mut seen = Vec::new();
        for k in 0..=3usize {
            let p = retry_pipeline(k);
            let mut job = GenerationJob::scratch(Stage::Episode);
            let ep = p.generate_episode(&mut job, "ep_r".into(), &framework, None, "西兰花", &avatar, &c, &Default::default());
            let p = retry_pipeline(k);
            let mut fjob = GenerationJob::scratch(Stage::Feedback);
            let fb = p.generate_feedback(&mut fjob, &record, &avatar, &[], 1);
            for (stage, ok, job, err) in [
                ("episode", ep.is_ok(), &job, ep.as_ref().err().map(|e| e.to_string())),
                ("feedback", fb.is_ok(), &fjob, fb.as_ref().err().map(|e| e.to_string())),
            ] {
                let want_ok = k <= DEFAULT_MAX_RETRIES as usize;
                let want_attempts = (k + 1).min(DEFAULT_MAX_RETRIES as usize + 1) as u32;
                if ok != want_ok || job.attempts != want_attempts {
                    return Err(format!(
                        "{stage} k={k}: ok={ok} attempts={} (expected ok={want_ok} attempts={want_attempts}) {err:?}",
                        job.attempts
                    ));
                }
                if !want_ok {
                    let failed = matches!(
                        (stage, &ep, &fb),
                        ("episode", Err(PipelineError::GenerationFailed { .. }), _)
                            | ("feedback", _, Err(PipelineError::GenerationFailed { .. }))
                    );
                    if !failed || job.status != JobStatus::Failed {
                        return Err(format!("{stage} k={k}: expected GenerationFailed, got {err:?}"));
                    }
                }
            }
            seen.push(format!("k={k}:{}", if k <= 2 { format!("{} attempts", k + 1) } else { "GenerationFailed".into() }));
        }
        Ok(seen.join(", "))
    })
}

/// Random legal walks: EndingReady only after exactly one post-meal record,
/// illegal pairs refused, replay reproduces the final session.
pub fn state_machine(walks: usize, seed: u64) -> Outcome {
    timed("state machine", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reached_ending = 0;
        let mut illegal_checked = 0;

        for s in SessionState::ALL {
            for e in EventKind::ALL {
                if storyecho_core::session::next_state(s, e) != legal_target(s, e) {
                    return Err(format!("table disagrees with the reference on ({s}, {e})"));
                }
            }
        }

        for w in 0..walks {
            let initial = TfoSession::new(format!("tfo_{w}").into(), "child".into(), "西兰花", Timestamp(0))
                .map_err(|e| e.to_string())?;
            let mut session = initial.clone();
            let mut log = Vec::new();
            let mut meals = 0;
            let mut visited = vec![session.clone()];
            for (i, event) in random_walk(&mut rng, 40).into_iter().enumerate() {
                let want = legal_target(session.state, event.kind());
                if event.kind() == EventKind::PostMealSubmitted {
                    meals += 1;
                }
                let (next, rec) = session
                    .apply(event, i as u64, Timestamp(i as u64 + 1))
                    .map_err(|e| format!("walk {w} step {i}: {e}"))?;
                if Some(next.state) != want {
                    return Err(format!("walk {w} step {i}: reached {}, expected {want:?}", next.state));
                }
                if next.state == SessionState::EndingReady {
                    reached_ending += 1;
                    if meals != 1 {
                        return Err(format!("walk {w}: EndingReady after {meals} post-meal records"));
                    }
                }
                log.push(rec);
                session = next;
                visited.push(session.clone());
            }
            let replayed = TfoSession::replay(&initial, &log).map_err(|e| format!("walk {w}: replay {e}"))?;
            if replayed != session {
                return Err(format!("walk {w}: replay differs"));
            }

            let at = &visited[rng.random_range(0..visited.len())];
            let illegal: Vec<EventKind> =
                EventKind::ALL.into_iter().filter(|e| legal_target(at.state, *e).is_none()).collect();
            let kind = illegal[rng.random_range(0..illegal.len())];
            match at.apply(event_of(kind, 0), 999, Timestamp(999)) {
                Err(LoopError::IllegalTransition { state, event }) if state == at.state && event == kind => {
                    illegal_checked += 1
                }
                other => return Err(format!("({}, {kind}) gave {:?}", at.state, other.map(|(s, _)| s.state))),
            }
        }
        Ok(format!(
            "{walks} walks ({reached_ending} reached EndingReady), {illegal_checked} illegal pairs refused, all replays exact"
        ))
    })
}

/// Mock feedback for random records across several children, each checked
/// against that child's own recent messages.
pub fn feedback_validity(messages: usize, seed: u64) -> Outcome {
    timed("feedback validity", || {
        const NICKS: [&str; 8] = ["小满", "乐乐", "朵朵", "豆豆", "安安", "小宇", "果果", "天天"];
        const HISTORY: usize = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pipeline =
            Pipeline::new(Arc::new(MockProvider::new(seed)), PromptLibrary::bundled()).with_seed(seed);
        let mut history: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let mut retried = 0;
        for i in 0..messages {
            let nick = NICKS[rng.random_range(0..NICKS.len())];
            let avatar = test_avatar(nick);
            let record = random_record(&mut rng, i);
            let own = history.entry(nick).or_default();
            let recent: Vec<String> = own.iter().rev().take(HISTORY).cloned().collect();
            let mut job = GenerationJob::scratch(Stage::Feedback);
            let msg = pipeline
                .generate_feedback(&mut job, &record, &avatar, &recent, rng.random_range(0..u64::MAX))
                .map_err(|e| format!("message {i} for {nick}: {e}"))?;
            if job.attempts > 1 {
                retried += 1;
            }
            let report = validate_feedback_text(&msg.text_cn, nick, &record.target_food, &recent);
            if !report.ok {
                return Err(format!("message {i} `{}`: {}", msg.text_cn, report.summary()));
            }
            own.push(msg.text_cn);
        }
        Ok(format!("{messages}/{messages} valid for {} children ({retried} needed a retry)", NICKS.len()))
    })
}

/// Every core-only criterion at full scale.
pub fn core_criteria() -> Vec<Outcome> {
    vec![
        constraint_suite(),
        page_graph_oracle(1000, 11),
        han_oracle(10_000, 12),
        rule_tables(),
        validate_retry(),
        state_machine(10_000, 13),
        feedback_validity(1000, 14),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn core_criteria_pass_at_small_scale() {
        for o in [
            super::constraint_suite(),
            super::page_graph_oracle(200, 1),
            super::han_oracle(500, 2),
            super::rule_tables(),
            super::validate_retry(),
            super::state_machine(300, 3),
            super::feedback_validity(100, 4),
        ] {
            println!("{o}");
            assert!(o.passed, "{o}");
        }
    }
}
