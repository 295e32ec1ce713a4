use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use storyecho_core::config::Config;
use storyecho_core::demo::{run_scenario, DemoOptions, DirectDriver, DriverResult, LoopDriver};
use storyecho_core::domain::*;
use storyecho_core::engine::{
    Clock, Engine, FeedbackView, GenerateRequest, NewAvatar, NewFramework, NewInteraction, NewPostMealRecord,
    NewSession, ReviewRequest,
};
use storyecho_core::pipeline::{GenerationJob, MediaBlob, MockProvider};
use storyecho_core::session::TfoSession;
use storyecho_core::store::{read_journal, Entry, Store, StoreError, StoredEpisode};

/// Reuses one avatar and framework across scenarios so a single child
/// accumulates several sessions.
struct SameChild<'a> {
    inner: DirectDriver<'a>,
    avatar: Option<ChildAvatar>,
    framework: Option<StoryFramework>,
}

impl LoopDriver for SameChild<'_> {
    fn create_avatar(&mut self, req: NewAvatar) -> DriverResult<ChildAvatar> {
        if self.avatar.is_none() {
            self.avatar = Some(self.inner.create_avatar(req)?);
        }
        Ok(self.avatar.clone().unwrap())
    }
    fn create_framework(&mut self, req: NewFramework) -> DriverResult<StoryFramework> {
        if self.framework.is_none() {
            self.framework = Some(self.inner.create_framework(req)?);
        }
        Ok(self.framework.clone().unwrap())
    }
    fn create_session(&mut self, req: NewSession) -> DriverResult<TfoSession> {
        self.inner.create_session(req)
    }
    fn generate(&mut self, s: &SessionId, req: GenerateRequest) -> DriverResult<Vec<GenerationJob>> {
        self.inner.generate(s, req)
    }
    fn episode(&mut self, s: &SessionId) -> DriverResult<StoredEpisode> {
        self.inner.episode(s)
    }
    fn review(&mut self, s: &SessionId, req: ReviewRequest) -> DriverResult<TfoSession> {
        self.inner.review(s, req)
    }
    fn interact(&mut self, s: &SessionId, req: NewInteraction) -> DriverResult<()> {
        self.inner.interact(s, req)
    }
    fn reading_finished(&mut self, s: &SessionId) -> DriverResult<TfoSession> {
        self.inner.reading_finished(s)
    }
    fn post_meal(&mut self, s: &SessionId, req: NewPostMealRecord) -> DriverResult<Vec<GenerationJob>> {
        self.inner.post_meal(s, req)
    }
    fn feedback(&mut self, s: &SessionId) -> DriverResult<FeedbackView> {
        self.inner.feedback(s)
    }
    fn ending(&mut self, s: &SessionId) -> DriverResult<StoredEpisode> {
        self.inner.ending(s)
    }
    fn session(&mut self, s: &SessionId) -> DriverResult<TfoSession> {
        self.inner.session(s)
    }
}

fn engine_at(path: &Path) -> Engine {
    let cfg = Config::default();
    let store = Store::open(path).unwrap();
    let pipeline = cfg.pipeline_with(Arc::new(MockProvider::new(5))).unwrap();
    Engine::new(store, pipeline, cfg.constraints.clone(), Clock::stepped(10_000, 1)).unwrap()
}

/// Runs `sessions` complete loops for one child and returns its id.
fn populate(engine: &Engine, sessions: &[(&str, i64)]) -> ChildId {
    let cfg = Config::default();
    let mut driver = SameChild { inner: DirectDriver { engine }, avatar: None, framework: None };
    for (food, rating) in sessions {
        let opts = DemoOptions { food: food.to_string(), self_rating: *rating, ..DemoOptions::default() };
        let out = run_scenario(&mut driver, &opts, &cfg.constraints).unwrap();
        engine.close_session(&out.session.session_id).unwrap();
    }
    driver.avatar.unwrap().avatar_id
}

#[test]
fn reopening_replays_the_same_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let (tables, len) = {
        let engine = engine_at(&path);
        populate(&engine, &[("西兰花", 8), ("胡萝卜", 2)]);
        let s = engine.read();
        s.verify().unwrap();
        (s.tables().clone(), s.journal_len())
    };
    let reopened = Store::open(&path).unwrap();
    assert_eq!(reopened.tables(), &tables);
    assert_eq!(reopened.journal_len(), len);
    reopened.verify().unwrap();
}

#[test]
fn identical_puts_are_no_ops_and_different_content_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_at(&dir.path().join("j.jsonl"));
    let child = populate(&engine, &[("西兰花", 8)]);
    let mut store = Store::open(dir.path().join("j.jsonl")).unwrap();
    let before = store.journal_len();

    let avatar = store.avatar(&child).unwrap();
    store.put_avatar(avatar.clone(), None).unwrap();
    let fw = store.frameworks_for(&child).remove(0);
    store.put_framework(&child, fw.framework.clone()).unwrap();
    let ep = store.tables().episodes.values().next().unwrap().clone();
    store.put_episode(&ep.child_id, ep.session_id.as_ref(), ep.episode.clone(), ep.page_images.clone()).unwrap();
    store.approve_episode(&ep.episode.episode_id).unwrap();
    assert_eq!(store.journal_len(), before);

    let mut changed = avatar.clone();
    changed.clothing = "蓝色外套".into();
    assert!(matches!(store.put_avatar(changed, None), Err(StoreError::Conflict(_))));
    let mut other = ep.episode.clone();
    other.pages[0].page_text_cn.push('啊');
    assert!(matches!(
        store.put_episode(&ep.child_id, ep.session_id.as_ref(), other, ep.page_images.clone()),
        Err(StoreError::Conflict(_))
    ));
    assert_eq!(store.journal_len(), before);
}

#[test]
fn dangling_references_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path().join("j.jsonl")).unwrap();
    let ghost = ChildId::new("nobody");
    assert!(matches!(store.recent_feedback_phrases(&ghost, 3), Err(StoreError::ChildNotFound(_))));
    assert!(matches!(store.latest_episodes(&ghost, 3), Err(StoreError::ChildNotFound(_))));
    assert!(store.export(&ghost).is_err());
    assert!(store.approve_episode(&EpisodeId::new("missing")).is_err());
    assert!(store.close_session(&SessionId::new("missing"), Timestamp(1)).is_err());
    assert_eq!(store.journal_len(), 0);
    let _ = store.put_blob(&MediaBlob { media_type: "audio/wav".into(), bytes: vec![1, 2, 3] }).unwrap();
    assert_eq!(store.journal_len(), 1);
}

#[test]
fn history_queries_agree_with_a_journal_scan() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let engine = engine_at(&path);
    let ratings = [("西兰花", 9), ("胡萝卜", 5), ("青椒", 2), ("西兰花", 7), ("茄子", 4), ("南瓜", 10), ("胡萝卜", 1)];
    let child = populate(&engine, &ratings);
    let other = populate(&engine, &[("青椒", 6)]);
    let store = engine.read();

    let mut phrases = Vec::new();
    let mut approved: Vec<EpisodeId> = Vec::new();
    let mut mains = std::collections::BTreeMap::new();
    for entry in read_journal(&path).unwrap() {
        match entry {
            Entry::Feedback { stored } if stored.child_id == child => phrases.push(stored.message.text_cn),
            Entry::PutEpisode { stored } if stored.child_id == child && stored.episode.kind == EpisodeKind::Main => {
                mains.insert(stored.episode.episode_id.clone(), stored.episode);
            }
            Entry::ApproveEpisode { episode_id } if mains.contains_key(&episode_id) => approved.push(episode_id),
            _ => {}
        }
    }
    assert_eq!(phrases.len(), ratings.len());
    for limit in [0, 1, 3, 5, 20] {
        let expect: Vec<String> = phrases.iter().rev().take(limit).cloned().collect();
        assert_eq!(store.recent_feedback_phrases(&child, limit).unwrap(), expect, "limit {limit}");
        let skip = approved.len().saturating_sub(limit);
        let expect: Vec<Episode> = approved[skip..].iter().map(|id| mains[id].clone()).collect();
        assert_eq!(store.latest_episodes(&child, limit).unwrap(), expect, "limit {limit}");
    }
    assert_eq!(store.recent_feedback_phrases(&other, 10).unwrap().len(), 1);
}

#[test]
fn a_torn_final_line_is_dropped_on_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let tables = {
        let engine = engine_at(&path);
        populate(&engine, &[("西兰花", 8)]);
        let t = engine.read().tables().clone();
        t
    };
    let clean_len = std::fs::metadata(&path).unwrap().len();
    OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\":999,\"entry\":{\"Put").unwrap();
    let store = Store::open(&path).unwrap();
    assert_eq!(store.tables(), &tables);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), clean_len);
}

#[test]
fn a_corrupt_middle_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    {
        let engine = engine_at(&path);
        populate(&engine, &[("西兰花", 8)]);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json}";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match Store::open(&path) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a corrupt-line error, got {:?}", other.map(|_| ())),
    }
    assert!(matches!(read_journal(&path), Err(StoreError::Corrupt { line: 3, .. })));
}

#[test]
fn export_then_import_reproduces_the_child() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_at(&dir.path().join("a.jsonl"));
    let child = populate(&engine, &[("西兰花", 8), ("胡萝卜", 3)]);
    let bystander = populate(&engine, &[("青椒", 5)]);
    let archive = engine.read().export(&child).unwrap();
    assert_eq!(archive.sessions.len(), 2);
    assert!(!archive.feedback.is_empty());

    let mut fresh = Store::open(dir.path().join("b.jsonl")).unwrap();
    fresh.import(&archive).unwrap();
    fresh.verify().unwrap();
    let again = fresh.export(&child).unwrap();
    let (a, b) = (ranked(&again), ranked(&archive));
    for key in a.as_object().unwrap().keys() {
        assert_eq!(a[key], b[key], "re-exported {key} differs");
    }
    let len = fresh.journal_len();
    fresh.import(&archive).unwrap();
    assert_eq!(fresh.journal_len(), len, "importing twice should add nothing");
    assert!(fresh.avatar(&bystander).is_err());
}

/// Archive JSON with journal positions replaced by their order.
fn ranked(archive: &storyecho_core::store::FamilyArchive) -> serde_json::Value {
    let mut v = serde_json::to_value(archive).unwrap();
    let mut seqs: Vec<u64> = archive.episodes.iter().filter_map(|e| e.approved_seq).collect();
    seqs.sort_unstable();
    for ep in v["episodes"].as_array_mut().unwrap() {
        if let Some(seq) = ep["approved_seq"].as_u64() {
            ep["approved_seq"] = seqs.binary_search(&seq).unwrap().into();
        }
    }
    v
}
