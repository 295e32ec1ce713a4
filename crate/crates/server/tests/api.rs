use std::sync::Arc;

use serde_json::json;
use storyecho_core::config::Config;
use storyecho_core::demo::{run_scenario, DemoOptions, DirectDriver, LoopDriver};
use storyecho_core::domain::*;
use storyecho_core::engine::{Accepted, Clock, Engine, GenerateRequest, NewAvatar, NewFramework, NewSession};
use storyecho_core::pipeline::{JobStatus, MockProvider};
use storyecho_core::session::{SessionState, TfoSession};
use storyecho_core::store::StoredEpisode;
use storyecho_server::client::{ApiClient, HttpDriver};
use storyecho_server::{ApiError, AppState, BackgroundServer};

struct Harness {
    _dir: tempfile::TempDir,
    engine: Arc<Engine>,
    server: BackgroundServer,
    token: String,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.store.path = dir.path().join("store.jsonl");
        let engine = Arc::new(cfg.open_engine(Arc::new(MockProvider::new(7)), Clock::stepped(1_000, 1)).unwrap());
        let token = engine.issue_token("family-a", b"test").unwrap();
        let server = BackgroundServer::start(AppState::new(engine.clone(), 2), "127.0.0.1:0").unwrap();
        Harness { _dir: dir, engine, server, token }
    }

    fn client(&self) -> ApiClient {
        ApiClient::new(self.server.base_url(), Some(self.token.clone()))
    }

    fn anonymous(&self) -> ApiClient {
        ApiClient::new(self.server.base_url(), None)
    }

    fn driver(&self) -> HttpDriver {
        HttpDriver { client: self.client() }
    }
}

fn error_of(reply: &storyecho_server::client::Reply) -> ApiError {
    serde_json::from_slice(&reply.body).unwrap_or_else(|_| panic!("not an ApiError: {:?}", String::from_utf8_lossy(&reply.body)))
}

fn avatar_req(nick: &str) -> NewAvatar {
    NewAvatar {
        nickname: nick.into(),
        gender: Gender::Girl,
        clothing: "红色背带裤".into(),
        accessories: vec![],
        base_reference_image: None,
    }
}

/// An avatar, a framework and a session, ready to generate.
fn prepared(h: &Harness) -> (ChildAvatar, TfoSession) {
    let mut d = h.driver();
    let avatar = d.create_avatar(avatar_req("乐乐")).unwrap();
    d.create_framework(NewFramework {
        child_id: avatar.avatar_id.clone(),
        theme: "海边".into(),
        mode: StoryMode::RealisticEveryday,
    })
    .unwrap();
    let session = d
        .create_session(NewSession { child_id: avatar.avatar_id.clone(), target_food: "胡萝卜".into() })
        .unwrap();
    (avatar, session)
}

#[test]
fn health_reports_mock_mode_without_a_token() {
    let h = Harness::new();
    let reply = h.anonymous().get("/health").unwrap();
    assert_eq!(reply.status, 200);
    let v: serde_json::Value = reply.json().unwrap();
    assert_eq!(v["mode"], "mock");
}

#[test]
fn requests_without_a_valid_token_are_rejected() {
    let h = Harness::new();
    let reply = h.anonymous().post("/avatars", &avatar_req("乐乐")).unwrap();
    assert_eq!(reply.status, 401);
    let bad = ApiClient::new(h.server.base_url(), Some("nope".into()));
    assert_eq!(bad.get("/avatars/child_0001").unwrap().status, 401);
}

#[test]
fn empty_nickname_is_422_invariant_violation() {
    let h = Harness::new();
    let reply = h.client().post("/avatars", &avatar_req("   ")).unwrap();
    assert_eq!(reply.status, 422);
    assert_eq!(error_of(&reply).code, "InvariantViolation");
}

#[test]
fn unknown_body_keys_are_422_schema_violation() {
    let h = Harness::new();
    let reply = h
        .client()
        .post("/avatars", &json!({"nickname": "乐乐", "gender": "girl", "favourite": "red"}))
        .unwrap();
    assert_eq!(reply.status, 422);
    assert_eq!(error_of(&reply).code, "SchemaViolation");
}

#[test]
fn post_meal_before_the_story_is_409_illegal_transition() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let record = storyecho_core::demo::synthetic_record("胡萝卜", 8);
    let reply = h.client().post(&format!("/sessions/{}/post-meal", session.session_id), &record).unwrap();
    assert_eq!(reply.status, 409);
    assert_eq!(error_of(&reply).code, "IllegalTransition");
}

#[test]
fn second_active_session_is_409() {
    let h = Harness::new();
    let (avatar, _) = prepared(&h);
    let reply = h
        .client()
        .post("/sessions", &NewSession { child_id: avatar.avatar_id, target_food: "菠菜".into() })
        .unwrap();
    assert_eq!(reply.status, 409);
    assert_eq!(error_of(&reply).code, "SessionAlreadyActive");
}

#[test]
fn unknown_child_is_404() {
    let h = Harness::new();
    let reply = h.client().get("/avatars/child_9999").unwrap();
    assert_eq!(reply.status, 404);
    assert_eq!(error_of(&reply).code, "ChildNotFound");
    let reply = h.client().get("/children/child_9999/library").unwrap();
    assert_eq!(reply.status, 404);
}

#[test]
fn another_family_cannot_see_the_child() {
    let h = Harness::new();
    let (avatar, session) = prepared(&h);
    let other = h.engine.issue_token("family-b", b"other").unwrap();
    let c = ApiClient::new(h.server.base_url(), Some(other));
    assert_eq!(c.get(&format!("/avatars/{}", avatar.avatar_id)).unwrap().status, 404);
    assert_eq!(c.get(&format!("/sessions/{}", session.session_id)).unwrap().status, 404);
    assert_eq!(c.post_empty(&format!("/sessions/{}/generate", session.session_id)).unwrap().status, 404);
}

#[test]
fn repeated_idempotency_key_does_not_duplicate() {
    let h = Harness::new();
    let (avatar, session) = prepared(&h);
    // Close the prepared session so a new one may be opened.
    h.engine.close_session(&session.session_id).unwrap();
    let body = serde_json::to_vec(&NewSession { child_id: avatar.avatar_id.clone(), target_food: "菠菜".into() }).unwrap();
    let c = h.client();
    let first = c.post_bytes("/sessions", "application/json", &body, Some("k-1")).unwrap();
    let second = c.post_bytes("/sessions", "application/json", &body, Some("k-1")).unwrap();
    assert_eq!(first.status, 201);
    assert_eq!(second.status, 201);
    assert_eq!(first.body, second.body);
    assert_eq!(h.engine.read().tables().sessions.len(), 2);

    // A different key is a different request and hits the single-session guard.
    let third = c.post_bytes("/sessions", "application/json", &body, Some("k-2")).unwrap();
    assert_eq!(third.status, 409);
}

#[test]
fn repeated_event_and_record_posts_are_not_duplicated() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let sid = session.session_id.clone();
    let mut d = h.driver();
    d.generate(&sid, GenerateRequest::default()).unwrap();
    d.review(&sid, storyecho_core::engine::ReviewRequest { decision: storyecho_core::engine::ReviewDecision::Approve, note: None })
        .unwrap();
    let ep = d.episode(&sid).unwrap();
    let tap = ep.episode.pages.iter().find(|p| p.interaction_type() == InteractionType::Tap).unwrap();
    let body = serde_json::to_vec(&json!({
        "page_id": tap.page_id,
        "event_key": tap.event_key().unwrap(),
        "payload": {"kind": "tap"}
    }))
    .unwrap();
    let c = h.client();
    let path = format!("/sessions/{sid}/events");
    for _ in 0..3 {
        assert_eq!(c.post_bytes(&path, "application/json", &body, Some("evt-1")).unwrap().status, 201);
    }
    assert_eq!(h.engine.read().interactions_for(&sid).len(), 1);

    let record = serde_json::to_vec(&storyecho_core::demo::synthetic_record("胡萝卜", 5)).unwrap();
    let path = format!("/sessions/{sid}/post-meal");
    let a = c.post_bytes(&path, "application/json", &record, Some("meal-1")).unwrap();
    let b = c.post_bytes(&path, "application/json", &record, Some("meal-1")).unwrap();
    assert_eq!(a.status, 202);
    assert_eq!(a.body, b.body);
    let accepted: Accepted = a.json().unwrap();
    for j in &accepted.jobs {
        c.wait_job(j).unwrap();
    }
    assert_eq!(h.engine.read().tables().records.len(), 1);
}

#[test]
fn interaction_errors_map_to_422_and_409() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let sid = session.session_id.clone();
    let mut d = h.driver();
    d.generate(&sid, GenerateRequest::default()).unwrap();
    let ep = d.episode(&sid).unwrap();
    let c = h.client();
    let path = format!("/sessions/{sid}/events");

    // Still under review: the reader may not log events yet.
    let choice = ep.episode.pages.iter().find(|p| p.interaction_type() == InteractionType::Choice).unwrap();
    let pick = |b: usize| {
        json!({
            "page_id": choice.page_id,
            "event_key": choice.event_key().unwrap(),
            "payload": {"kind": "choice_selected", "choice_branch": choice.branch_choices[b].next_page_id}
        })
    };
    assert_eq!(c.post(&path, &pick(0)).unwrap().status, 422);

    d.review(&sid, storyecho_core::engine::ReviewRequest { decision: storyecho_core::engine::ReviewDecision::Approve, note: None })
        .unwrap();
    let unknown = json!({"page_id": "page_01", "event_key": "no_such_key", "payload": {"kind": "tap"}});
    let reply = c.post(&path, &unknown).unwrap();
    assert_eq!(reply.status, 422);
    assert_eq!(error_of(&reply).code, "UnknownEventKey");

    assert_eq!(c.post(&path, &pick(0)).unwrap().status, 201);
    let reply = c.post(&path, &pick(1)).unwrap();
    assert_eq!(reply.status, 409);
    assert_eq!(error_of(&reply).code, "DuplicateChoice");
}

#[test]
fn ending_before_it_exists_is_409_not_ready() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let reply = h.client().get(&format!("/sessions/{}/ending", session.session_id)).unwrap();
    assert_eq!(reply.status, 409);
    assert_eq!(error_of(&reply).code, "NotReady");
}

#[test]
fn regeneration_makes_a_new_draft_and_counts_it() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let sid = session.session_id.clone();
    let mut d = h.driver();
    d.generate(&sid, GenerateRequest::default()).unwrap();
    let first = d.episode(&sid).unwrap();
    let s = d
        .review(
            &sid,
            storyecho_core::engine::ReviewRequest {
                decision: storyecho_core::engine::ReviewDecision::Regenerate,
                note: Some("多一点小动物".into()),
            },
        )
        .unwrap();
    assert_eq!(s.state, SessionState::ReviewPending);
    assert_eq!(s.regeneration_count, 1);
    let second = d.episode(&sid).unwrap();
    assert_ne!(first.episode.episode_id, second.episode.episode_id);
    assert_ne!(first.episode.pages, second.episode.pages);
    // Drafts that were never approved stay out of the child's history.
    assert!(h.engine.read().latest_episodes(&s.child_id, 3).unwrap().is_empty());
}

#[test]
fn generation_needs_a_framework() {
    let h = Harness::new();
    let mut d = h.driver();
    let avatar = d.create_avatar(avatar_req("乐乐")).unwrap();
    let session =
        d.create_session(NewSession { child_id: avatar.avatar_id, target_food: "胡萝卜".into() }).unwrap();
    let reply = h.client().post_empty(&format!("/sessions/{}/generate", session.session_id)).unwrap();
    assert_eq!(reply.status, 422);
    assert_eq!(error_of(&reply).code, "PreconditionFailed");
}

#[test]
fn assets_upload_fetch_and_speech() {
    let h = Harness::new();
    let c = h.client();
    let reply = c.post_bytes("/assets", "audio/wav", b"RIFF-voice", None).unwrap();
    assert_eq!(reply.status, 201);
    let r: serde_json::Value = reply.json().unwrap();
    let id = r["asset_id"].as_str().unwrap().to_string();
    let fetched = h.anonymous().get(&format!("/assets/{id}")).unwrap();
    assert_eq!(fetched.status, 200);
    assert_eq!(fetched.body, b"RIFF-voice");
    assert_eq!(h.anonymous().get(&format!("/assets/{}", "0".repeat(64))).unwrap().status, 404);
    let t: serde_json::Value = c.post_empty(&format!("/assets/{id}/transcript")).unwrap().json().unwrap();
    assert!(t["text"].as_str().unwrap().starts_with("录音片段"));

    let (_, session) = prepared(&h);
    let sid = session.session_id;
    h.driver().generate(&sid, GenerateRequest::default()).unwrap();
    let reply = c.post_empty(&format!("/sessions/{sid}/pages/page_01/speech")).unwrap();
    assert_eq!(reply.status, 201);
    let r: serde_json::Value = reply.json().unwrap();
    let audio = h.anonymous().get(&format!("/assets/{}", r["asset_id"].as_str().unwrap())).unwrap();
    assert!(audio.body.starts_with(b"RIFF"));
}

#[test]
fn validate_endpoint_matches_the_validator() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    h.driver().generate(&session.session_id, GenerateRequest::default()).unwrap();
    let ep: StoredEpisode = h.driver().episode(&session.session_id).unwrap();
    let c = h.client();
    let good = serde_json::to_vec(&ep.episode).unwrap();
    assert_eq!(c.post_bytes("/validate/episode", "application/json", &good, None).unwrap().status, 200);

    let mut bad = ep.episode.clone();
    bad.pages[3].page_text_cn = "好".into();
    let reply = c
        .post_bytes("/validate/episode", "application/json", &serde_json::to_vec(&bad).unwrap(), None)
        .unwrap();
    assert_eq!(reply.status, 422);
    let err = error_of(&reply);
    let report = err.report.expect("a report");
    assert!(report.codes().iter().any(|c| c.to_string() == "PageTooShort"), "{report:?}");

    let reply = c.post_bytes("/validate/episode", "application/json", b"{not json", None).unwrap();
    assert_eq!(reply.status, 422);
    assert_eq!(error_of(&reply).code, "ParseError");
}

#[test]
fn job_polling_reports_attempts() {
    let h = Harness::new();
    let (_, session) = prepared(&h);
    let accepted: Accepted =
        h.client().post_empty(&format!("/sessions/{}/generate", session.session_id)).unwrap().json().unwrap();
    let job = h.client().wait_job(&accepted.jobs[0]).unwrap();
    assert_eq!(job.status, JobStatus::AwaitingReview);
    assert_eq!(job.attempts, 1);
    assert!(job.last_report.unwrap().ok);
    assert_eq!(h.client().get("/jobs/job_9999").unwrap().status, 404);
}

#[test]
fn demo_over_http_matches_the_direct_path() {
    let h = Harness::new();
    let over_http = run_scenario(&mut h.driver(), &DemoOptions::default(), h.engine.constraints()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.store.path = dir.path().join("direct.jsonl");
    let direct_engine = cfg.open_engine(Arc::new(MockProvider::new(7)), Clock::stepped(1_000, 1)).unwrap();
    let direct =
        run_scenario(&mut DirectDriver { engine: &direct_engine }, &DemoOptions::default(), &cfg.constraints).unwrap();

    assert_eq!(over_http.transcript, direct.transcript);
    assert_eq!(over_http.session.state, SessionState::EndingReady);
    assert_eq!(h.engine.read().tables().comparable(), direct_engine.read().tables().comparable());
    h.engine.read().verify().unwrap();
}
