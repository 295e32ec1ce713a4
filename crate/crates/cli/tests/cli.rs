use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use storyecho_core::config::Config;
use storyecho_core::engine::Clock;
use storyecho_core::pipeline::MockProvider;
use storyecho_core::store::FamilyArchive;
use storyecho_core::validate::ValidationReport;
use storyecho_server::client::ApiClient;
use storyecho_server::{ApiError, AppState, BackgroundServer};
use storyecho_testkit::corpus::valid_episodes;
use storyecho_testkit::mutants::{all_mutants, suite_constraints, Subject};

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Env { dir: tempfile::tempdir().unwrap() }
    }

    fn store(&self) -> PathBuf {
        self.dir.path().join("store.journal")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_storyecho"))
            .arg("--store")
            .arg(self.store())
            .args(args)
            .env_remove("RUST_LOG")
            .output()
            .unwrap()
    }

    fn file(&self, name: &str, bytes: &[u8]) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let env = Env::new();
    let good = env.file("good.json", &serde_json::to_vec(&valid_episodes()[0]).unwrap());
    let out = env.run(&["validate", arg(&good)]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let report: ValidationReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report.ok);

    let two_choices = all_mutants()
        .into_iter()
        .find(|m| m.label.starts_with("two choice pages"))
        .and_then(|m| match m.subject {
            Subject::Episode(e) => Some(e),
            _ => None,
        })
        .unwrap();
    let bad = env.file("bad.json", &serde_json::to_vec(&two_choices).unwrap());
    let out = env.run(&["validate", arg(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("ChoiceBudgetExceeded"));

    let junk = env.file("junk.json", b"{\"episode_id\": ");
    assert_eq!(env.run(&["validate", arg(&junk)]).status.code(), Some(2));
    let missing = env.dir.path().join("nope.json");
    assert_eq!(env.run(&["validate", arg(&missing)]).status.code(), Some(2));
}

#[test]
fn validate_agrees_with_the_api_on_every_episode_mutant() {
    let env = Env::new();
    let mut cfg = Config::default();
    cfg.constraints = suite_constraints();
    cfg.store.path = env.dir.path().join("server.journal");
    let config_path = env.file("suite.toml", toml::to_string(&cfg).unwrap().as_bytes());

    let engine = Arc::new(cfg.open_engine(Arc::new(MockProvider::new(1)), Clock::stepped(1, 1)).unwrap());
    let token = engine.issue_token("ops", b"k").unwrap();
    let server = BackgroundServer::start(AppState::new(engine, 1), "127.0.0.1:0").unwrap();
    let client = ApiClient::new(server.base_url(), Some(token));

    let mut payloads: Vec<Vec<u8>> = valid_episodes().iter().map(|e| serde_json::to_vec(e).unwrap()).collect();
    for m in all_mutants() {
        if let Subject::Episode(e) = m.subject {
            payloads.push(serde_json::to_vec(&e).unwrap());
        }
    }
    payloads.push(b"[1, 2".to_vec());
    payloads.push(br#"{"surprise": true}"#.to_vec());

    for (i, body) in payloads.iter().enumerate() {
        let file = env.file(&format!("p{i}.json"), body);
        let cli = env.run(&["--config", arg(&config_path), "validate", arg(&file)]);
        let api = client.post_bytes("/validate/episode", "application/json", body, None).unwrap();
        match cli.status.code() {
            Some(0) => {
                assert_eq!(api.status, 200, "payload {i}");
                let a: ValidationReport = serde_json::from_slice(&api.body).unwrap();
                let c: ValidationReport = serde_json::from_str(&stdout(&cli)).unwrap();
                assert_eq!(a, c, "payload {i}");
            }
            Some(1) => {
                assert_eq!(api.status, 422, "payload {i}");
                let a: ApiError = serde_json::from_slice(&api.body).unwrap();
                let c: ValidationReport = serde_json::from_str(&stdout(&cli)).unwrap();
                assert_eq!(a.report, Some(c), "payload {i}");
            }
            Some(2) => {
                assert_eq!(api.status, 422, "payload {i}");
                let a: ApiError = serde_json::from_slice(&api.body).unwrap();
                assert!(a.report.is_none());
                assert!(stdout(&cli).starts_with(&a.code), "payload {i}: {} vs {}", stdout(&cli), a.code);
            }
            other => panic!("payload {i}: exit {other:?}"),
        }
    }
    server.shutdown();
}

#[test]
fn demo_loop_is_reproducible_across_processes() {
    let env = Env::new();
    let a = env.run(&["--seed", "7", "demo-loop", "--food", "西兰花", "--self-rating", "8"]);
    let b = env.run(&["--seed", "7", "demo-loop", "--food", "西兰花", "--self-rating", "8"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.contains("variant=positive"), "{text}");
    assert!(text.contains("avatar=happy"), "{text}");
    assert!(text.contains("final state=EndingReady"), "{text}");
    assert!(!env.store().exists(), "the scratch demo must not touch the configured store");

    let other_seed = env.run(&["--seed", "8", "demo-loop"]);
    assert_eq!(other_seed.status.code(), Some(0));
    assert_ne!(other_seed.stdout, a.stdout);
}

#[test]
fn low_rating_gives_the_gentle_ending() {
    let env = Env::new();
    let out = env.run(&["demo-loop", "--self-rating", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("variant=gentle"), "{text}");
    assert!(text.contains("avatar=sad-but-hopeful"), "{text}");
}

#[test]
fn out_of_range_rating_fails_before_generation() {
    let env = Env::new();
    for rating in ["11", "0", "-3"] {
        let out = env.run(&["demo-loop", "--self-rating", rating, "--persist"]);
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains("RangeError"), "{}", stderr(&out));
        assert!(!env.store().exists() || std::fs::read(env.store()).unwrap().is_empty());
    }
}

#[test]
fn real_provider_needs_an_explicit_opt_in() {
    let env = Env::new();
    let out = env.run(&["--provider", "real", "demo-loop"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--allow-real"), "{}", stderr(&out));
}

#[test]
fn export_covers_fresh_children_demo_runs_and_unknown_ids() {
    let env = Env::new();
    let out = env.run(&["export", "child_9999"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ChildNotFound"), "{}", stderr(&out));

    let child = stdout(&env.run(&["new-child", "乐乐"])).trim().to_string();
    let archive: FamilyArchive = serde_json::from_str(&stdout(&env.run(&["export", &child]))).unwrap();
    assert_eq!(archive.avatar.nickname, "乐乐");
    assert!(archive.sessions.is_empty() && archive.episodes.is_empty() && archive.frameworks.is_empty());

    let demo = env.run(&["demo-loop", "--persist"]);
    assert_eq!(demo.status.code(), Some(0), "{}", stderr(&demo));
    let demo_child = stdout(&demo).lines().next().unwrap().split_whitespace().nth(1).unwrap().to_string();
    let file = env.dir.path().join("archive.json");
    let out = env.run(&["export", &demo_child, "--out", arg(&file)]);
    assert_eq!(out.status.code(), Some(0));
    let archive: FamilyArchive = serde_json::from_slice(&std::fs::read(&file).unwrap()).unwrap();
    assert_eq!(archive.sessions.len(), 1);
    assert_eq!(archive.sessions[0].state.to_string(), "EndingReady");
    assert_eq!(archive.episodes.len(), 2);
    assert_eq!(archive.feedback.len(), 1);
}

#[test]
fn offline_generation_and_session_admin() {
    let env = Env::new();
    let child = stdout(&env.run(&["new-child", "朵朵"])).trim().to_string();
    let fw = env.run(&["gen-framework", &child, "--theme", "海边的小餐馆", "--mode", "realistic_everyday"]);
    assert_eq!(fw.status.code(), Some(0), "{}", stderr(&fw));
    let fw: serde_json::Value = serde_json::from_str(&stdout(&fw)).unwrap();
    assert_eq!(fw["story_mode"], "realistic_everyday");

    let bad_mode = env.run(&["gen-framework", &child, "--theme", "x", "--mode", "space_opera"]);
    assert_eq!(bad_mode.status.code(), Some(1));

    let ep = env.run(&["gen-episode", "--child", &child, "--food", "胡萝卜"]);
    assert_eq!(ep.status.code(), Some(0), "{}", stderr(&ep));
    let file = env.file("ep.json", &ep.stdout);
    assert_eq!(env.run(&["validate", arg(&file)]).status.code(), Some(0));

    let again = env.run(&["gen-episode", "--child", &child, "--food", "青椒"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("SessionAlreadyActive"), "{}", stderr(&again));

    let archive: FamilyArchive = serde_json::from_str(&stdout(&env.run(&["export", &child]))).unwrap();
    let sid = archive.sessions[0].session_id.to_string();
    let closed = env.run(&["close-session", &sid]);
    assert_eq!(closed.status.code(), Some(0), "{}", stderr(&closed));
    assert!(stdout(&closed).contains("closed"));
    let next = env.run(&["gen-episode", "--child", &child, "--food", "青椒"]);
    assert_eq!(next.status.code(), Some(0), "{}", stderr(&next));

    let token = stdout(&env.run(&["issue-token", "family-z"])).trim().to_string();
    assert_eq!(token.len(), 64);
    let other = stdout(&env.run(&["issue-token", "family-z"])).trim().to_string();
    assert_ne!(token, other);
}

#[test]
fn serve_answers_health_checks() {
    use std::io::{BufRead, BufReader};
    let env = Env::new();
    let mut child = Command::new(env!("CARGO_BIN_EXE_storyecho"))
        .arg("--store")
        .arg(env.store())
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let reply = ApiClient::new(base, None).get("/health");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.unwrap();
    assert_eq!(reply.status, 200);
    let body: serde_json::Value = serde_json::from_slice(&reply.body).unwrap();
    assert_eq!(body["mode"], "mock", "{body}");
}

#[test]
fn assets_can_be_deleted_by_the_operator() {
    use storyecho_core::pipeline::MediaBlob;
    let env = Env::new();
    let id = {
        let mut store = storyecho_core::store::Store::open(env.store()).unwrap();
        store.put_blob(&MediaBlob { media_type: "audio/wav".into(), bytes: b"RIFF voice".to_vec() }).unwrap()
    };
    let out = env.run(&["delete-asset", id.as_str()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let store = storyecho_core::store::Store::open(env.store()).unwrap();
    assert!(store.read_blob(&id).is_err());
    assert!(store.tables().deleted_assets.contains(&id));
    assert_eq!(env.run(&["delete-asset", "0000"]).status.code(), Some(1));
}
