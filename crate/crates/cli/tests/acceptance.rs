//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit when
//! any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use storyecho_cli::demo_with_provider;
use storyecho_core::config::Config;
use storyecho_core::demo::{run_scenario, DemoOptions, DirectDriver};
use storyecho_core::domain::*;
use storyecho_core::engine::Clock;
use storyecho_core::pipeline::{network_request_count, AvatarFeedbackState, MockProvider, ProviderMode, RecordingProvider};
use storyecho_core::session::SessionState;
use storyecho_core::validate::validate_episode;
use storyecho_server::client::{ApiClient, HttpDriver};
use storyecho_server::{AppState, BackgroundServer};
use storyecho_testkit::checks::{core_criteria, Outcome};

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome { name, passed, detail, elapsed }
}

fn demo_end_to_end() -> Outcome {
    timed("end-to-end demo loop", || {
        let start = Instant::now();
        let net_before = network_request_count();
        let cfg = Config::default();
        let mut transcripts = Vec::new();
        let mut calls = 0;
        for _ in 0..2 {
            let provider = Arc::new(RecordingProvider::new(MockProvider::new(cfg.provider.seed)));
            let out = demo_with_provider(&cfg, "西兰花", 8, false, provider.clone()).map_err(|e| format!("{e:#}"))?;
            if provider.calls().iter().any(|c| c.mode != ProviderMode::Mock) {
                return Err("a call reached a non-mock provider".into());
            }
            calls += provider.count();
            if out.session.state != SessionState::EndingReady {
                return Err(format!("session ended in {}", out.session.state));
            }
            let (main, ending) = (&out.main.episode, &out.ending.episode);
            if main.pages.len() != 12 || ending.pages.len() != 4 {
                return Err(format!("page counts {} and {}", main.pages.len(), ending.pages.len()));
            }
            for (label, ep) in [("main", main), ("ending", ending)] {
                let report = validate_episode(ep, &cfg.constraints);
                if !report.ok {
                    return Err(format!("{label} episode invalid: {}", report.summary()));
                }
            }
            if ending.ending_variant != Some(EndingVariant::Positive) || out.feedback.avatar_state != AvatarFeedbackState::Happy {
                return Err(format!("rating 8 gave {:?} with {}", ending.ending_variant, out.feedback.avatar_state));
            }
            transcripts.push(out.transcript);
        }
        let elapsed = start.elapsed();
        let network = network_request_count() - net_before;
        if transcripts[0] != transcripts[1] {
            return Err("transcripts differ between runs".into());
        }
        if network != 0 {
            return Err(format!("{network} network request(s)"));
        }
        if elapsed >= Duration::from_secs(10) {
            return Err(format!("two runs took {elapsed:?}"));
        }
        Ok(format!(
            "FoodSelected->EndingReady, 12+4 pages valid, {} transcript bytes identical, {} mock calls, 0 network",
            transcripts[0].len(),
            calls
        ))
    })
}

fn api_matches_direct() -> Outcome {
    timed("api vs direct store", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = Config::default();
        cfg.store.path = dir.path().join("http.jsonl");
        let served = Arc::new(
            cfg.open_engine(Arc::new(MockProvider::new(7)), Clock::stepped(1_000, 1)).map_err(|e| e.to_string())?,
        );
        let token = served.issue_token("acceptance", b"fixed").map_err(|e| e.to_string())?;
        let server = BackgroundServer::start(AppState::new(served.clone(), 2), "127.0.0.1:0").map_err(|e| e.to_string())?;
        let mut http = HttpDriver { client: ApiClient::new(server.base_url(), Some(token)) };

        cfg.store.path = dir.path().join("direct.jsonl");
        let direct = cfg.open_engine(Arc::new(MockProvider::new(7)), Clock::stepped(1_000, 1)).map_err(|e| e.to_string())?;

        let mut compared = 0;
        for (food, rating) in [("西兰花", 8), ("胡萝卜", 2), ("青椒", 5)] {
            let opts = DemoOptions { food: food.into(), self_rating: rating, ..DemoOptions::default() };
            let a = run_scenario(&mut http, &opts, &cfg.constraints).map_err(|e| format!("http: {e}"))?;
            let b = run_scenario(&mut DirectDriver { engine: &direct }, &opts, &cfg.constraints)
                .map_err(|e| format!("direct: {e}"))?;
            if a.transcript != b.transcript {
                return Err(format!("transcripts differ for {food}"));
            }
            compared += 1;
        }
        server.shutdown();
        if served.read().tables().comparable() != direct.read().tables().comparable() {
            return Err("stores differ beyond timestamps and journal positions".into());
        }
        served.read().verify().map_err(|e| e.to_string())?;
        Ok(format!("{compared} loops, stores equal modulo timestamps"))
    })
}

fn main() {
    let mut outcomes = core_criteria();
    outcomes.push(demo_end_to_end());
    outcomes.push(api_matches_direct());
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
