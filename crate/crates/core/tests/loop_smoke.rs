use std::sync::Arc;

use storyecho_core::config::Config;
use storyecho_core::demo::{run_scenario, DemoOptions, DirectDriver};
use storyecho_core::engine::{Clock, Engine};
use storyecho_core::pipeline::MockProvider;
use storyecho_core::store::Store;

#[test]
fn demo_runs_directly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::default();
    let store = Store::open(dir.path().join("j.jsonl")).unwrap();
    let pipeline = cfg.pipeline_with(Arc::new(MockProvider::new(7))).unwrap();
    let engine = Engine::new(store, pipeline, cfg.constraints.clone(), Clock::stepped(1_000, 1)).unwrap();
    let out = run_scenario(&mut DirectDriver { engine: &engine }, &DemoOptions::default(), &cfg.constraints).unwrap();
    println!("{}", out.transcript);
    engine.read().verify().unwrap();
}
