//! Command implementations behind the `storyecho` binary.
//!
//! Every subcommand is a plain function returning its printable output, so
//! tests call them directly and the binary only parses flags and prints.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::RngExt;

use storyecho_core::config::Config;
use storyecho_core::demo::{run_scenario, DemoOptions, DemoOutcome, DirectDriver};
use storyecho_core::domain::*;
use storyecho_core::engine::{Clock, Engine, GenerateRequest, NewAvatar, NewFramework, NewSession};
use storyecho_core::pipeline::{select_ending_variant, GenerationProvider, MockProvider, ProviderMode};
use storyecho_core::store::FamilyArchive;
use storyecho_core::validate::ValidationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderFlag {
    Mock,
    Real,
}

#[derive(Debug, Parser)]
#[command(name = "storyecho", version, about = "StoryEcho operator tool")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Journal file, overriding the configuration.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderFlag>,
    /// Seed for the mock provider.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Check an episode file. Exit 0 when it passes, 1 on violations, 2 when
    /// it cannot be parsed.
    Validate { file: PathBuf },
    /// Run one full loop against a scratch store and print the transcript.
    DemoLoop {
        #[arg(long, default_value = "西兰花")]
        food: String,
        #[arg(long, default_value_t = 8, allow_negative_numbers = true)]
        self_rating: i64,
        /// Permit the real provider. Without it the demo only runs on the mock.
        #[arg(long)]
        allow_real: bool,
        /// Write into the configured store instead of a scratch one.
        #[arg(long)]
        persist: bool,
    },
    /// Write everything stored about a child to one JSON archive.
    Export {
        child_id: String,
        /// Output file; standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Close a session that will not be finished.
    CloseSession { session_id: String },
    /// Create a child avatar.
    NewChild {
        nickname: String,
        #[arg(long, default_value = "黄色雨衣")]
        clothing: String,
        #[arg(long)]
        family: Option<String>,
    },
    /// Generate a story framework for a child.
    GenFramework {
        child_id: String,
        #[arg(long)]
        theme: String,
        #[arg(long, default_value = "light_fantasy_familiar")]
        mode: String,
    },
    /// Generate the main episode for a session, opening one if needed.
    GenEpisode {
        #[arg(long, conflicts_with_all = ["child", "food"])]
        session: Option<String>,
        #[arg(long, requires = "food")]
        child: Option<String>,
        #[arg(long)]
        food: Option<String>,
    },
    /// Issue a bearer token for a family.
    IssueToken { family: String },
    /// Remove a stored media asset such as a voice recording.
    DeleteAsset { asset_id: String },
}

/// Flags layered over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub config: Config,
    pub verbose: bool,
}

impl CliConfig {
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(store) = &cli.store {
            config.store.path = store.clone();
        }
        if let Some(p) = cli.provider {
            config.provider.mode = match p {
                ProviderFlag::Mock => ProviderMode::Mock,
                ProviderFlag::Real => ProviderMode::Real,
            };
        }
        if let Some(seed) = cli.seed {
            config.provider.seed = seed;
        }
        config.check()?;
        Ok(CliConfig { config, verbose: cli.verbose })
    }

    fn engine(&self) -> anyhow::Result<Engine> {
        let provider = self.config.provider()?;
        Ok(self.config.open_engine(provider, Clock::System)?)
    }
}

/// Output of a command and the process exit code it calls for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub code: i32,
    pub text: String,
}

impl Output {
    fn ok(text: impl Into<String>) -> Self {
        Output { code: 0, text: text.into() }
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<Output> {
    let cfg = CliConfig::resolve(cli)?;
    match &cli.command {
        Command::Serve { bind } => {
            cmd_serve(&cfg, bind.as_deref())?;
            Ok(Output::ok(""))
        }
        Command::Validate { file } => Ok(cmd_validate(&cfg.config, file)),
        Command::DemoLoop { food, self_rating, allow_real, persist } => {
            let out = cmd_demo_loop(&cfg.config, food, *self_rating, *allow_real, *persist)?;
            Ok(Output::ok(out.transcript))
        }
        Command::Export { child_id, out } => {
            let archive = cmd_export(&cfg.config, &ChildId::new(child_id.as_str()))?;
            let text = serde_json::to_string_pretty(&archive)?;
            match out {
                Some(path) => {
                    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
                    Ok(Output::ok(format!("wrote {}\n", path.display())))
                }
                None => Ok(Output::ok(text + "\n")),
            }
        }
        Command::CloseSession { session_id } => {
            let s = cfg.engine()?.close_session(&SessionId::new(session_id.as_str()))?;
            Ok(Output::ok(format!("session {} closed in state {}\n", s.session_id, s.state)))
        }
        Command::NewChild { nickname, clothing, family } => {
            let a = cfg.engine()?.create_avatar(
                NewAvatar {
                    nickname: nickname.clone(),
                    gender: Gender::Unspecified,
                    clothing: clothing.clone(),
                    accessories: Vec::new(),
                    base_reference_image: None,
                },
                family.as_deref(),
            )?;
            Ok(Output::ok(format!("{}\n", a.avatar_id)))
        }
        Command::GenFramework { child_id, theme, mode } => {
            let fw = cmd_gen_framework(&cfg.engine()?, &ChildId::new(child_id.as_str()), theme, mode.parse()?)?;
            Ok(Output::ok(serde_json::to_string_pretty(&fw)? + "\n"))
        }
        Command::GenEpisode { session, child, food } => {
            let engine = cfg.engine()?;
            let target = match (session, child, food) {
                (Some(s), _, _) => EpisodeTarget::Session(SessionId::new(s.as_str())),
                (None, Some(c), Some(f)) => EpisodeTarget::NewSession { child: ChildId::new(c.as_str()), food: f.clone() },
                _ => bail!("pass either --session or both --child and --food"),
            };
            let ep = cmd_gen_episode(&engine, target)?;
            Ok(Output::ok(serde_json::to_string_pretty(&ep)? + "\n"))
        }
        Command::DeleteAsset { asset_id } => {
            cfg.engine()?.delete_asset(&AssetId::new(asset_id.as_str()))?;
            Ok(Output::ok(format!("deleted {asset_id}\n")))
        }
        Command::IssueToken { family } => {
            let entropy: [u8; 32] = rand::rng().random();
            let token = cfg.engine()?.issue_token(family, &entropy)?;
            Ok(Output::ok(token + "\n"))
        }
    }
}

pub fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn cmd_serve(cfg: &CliConfig, bind: Option<&str>) -> anyhow::Result<()> {
    let engine = Arc::new(cfg.engine()?);
    let bind = bind.unwrap_or(&cfg.config.server.bind).to_string();
    let state = storyecho_server::AppState::new(engine, cfg.config.server.job_parallelism);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        storyecho_server::serve(state, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    })
}

/// Parses and checks an episode file. The report goes into the output text.
pub fn cmd_validate(config: &Config, file: &Path) -> Output {
    let bytes = match std::fs::read(file) {
        Ok(b) => b,
        Err(e) => return Output { code: 2, text: format!("cannot read {}: {e}\n", file.display()) },
    };
    match storyecho_core::engine::validate_episode_bytes(&bytes, &config.constraints) {
        Ok(report) => Output { code: if report.ok { 0 } else { 1 }, text: render_report(&report) },
        Err(e) => Output { code: 2, text: format!("{}: {e}\n", e.code()) },
    }
}

fn render_report(report: &ValidationReport) -> String {
    let mut text = serde_json::to_string_pretty(report).unwrap_or_default();
    text.push('\n');
    text
}

/// Runs the whole loop once. Unless `persist` is set, the store is a
/// scratch directory that is removed afterwards.
pub fn cmd_demo_loop(
    config: &Config,
    food: &str,
    self_rating: i64,
    allow_real: bool,
    persist: bool,
) -> anyhow::Result<DemoOutcome> {
    check_rating(self_rating)?;
    if config.provider.mode == ProviderMode::Real && !allow_real {
        bail!("the demo loop uses the mock provider; pass --allow-real to spend real generation calls");
    }
    let provider: Arc<dyn GenerationProvider> = match config.provider.mode {
        ProviderMode::Mock => Arc::new(MockProvider::new(config.provider.seed)),
        ProviderMode::Real => config.provider()?,
    };
    demo_with_provider(config, food, self_rating, persist, provider)
}

/// The demo loop over a caller-supplied provider.
pub fn demo_with_provider(
    config: &Config,
    food: &str,
    self_rating: i64,
    persist: bool,
    provider: Arc<dyn GenerationProvider>,
) -> anyhow::Result<DemoOutcome> {
    let opts = DemoOptions { food: food.to_string(), self_rating, ..DemoOptions::default() };
    check_rating(self_rating)?;
    let scratch;
    let mut config = config.clone();
    if !persist {
        scratch = tempfile::tempdir()?;
        config.store.path = scratch.path().join("demo.journal");
        config.store.asset_dir = None;
    }
    let engine = config.open_engine(provider, Clock::stepped(1_000, 1))?;
    let outcome = run_scenario(&mut DirectDriver { engine: &engine }, &opts, &config.constraints)
        .map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    Ok(outcome)
}

fn check_rating(self_rating: i64) -> anyhow::Result<()> {
    select_ending_variant(self_rating).map_err(|e| anyhow::anyhow!("RangeError: {e}"))?;
    Ok(())
}

pub fn cmd_export(config: &Config, child: &ChildId) -> anyhow::Result<FamilyArchive> {
    let store = storyecho_core::store::Store::open_with_assets(&config.store.path, config.asset_dir())?;
    store.export(child).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))
}

pub fn cmd_gen_framework(engine: &Engine, child: &ChildId, theme: &str, mode: StoryMode) -> anyhow::Result<StoryFramework> {
    let task = engine.enqueue_framework(NewFramework { child_id: child.clone(), theme: theme.to_string(), mode })?;
    let jobs = task.job_ids();
    engine.run(task)?;
    let job = engine.job(&jobs[0])?;
    let id = job.output_ref.context("framework job finished without output")?;
    Ok(engine.framework(&FrameworkId::new(id))?)
}

#[derive(Debug, Clone)]
pub enum EpisodeTarget {
    Session(SessionId),
    NewSession { child: ChildId, food: String },
}

pub fn cmd_gen_episode(engine: &Engine, target: EpisodeTarget) -> anyhow::Result<Episode> {
    let sid = match target {
        EpisodeTarget::Session(s) => s,
        EpisodeTarget::NewSession { child, food } => {
            engine.create_session(NewSession { child_id: child, target_food: food })?.session_id
        }
    };
    let task = engine.start_generation(&sid, GenerateRequest::default())?;
    engine.run(task)?;
    Ok(engine.episode(&sid)?.episode)
}
