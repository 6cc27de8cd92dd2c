//! Command implementations behind the `shail` binary.

pub mod render;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use shail_core::baselines::{ModelKind, PolicyKind};
use shail_core::checkpoint::{Checkpoint, ModelState};
use shail_core::config::RunConfig;
use shail_core::evaluation::{evaluate, format_table, summarize_runs, EvalReport};
use shail_core::learning::bc::bc_train;
use shail_core::learning::env::SimEnv;
use shail_core::learning::gail::{gail_continue, gail_init};
use shail_core::learning::shail::{shail_continue, shail_init};
use shail_core::learning::{ExpertSet, IterationMetrics};
use shail_core::options::enumerate_options;
use shail_core::scenario::{expert_transitions, parse_tracks, synth_roundabout, TrackDataset};
use shail_core::simulator::{parse_replay_log, SimConfig, Simulator};
use shail_core::{Error, Result};

/// Environment variable that replaces the default output root (the working directory).
pub const OUTPUT_ROOT_ENV: &str = "SHAIL_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "shail",
    version,
    about = "Safety-aware hierarchical imitation learning for roundabout driving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic roundabout dataset as CSV.
    GenSynthetic(GenArgs),
    /// Train bc, gail, hail or shail.
    Train(TrainArgs),
    /// Evaluate built-in models or checkpoints.
    Evaluate(EvalArgs),
    /// Render a replay log to SVG frames.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Run config whose [data.synthetic] table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub arrival_rate: Option<f64>,
    #[arg(long)]
    pub max_vehicles: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.kind.
    #[arg(long, value_parser = ["bc", "gail", "hail", "shail"])]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the iteration count (epochs for bc).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the run directory's latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Keep a numbered checkpoint every N iterations besides latest.json.
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in models to evaluate (expert_replay, idm).
    #[arg(long = "kind")]
    pub kinds: Vec<String>,
    /// Checkpoint files; may be repeated.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-episode replay logs.
    #[arg(long)]
    pub replays: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Replay log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Radius of the drawn observation sectors (m).
    #[arg(long, default_value_t = 50.0)]
    pub sector_radius: f64,
}

/// Resolve an output path against the output root.
pub fn output_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<TrackDataset> {
    match (&cfg.data.dataset, &cfg.data.synthetic) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", p.display())))?;
            parse_tracks(&text)
        }
        (None, Some(params)) => synth_roundabout(params),
        _ => Err(Error::Config("exactly one of data.dataset and data.synthetic must be set".into())),
    }
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenSynthetic(a) => cmd_gen_synthetic(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

pub fn cmd_gen_synthetic(a: &GenArgs) -> Result<String> {
    let cfg = load_config(a.config.as_deref())?;
    let mut params = cfg.data.synthetic.clone().unwrap_or_default();
    if let Some(seed) = a.seed {
        params.seed = seed;
    }
    if let Some(r) = a.arrival_rate {
        params.arrival_rate = r;
    }
    if let Some(m) = a.max_vehicles {
        params.max_vehicles = Some(m);
    }
    let ds = synth_roundabout(&params)?;
    let out = output_path(&a.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, ds.to_csv())?;
    let frames: usize = ds.tracks.values().map(|t| t.frames.len()).sum();
    Ok(format!("wrote {}: {} tracks, {} frames", out.display(), ds.tracks.len(), frames))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Keep only metric lines for iterations before `upto`.
fn truncate_metrics(path: &Path, upto: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines() {
        let m: IterationMetrics = serde_json::from_str(line)?;
        if m.iteration < upto {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

struct RunDir {
    root: PathBuf,
    every: usize,
}

impl RunDir {
    fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    fn latest(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.json")
    }

    fn save(&self, ck: &Checkpoint, final_: bool) -> Result<()> {
        ck.save(&self.latest())?;
        let it = ck.rng.iteration;
        if final_ || (self.every > 0 && it.is_multiple_of(self.every)) {
            ck.save(&self.root.join("checkpoints").join(format!("iter_{it:05}.json")))?;
        }
        Ok(())
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = &a.kind {
        cfg.train.kind = ModelKind::parse(k)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.train.bc.epochs = n;
        cfg.train.gail.iterations = n;
        cfg.train.shail.iterations = n;
    }
    if !cfg.train.kind.is_trainable() {
        return Err(Error::Config(format!("`{}` is not a trainable model kind", cfg.train.kind.name())));
    }
    cfg.validate()?;
    let cfg = cfg.resolved();
    let dir = RunDir {
        root: output_path(&a.out),
        every: a.checkpoint_every,
    };
    fs::create_dir_all(dir.root.join("checkpoints"))?;
    let cfg_path = dir.root.join("config.toml");
    let cfg_text = cfg.to_toml()?;
    let resume = if a.resume && dir.latest().exists() {
        if let Ok(stored) = RunConfig::load(&cfg_path) {
            let mut a_cfg = stored.clone();
            let mut b_cfg = cfg.clone();
            for c in [&mut a_cfg, &mut b_cfg] {
                c.train.bc.epochs = 0;
                c.train.gail.iterations = 0;
                c.train.shail.iterations = 0;
            }
            if a_cfg != b_cfg {
                return Err(Error::Config("resume config differs from the stored run config".into()));
            }
        }
        Some(Checkpoint::load(&dir.latest())?)
    } else {
        if dir.metrics().exists() {
            fs::remove_file(dir.metrics())?;
        }
        None
    };
    fs::write(&cfg_path, &cfg_text)?;

    let dataset = Arc::new(load_dataset(&cfg)?);
    let transitions = expert_transitions(&dataset, &cfg.sim.encoder);
    let expert = ExpertSet::from_transitions(&transitions);
    let kind = cfg.train.kind;
    let seed = cfg.seed;

    if kind == ModelKind::Bc {
        let r = bc_train(&expert, &cfg.train.bc)?;
        fs::write(dir.metrics(), "")?;
        for (epoch, (tl, vl)) in r.train_loss.iter().zip(&r.val_loss).enumerate() {
            append_line(
                &dir.metrics(),
                &serde_json::json!({"epoch": epoch, "train_loss": tl, "val_loss": vl}).to_string(),
            )?;
        }
        dir.save(&Checkpoint::new(kind, seed, ModelState::Bc(r)), true)?;
        return Ok(format!(
            "trained bc on {} expert transitions -> {}",
            expert.len(),
            dir.root.display()
        ));
    }

    let sim = Arc::new(Simulator::new(
        dataset,
        SimConfig {
            evaluation: false,
            ..cfg.sim
        },
    ));
    let max_steps = cfg.train.max_episode_steps;
    let factory = |_w: usize| SimEnv::new(sim.clone(), max_steps);
    let metrics_path = dir.metrics();

    let iterations = match kind {
        ModelKind::Gail => {
            let state = match resume {
                Some(ck) => match ck.model {
                    ModelState::Gail(s) => s,
                    _ => return Err(Error::Checkpoint("checkpoint does not hold a gail model".into())),
                },
                None => gail_init(&expert, &cfg.train.gail)?,
            };
            truncate_metrics(&metrics_path, state.iteration)?;
            if state.iteration == 0 {
                dir.save(
                    &Checkpoint::new(kind, seed, ModelState::Gail(state.clone())),
                    cfg.train.gail.iterations == 0,
                )?;
            }
            let n = cfg.train.gail.iterations;
            let end = gail_continue(state, &factory, &expert, &cfg.train.gail, |s, m| {
                append_line(&metrics_path, &serde_json::to_string(m)?)?;
                dir.save(&Checkpoint::new(kind, seed, ModelState::Gail(s.clone())), s.iteration == n)
            })?;
            end.iteration
        }
        _ => {
            let state = match resume {
                Some(ck) => match ck.model {
                    ModelState::Hierarchical(s) if s.mode == cfg.train.shail.mode => s,
                    _ => return Err(Error::Checkpoint(format!("checkpoint does not hold a {} model", kind.name()))),
                },
                None => shail_init(&expert, &cfg.train.shail)?,
            };
            truncate_metrics(&metrics_path, state.iteration)?;
            if state.iteration == 0 {
                dir.save(
                    &Checkpoint::new(kind, seed, ModelState::Hierarchical(state.clone())),
                    cfg.train.shail.iterations == 0,
                )?;
            }
            let n = cfg.train.shail.iterations;
            let end = shail_continue(state, &factory, &expert, &cfg.train.shail, |s, m| {
                append_line(&metrics_path, &serde_json::to_string(m)?)?;
                dir.save(&Checkpoint::new(kind, seed, ModelState::Hierarchical(s.clone())), s.iteration == n)
            })?;
            end.iteration
        }
    };
    Ok(format!(
        "trained {} for {iterations} iterations -> {}",
        kind.name(),
        dir.root.display()
    ))
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport, replays: bool) -> Result<()> {
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)? + "\n")?;
    if replays {
        let rdir = dir.join("replays");
        fs::create_dir_all(&rdir)?;
        for ep in &report.episodes {
            let text: String = ep.policy.replay.iter().map(|r| r.to_json_line() + "\n").collect();
            fs::write(rdir.join(format!("{stem}_ep{:04}.jsonl", ep.index)), text)?;
        }
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvalArgs) -> Result<String> {
    let cfg = load_config(a.config.as_deref())?.resolved();
    if a.kinds.is_empty() && a.checkpoints.is_empty() {
        return Err(Error::Config("nothing to evaluate: pass --kind or --checkpoint".into()));
    }
    let options = enumerate_options(&cfg.train.shail.option_speeds, &cfg.train.shail.option_times)?;
    let mut policies: Vec<(String, PolicyKind)> = Vec::new();
    for k in &a.kinds {
        let policy = match ModelKind::parse(k)? {
            ModelKind::ExpertReplay => PolicyKind::ExpertReplay,
            ModelKind::Idm => PolicyKind::Idm,
            other => return Err(Error::Config(format!("`{}` needs a checkpoint", other.name()))),
        };
        policies.push((k.clone(), policy));
    }
    for (i, p) in a.checkpoints.iter().enumerate() {
        let ck = Checkpoint::load(p)?;
        policies.push((format!("{}_{i}", ck.kind.name()), ck.policy(Some(&options))?));
    }
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let dataset = Arc::new(load_dataset(&cfg)?);
    let out = output_path(&a.out);
    fs::create_dir_all(&out)?;
    let mut eval_cfg = cfg.eval.clone();
    eval_cfg.record_replays = a.replays;
    if let Some(n) = a.episodes {
        eval_cfg.n_episodes = n;
    }
    let mut by_kind: BTreeMap<usize, (String, Vec<EvalReport>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (label, policy) in &policies {
        for &seed in &seeds {
            eval_cfg.seed = seed;
            let report = evaluate(policy, dataset.clone(), cfg.sim, &eval_cfg)?;
            write_report(&out, &format!("{label}_seed{seed}"), &report, a.replays)?;
            let name = policy.kind().name().to_string();
            let idx = match order.iter().position(|n| *n == name) {
                Some(i) => i,
                None => {
                    order.push(name.clone());
                    order.len() - 1
                }
            };
            by_kind.entry(idx).or_insert_with(|| (name, Vec::new())).1.push(report);
        }
    }
    let rows: Vec<_> = by_kind.values().map(|(_, reports)| summarize_runs(reports)).collect();
    let table = format_table(&rows);
    fs::write(out.join("summary.txt"), &table)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    Ok(table)
}

pub fn cmd_render(a: &RenderArgs) -> Result<String> {
    let text = fs::read_to_string(&a.log)?;
    let records = parse_replay_log(&text)?;
    let out = output_path(&a.out);
    let paths = render::render_log(&records, &out, a.sector_radius)?;
    Ok(format!("rendered {} frames -> {}", paths.len(), out.display()))
}
