//! The `mspr` command line.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when the
//! run itself fails.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agent::{load_checkpoint, save_checkpoint, train, Checkpoint, StepMetrics, TrainState, Trainer};
use crate::datagen::{self, collect, CollectConfig, OfflineDataset};
use crate::error::{Error, Result};
use crate::evalkit::{
    episode_trace, evaluate, goal_dyn_error_vs_success, latent_effective_rank, robustness_suite, summarize,
    value_error_map, AblationVariant, EpisodeTrace, GdynRow, RobustConfig, RobustRow, SummaryRow,
};
use crate::gcenv::{EnvId, EnvSpec, NUM_EVAL_TASKS};
use crate::ndmath::Tensor;
pub use config::{RunConfig, SEED_ENV};
pub use plot::{emit_plot, PlotKind};

#[derive(Parser, Debug)]
#[command(name = "mspr", version, about = "Multi-scale predictive representations for offline goal-conditioned RL")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect an offline dataset with the scripted expert.
    GenData(GenDataArgs),
    /// Train representation, critic and actor on a dataset.
    Train(TrainArgs),
    /// Success rates of a checkpoint on the fixed evaluation tasks.
    Eval(EvalArgs),
    /// Train and evaluate one ablation variant over several seeds.
    Ablate(AblateArgs),
    /// Dataset-fraction, noise and stitching sweeps.
    Robust(RobustArgs),
    /// Value-error map, episode traces, effective rank and goal-dynamics scatter.
    Diag(DiagArgs),
    /// Print a maze layout.
    Layout(LayoutArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Plain-text `key=value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env: Option<String>,
    /// Allow writing into an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of transitions to collect.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    fragment_cells: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from a checkpoint made under the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct RobustArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    transitions: Option<usize>,
    /// Dataset noise for the fraction and stitch protocols.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[command(flatten)]
    common: Common,
    /// Repeat for a goal-dynamics scatter over several checkpoints.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Held-out dataset for the effective rank and goal-dynamics error.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    chunks: Option<usize>,
    /// Evaluation task whose goal is used for the value map.
    #[arg(long)]
    task: Option<usize>,
}

#[derive(Args, Debug)]
struct LayoutArgs {
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(e: impl std::fmt::Display) -> CliResult<T> {
    Err(Failure::Usage(e.to_string()))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `mspr --help` for usage");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Robust(a) => robust_cmd(a),
        Command::Diag(a) => diag_cmd(a),
        Command::Layout(a) => layout_cmd(a),
    }
}

fn opt<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Defaults, then `MSPR_SEED`, the config file, `--set` pairs and finally
/// the dedicated flags.
fn resolve(c: &Common, flags: Vec<(&'static str, String)>) -> CliResult<RunConfig> {
    let mut rc = RunConfig::default();
    if let Ok(s) = std::env::var(SEED_ENV) {
        if s.trim().parse::<u64>().is_err() {
            return usage(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"));
        }
        rc.set("seed", &s).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(p) = &c.config {
        rc.apply_file(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    for kv in &c.set {
        let Some((k, v)) = kv.split_once('=') else {
            return usage(format!("--set expects KEY=VALUE, got `{kv}`"));
        };
        rc.set(k.trim(), v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let mut all = flags;
    opt(&mut all, "seed", &c.seed);
    opt(&mut all, "env", &c.env);
    for (k, v) in all {
        rc.set(k, &v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(rc)
}

fn parsed<T: std::str::FromStr>(rc: &RunConfig, key: &str) -> CliResult<T> {
    rc.parse(key).map_err(|e| Failure::Usage(e.to_string()))
}

fn env_of(rc: &RunConfig) -> CliResult<Option<EnvId>> {
    match rc.get("env") {
        "" => Ok(None),
        s => s.parse().map(Some).map_err(|e: Error| Failure::Usage(e.to_string())),
    }
}

fn require_env(rc: &RunConfig) -> CliResult<EnvId> {
    env_of(rc)?.map_or_else(|| usage("--env is required"), Ok)
}

fn require_path<'a>(rc: &'a RunConfig, key: &str, flag: &str) -> CliResult<&'a Path> {
    rc.path(key).map_or_else(|| usage(format!("--{flag} is required")), Ok)
}

fn require_out(c: &Common) -> CliResult<&Path> {
    c.out.as_deref().map_or_else(|| usage("--out is required"), Ok)
}

fn train_config(rc: &RunConfig) -> CliResult<crate::agent::TrainConfig> {
    rc.train_config().map_err(|e| Failure::Usage(e.to_string()))
}

/// Loads the dataset named by `data` and reconciles `env` with it.
fn load_data(rc: &mut RunConfig) -> CliResult<OfflineDataset> {
    let path = require_path(rc, "data", "data")?.to_path_buf();
    let ds = datagen::load(&path)?;
    match env_of(rc)? {
        Some(e) if e != ds.env => {
            return usage(format!("--env {e} does not match the dataset environment {}", ds.env));
        }
        Some(_) => {}
        None => rc.set("env", ds.env.as_str()).expect("env is a run key"),
    }
    Ok(ds)
}

fn sha256_file(p: &Path) -> Result<String> {
    Ok(format!("{:x}", Sha256::digest(fs::read(p)?)))
}

/// Output directory filled in a private staging directory and moved into
/// place on [`OutDir::commit`].
struct OutDir {
    target: PathBuf,
    staging: PathBuf,
    files: Vec<(String, String)>,
}

impl OutDir {
    fn create(target: &Path, force: bool) -> CliResult<Self> {
        if target.is_file() {
            return usage(format!("--out {} is a file", target.display()));
        }
        if target.is_dir() && !force && fs::read_dir(target).map_err(Error::from)?.next().is_some() {
            return usage(format!("output directory {} is not empty (use --force)", target.display()));
        }
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(Error::from)?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(Error::from)?;
        }
        fs::create_dir(&staging).map_err(Error::from)?;
        Ok(OutDir { target: target.to_path_buf(), staging, files: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        self.record(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let digest = sha256_file(&self.path(name))?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), digest));
        Ok(())
    }

    fn commit(self, rc: &RunConfig, command: &str, inputs: &[&Path]) -> Result<()> {
        let mut me = self;
        me.write("config.resolved", rc.resolved().as_bytes())?;
        let manifest = manifest(rc, command, inputs, &me.files)?;
        fs::write(me.path("manifest.txt"), manifest)?;
        if !me.target.exists() {
            fs::rename(&me.staging, &me.target)?;
            return Ok(());
        }
        for entry in fs::read_dir(&me.staging)? {
            let entry = entry?;
            fs::rename(entry.path(), me.target.join(entry.file_name()))?;
        }
        fs::remove_dir(&me.staging)?;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn manifest(rc: &RunConfig, command: &str, inputs: &[&Path], outputs: &[(String, String)]) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "seed={}", rc.get("seed"));
    for p in inputs {
        let _ = writeln!(s, "input {} sha256={}", p.display(), sha256_file(p)?);
    }
    for (n, d) in outputs {
        let _ = writeln!(s, "output {n} sha256={d}");
    }
    Ok(s)
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    opt(&mut flags, "mode", &a.mode);
    opt(&mut flags, "sigma", &a.sigma);
    opt(&mut flags, "transitions", &a.n);
    opt(&mut flags, "fragment_cells", &a.fragment_cells);
    let rc = resolve(&a.common, flags)?;
    let env = require_env(&rc)?;
    let out = require_out(&a.common)?;
    let cfg = CollectConfig {
        mode: parsed(&rc, "mode")?,
        sigma: parsed(&rc, "sigma")?,
        target_transitions: parsed(&rc, "transitions")?,
        fragment_cells: parsed(&rc, "fragment_cells")?,
        seed: parsed(&rc, "seed")?,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if out.is_dir() {
        return usage(format!("--out {} is a directory; gen-data writes a dataset file", out.display()));
    }
    let spec = EnvSpec::new(env);
    let ds = collect(&spec, &cfg)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(Error::from)?;
    let tmp = dir.join(format!(".{}.partial-{}", out.file_name().unwrap_or_default().to_string_lossy(), std::process::id()));
    datagen::save(&ds, &tmp)?;
    fs::rename(&tmp, out).map_err(Error::from)?;
    let inputs: Vec<&Path> = a.common.config.as_deref().into_iter().collect();
    let name = out.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let outputs = vec![(name, sha256_file(out)?)];
    write_atomic(&dir.join("config.resolved"), rc.resolved().as_bytes())?;
    write_atomic(&dir.join("manifest.txt"), manifest(&rc, "gen-data", &inputs, &outputs)?.as_bytes())?;
    println!("wrote {} transitions in {} trajectories to {}", ds.num_transitions(), ds.trajectories.len(), out.display());
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("partial-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    opt(&mut flags, "data", &a.data.as_deref().map(path_str));
    opt(&mut flags, "steps", &a.steps);
    opt(&mut flags, "resume", &a.resume.as_deref().map(path_str));
    let mut rc = resolve(&a.common, flags)?;
    let out = require_out(&a.common)?.to_path_buf();
    let cfg = train_config(&rc)?;
    let ds = load_data(&mut rc)?;
    let mut dir = OutDir::create(&out, a.common.force)?;
    let mut inputs: Vec<PathBuf> = vec![require_path(&rc, "data", "data")?.to_path_buf()];
    inputs.extend(a.common.config.clone());
    let mut trainer = match rc.path("resume") {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            ck.check_config(&cfg)?;
            inputs.push(p.to_path_buf());
            Trainer::resume(&ds, cfg.clone(), ck.state)?
        }
        None => Trainer::new(&ds, cfg.clone())?,
    };
    let mut metrics = String::new();
    let _ = writeln!(metrics, "{}", StepMetrics::CSV_HEADER);
    trainer.run(|m| {
        let _ = writeln!(metrics, "{}", m.csv_row());
    })?;
    let state = trainer.into_state();
    dir.write("metrics.csv", metrics.as_bytes())?;
    save_checkpoint(&Checkpoint::new(state.clone(), &cfg), dir.path("checkpoint.ckpt"))?;
    dir.record("checkpoint.ckpt")?;
    let refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    dir.commit(&rc, "train", &refs)?;
    println!("trained {} steps ({} representation updates) -> {}", state.step, state.repr_update_count, out.display());
    Ok(())
}

const EVAL_HEADER: &str = "task,start_x,start_y,goal_x,goal_y,success";

fn eval_csv(spec: &EnvSpec, per_task: &[f64]) -> Result<String> {
    let mut s = format!("{EVAL_HEADER}\n");
    for (k, succ) in per_task.iter().enumerate() {
        let (st, g) = spec.sample_eval_task(k)?;
        let p = st.agent();
        let _ = writeln!(s, "{k},{},{},{},{},{succ}", p[0], p[1], g.0[0], g.0[1]);
    }
    Ok(s)
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    opt(&mut flags, "checkpoint", &a.checkpoint.as_deref().map(path_str));
    opt(&mut flags, "episodes", &a.episodes);
    opt(&mut flags, "eval_seed", &a.eval_seed);
    let rc = resolve(&a.common, flags)?;
    let env = require_env(&rc)?;
    let out = require_out(&a.common)?;
    let ckp = require_path(&rc, "checkpoint", "checkpoint")?;
    let episodes: usize = parsed(&rc, "episodes")?;
    let seed: u64 = parsed(&rc, "eval_seed")?;
    let mut dir = OutDir::create(out, a.common.force)?;
    let ck = load_checkpoint(ckp)?;
    let spec = EnvSpec::new(env);
    let r = evaluate(&ck.state.repr, &ck.state.agent, &spec, episodes, seed)?;
    dir.write("eval.csv", eval_csv(&spec, &r.per_task)?.as_bytes())?;
    let mut inputs = vec![ckp];
    inputs.extend(a.common.config.as_deref());
    dir.commit(&rc, "eval", &inputs)?;
    println!("mean_success={:.4} mean_length={:.2} episodes_per_task={episodes}", r.mean_success, r.mean_length);
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    opt(&mut flags, "variant", &a.variant);
    opt(&mut flags, "data", &a.data.as_deref().map(path_str));
    opt(&mut flags, "seeds", &a.seeds);
    opt(&mut flags, "episodes", &a.episodes);
    opt(&mut flags, "eval_seed", &a.eval_seed);
    let mut rc = resolve(&a.common, flags)?;
    let out = require_out(&a.common)?.to_path_buf();
    let variant: AblationVariant = rc.get("variant").parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let cfg = variant.apply(&train_config(&rc)?);
    rc.absorb_train_config(&cfg);
    let seeds = rc.seeds().map_err(|e| Failure::Usage(e.to_string()))?;
    let episodes: usize = parsed(&rc, "episodes")?;
    let eval_seed: u64 = parsed(&rc, "eval_seed")?;
    let ds = load_data(&mut rc)?;
    let mut dir = OutDir::create(&out, a.common.force)?;
    let spec = EnvSpec::new(ds.env);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    let runs: Result<Vec<(u64, TrainState, f64, f64)>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let c = crate::agent::TrainConfig { seed, ..cfg.clone() };
                let (st, _) = train(&ds, &c)?;
                let r = evaluate(&st.repr, &st.agent, &spec, episodes, eval_seed)?;
                Ok((seed, st, r.mean_success, r.mean_length))
            })
            .collect()
    });
    let mut csv = String::from("variant,seed,success,episode_length\n");
    for (seed, st, succ, len) in runs? {
        let _ = writeln!(csv, "{variant},{seed},{succ},{len}");
        let c = crate::agent::TrainConfig { seed, ..cfg.clone() };
        let name = format!("checkpoint_seed{seed}.ckpt");
        save_checkpoint(&Checkpoint::new(st, &c), dir.path(&name))?;
        dir.record(&name)?;
        println!("{variant} seed {seed}: success={succ:.4}");
    }
    dir.write("ablation.csv", csv.as_bytes())?;
    let mut inputs = vec![require_path(&rc, "data", "data")?];
    inputs.extend(a.common.config.as_deref());
    dir.commit(&rc, "ablate", &inputs)?;
    Ok(())
}

fn robust_cmd(a: RobustArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    opt(&mut flags, "seeds", &a.seeds);
    opt(&mut flags, "transitions", &a.transitions);
    opt(&mut flags, "sigma", &a.sigma);
    opt(&mut flags, "episodes", &a.episodes);
    opt(&mut flags, "eval_seed", &a.eval_seed);
    let rc = resolve(&a.common, flags)?;
    let env = require_env(&rc)?;
    let out = require_out(&a.common)?;
    let robust = RobustConfig {
        base: train_config(&rc)?,
        transitions: parsed(&rc, "transitions")?,
        base_sigma: parsed(&rc, "sigma")?,
        fragment_cells: parsed(&rc, "fragment_cells")?,
        seeds: rc.seeds().map_err(|e| Failure::Usage(e.to_string()))?,
        episodes: parsed(&rc, "episodes")?,
        eval_seed: parsed(&rc, "eval_seed")?,
        jobs: a.jobs,
    };
    let mut dir = OutDir::create(out, a.common.force)?;
    let rows = robustness_suite(env, &robust)?;
    let mut csv = format!("{}\n", RobustRow::CSV_HEADER);
    for r in &rows {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    dir.write("robust.csv", csv.as_bytes())?;
    let mut sum = format!("{}\n", SummaryRow::CSV_HEADER);
    for s in summarize(&rows) {
        let _ = writeln!(sum, "{}", s.csv_row());
    }
    dir.write("summary.csv", sum.as_bytes())?;
    dir.write("noise.svg", emit_plot(&sum, PlotKind::Noise, &format!("{env}: success vs noise"))?.as_bytes())?;
    dir.write("fraction.svg", emit_plot(&sum, PlotKind::Fraction, &format!("{env}: success vs dataset fraction"))?.as_bytes())?;
    let inputs: Vec<&Path> = a.common.config.as_deref().into_iter().collect();
    dir.commit(&rc, "robust", &inputs)?;
    println!("{} cells -> {}", rows.len(), out.display());
    Ok(())
}

/// Up to `n` dataset states drawn without replacement.
fn sample_states(spec: &EnvSpec, ds: &OfflineDataset, n: usize, seed: u64) -> Result<Tensor> {
    let all: Vec<_> = ds.trajectories.iter().flat_map(|t| t.states.iter()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, all.len(), n.min(all.len())).into_vec();
    idx.sort_unstable();
    Tensor::from_rows(&idx.iter().map(|&i| spec.state_features(all[i])).collect::<Vec<_>>())
}

pub const RANK_SAMPLE: usize = 512;

fn diag_cmd(a: DiagArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    if !a.checkpoint.is_empty() {
        let joined: Vec<String> = a.checkpoint.iter().map(|p| path_str(p)).collect();
        flags.push(("checkpoint", joined.join(",")));
    }
    opt(&mut flags, "data", &a.data.as_deref().map(path_str));
    opt(&mut flags, "episodes", &a.episodes);
    opt(&mut flags, "eval_seed", &a.eval_seed);
    opt(&mut flags, "resolution", &a.resolution);
    opt(&mut flags, "chunks", &a.chunks);
    opt(&mut flags, "task", &a.task);
    let mut rc = resolve(&a.common, flags)?;
    let out = require_out(&a.common)?.to_path_buf();
    let ckps: Vec<PathBuf> = rc.get("checkpoint").split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect();
    if ckps.is_empty() {
        return usage("--checkpoint is required");
    }
    let cfg = train_config(&rc)?;
    let ds = match rc.path("data") {
        Some(_) => Some(load_data(&mut rc)?),
        None => None,
    };
    let env = require_env(&rc)?;
    let task: usize = parsed(&rc, "task")?;
    let resolution: usize = parsed(&rc, "resolution")?;
    let episodes: usize = parsed(&rc, "episodes")?;
    let eval_seed: u64 = parsed(&rc, "eval_seed")?;
    let chunks: usize = parsed(&rc, "chunks")?;
    let spec = EnvSpec::new(env);
    let mut dir = OutDir::create(&out, a.common.force)?;
    let states: Vec<TrainState> = ckps.iter().map(|p| load_checkpoint(p).map(|c| c.state)).collect::<Result<_>>()?;
    let st = &states[0];

    let (_, goal) = spec.sample_eval_task(task)?;
    let map = value_error_map(&st.repr, &st.agent, &spec, &goal, resolution, cfg.gamma)?;
    let mut csv = String::from("x,y,q,mc,error,rollout_len\n");
    for c in &map.cells {
        let _ = writeln!(csv, "{},{},{},{},{},{}", c.point[0], c.point[1], c.q, c.mc, c.error, c.rollout_len);
    }
    dir.write("value_map.csv", csv.as_bytes())?;
    let title = format!("{env}: Q - MC, goal ({:.2}, {:.2}), mean |err| {:.3}", goal.0[0], goal.0[1], map.mean_abs_error());
    dir.write("value_map.svg", emit_plot(&csv, PlotKind::ValueMap, &title)?.as_bytes())?;

    let mut summary = String::from("task,success,steps,distance_trend\n");
    for k in 0..NUM_EVAL_TASKS {
        let tr: EpisodeTrace = episode_trace(&st.repr, &st.agent, &spec, k)?;
        let mut t = format!("{}\n", EpisodeTrace::CSV_HEADER);
        for row in tr.csv_rows() {
            let _ = writeln!(t, "{row}");
        }
        let trend = tr.distance_trend().map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(summary, "{k},{},{},{trend}", tr.success as u8, tr.steps.len());
        dir.write(&format!("trace_task{k}.csv"), t.as_bytes())?;
        if !tr.steps.is_empty() {
            let svg = emit_plot(&t, PlotKind::Trace, &format!("{env} task {k}: success={}", tr.success))?;
            dir.write(&format!("trace_task{k}.svg"), svg.as_bytes())?;
        }
    }
    dir.write("traces.csv", summary.as_bytes())?;

    if let Some(ds) = &ds {
        let sample = sample_states(&spec, ds, RANK_SAMPLE, eval_seed)?;
        let mut r = String::from("checkpoint,effective_rank,latent_dim\n");
        for (p, s) in ckps.iter().zip(&states) {
            let er = latent_effective_rank(&s.repr, &sample)?;
            let _ = writeln!(r, "{},{er},{}", p.display(), s.repr.latent_dim());
        }
        dir.write("rank.csv", r.as_bytes())?;
        if states.len() >= 2 {
            let pairs: Vec<(&TrainState, &OfflineDataset)> = states.iter().map(|s| (s, ds)).collect();
            let rows: Vec<GdynRow> = goal_dyn_error_vs_success(&pairs, &cfg, chunks, episodes, eval_seed)?;
            let mut g = format!("{}\n", GdynRow::CSV_HEADER);
            for (p, row) in ckps.iter().zip(&rows) {
                let _ = writeln!(g, "{},{},{}", p.display(), row.l_gdyn, row.success);
            }
            dir.write("gdyn.csv", g.as_bytes())?;
        }
    }
    let mut inputs: Vec<&Path> = ckps.iter().map(|p| p.as_path()).collect();
    inputs.extend(rc.path("data"));
    inputs.extend(a.common.config.as_deref());
    dir.commit(&rc, "diag", &inputs)?;
    println!("value map mean |Q-MC| = {:.4} -> {}", map.mean_abs_error(), out.display());
    Ok(())
}

fn layout_cmd(a: LayoutArgs) -> CliResult<()> {
    let rc = resolve(&a.common, Vec::new())?;
    let env = require_env(&rc)?;
    let spec = EnvSpec::new(env);
    let text = match spec.layout() {
        Some(l) => l.dump(),
        None => "open 5x5 arena, no walls\n".to_string(),
    };
    let mut stdout = std::io::stdout();
    let _ = stdout.write_all(text.as_bytes());
    if let Some(out) = &a.common.out {
        let mut dir = OutDir::create(out, a.common.force)?;
        dir.write("layout.txt", text.as_bytes())?;
        let inputs: Vec<&Path> = a.common.config.as_deref().into_iter().collect();
        dir.commit(&rc, "layout", &inputs)?;
    }
    Ok(())
}
