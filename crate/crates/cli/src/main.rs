use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pidrl::actor::{simc_pi, ControllerParams};
use pidrl::analysis::{is_stable, stability_boundary, step_metrics};
use pidrl::artifacts::{
    load_params, save_critic, save_params, save_train_log, write_boundary, write_classification, write_step_log,
    StepLogWriter,
};
use pidrl::config::{ConfigError, ExperimentConfig};
use pidrl::rl::{evaluate, train_with};
use pidrl::Error;

#[derive(Parser)]
#[command(name = "pidrl", version, about = "Tune PID gains with a deterministic policy-gradient critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the controller and write train_log.csv, params.json, critic.bin.
    Train(TrainArgs),
    /// Run one noise-free episode with fixed gains.
    Eval(EvalArgs),
    /// Write the kp-ki stability boundary as CSV (omega,kp,ki).
    Boundary(GridArgs),
    /// Classify a kp-ki grid with the eigenvalue oracle (kp,ki,stable).
    Classify(GridArgs),
    /// Print the half-rule FOPDT model and SIMC PI gains as JSON.
    Simc(SimcArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir or ".".
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Also write every training step to train_steps.csv.
    #[arg(long)]
    per_step_log: bool,
    /// Train one run per seed in `a..b` (end exclusive) or `a..=b`, concurrently,
    /// each in its own `seed_<n>` subdirectory.
    #[arg(long, value_parser = parse_seed_range, conflicts_with = "seed")]
    seeds: Option<SeedRange>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Gains to evaluate (params.json); defaults to the config's initial gains.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Evaluate once per listed rho, writing eval_rho_<rho>.csv for each.
    #[arg(long, value_delimiter = ',')]
    rho_sweep: Option<Vec<f64>>,
    /// Accepted for symmetry with `train`; evaluation always writes its per-step CSV.
    #[arg(long)]
    per_step_log: bool,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimcArgs {
    #[command(flatten)]
    common: Common,
    /// Closed-loop time constant; defaults to the config's simc.tau_c, then theta.
    #[arg(long)]
    tau_c: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Numeric(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(c),
            Error::NonFinite(m) => Failure::Numeric(m),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let bad = || format!("expected a seed range like 0..5 or 0..=4, got {s:?}");
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(seeds))
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::Other(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn fmt_k(k: &ControllerParams) -> String {
    format!("kp={} ki={} kd={} rho={}", k.kp, k.ki, k.kd, k.rho)
}

struct TrainSummary {
    k: ControllerParams,
    tail_mean: Option<f64>,
    tail_len: usize,
}

fn train_one(cfg: &ExperimentConfig, dir: &Path, per_step_log: bool) -> Result<TrainSummary, Failure> {
    let mut env = cfg.env()?;
    let k_init = cfg.initial_params()?;
    let tc = cfg.train_config();
    let mut steps = if per_step_log {
        Some(StepLogWriter::new(BufWriter::new(File::create(dir.join("train_steps.csv"))?)))
    } else {
        None
    };
    let mut write_err = None;
    let art = train_with(&tc, &mut env, k_init, |_, rows| {
        if let Some(w) = steps.as_mut() {
            if let Err(e) = w.write(rows) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(w) = steps {
        w.finish()?;
    }
    save_train_log(&dir.join("train_log.csv"), &art.log)?;
    save_params(&dir.join("params.json"), &art.params.snapshot())?;
    save_critic(&dir.join("critic.bin"), &art.critic)?;

    let tail = &art.log[art.log.len().saturating_sub(50)..];
    let tail_mean = (!tail.is_empty()).then(|| tail.iter().map(|e| e.total_reward).sum::<f64>() / tail.len() as f64);
    Ok(TrainSummary {
        k: art.params,
        tail_mean,
        tail_len: tail.len(),
    })
}

fn print_summary(prefix: &str, s: &TrainSummary) {
    println!("{prefix}final K: {}", fmt_k(&s.k));
    match s.tail_mean {
        Some(m) => println!("{prefix}mean reward (last {} episodes): {m}", s.tail_len),
        None => println!("{prefix}mean reward: n/a (no episodes)"),
    }
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.train.episodes = n;
    }
    let dir = out_dir(&args.common, &cfg)?;
    let Some(SeedRange(seeds)) = args.seeds else {
        let s = train_one(&cfg, &dir, args.per_step_log)?;
        print_summary("", &s);
        return Ok(());
    };

    let results: Vec<(u64, Result<TrainSummary, Failure>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                let sub = dir.join(format!("seed_{seed}"));
                let per_step = args.per_step_log;
                scope.spawn(move || {
                    let r = fs::create_dir_all(&sub)
                        .map_err(Failure::from)
                        .and_then(|_| train_one(&cfg, &sub, per_step));
                    (seed, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut first_err = None;
    for (seed, r) in results {
        match r {
            Ok(s) => print_summary(&format!("[seed {seed}] "), &s),
            Err(e) => {
                eprintln!("[seed {seed}] failed: {}", describe(&e));
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn rho_file_name(rho: f64) -> String {
    format!("eval_rho_{rho}.csv")
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let dir = out_dir(&args.common, &cfg)?;
    let mut k = cfg.initial_params()?;
    if let Some(path) = &args.params {
        let snap = load_params(path).map_err(|e| Failure::Other(format!("cannot load {}: {e}", path.display())))?;
        k = ControllerParams::from_snapshot(snap, k.trainable);
    }
    let runs: Vec<(ControllerParams, String)> = match &args.rho_sweep {
        None => vec![(k, "eval_steps.csv".to_string())],
        Some(rhos) => rhos
            .iter()
            .map(|&rho| {
                if !(rho >= 0.0) || !rho.is_finite() {
                    return Err(Failure::Other(format!("rho must be finite and >= 0, got {rho}")));
                }
                Ok((ControllerParams { rho, ..k }, rho_file_name(rho)))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut env = cfg.env()?;
    for (k, name) in runs {
        let ev = evaluate(&mut env, &k, cfg.limits(), cfg.seed)?;
        write_step_log(BufWriter::new(File::create(dir.join(&name))?), &ev.records)?;
        println!("K: {}", fmt_k(&k));
        println!("verdict: {} after {} steps", ev.done.as_str(), ev.steps);
        println!("total reward: {}", ev.total_reward);
        match step_metrics(&ev.records) {
            Ok(m) => println!(
                "overshoot: {} settling_steps: {} recovery_steps: {}",
                m.overshoot, m.settling_steps, m.recovery_steps
            ),
            Err(e) => println!("step metrics: n/a ({e})"),
        }
        println!("wrote {}", dir.join(&name).display());
    }
    Ok(())
}

fn cmd_boundary(args: GridArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let curve = stability_boundary(&cfg.plant_model(), &cfg.boundary_grid())?;
    match grid_target(&args.common, &cfg)? {
        Some(dir) => {
            let path = dir.join("boundary.csv");
            write_boundary(BufWriter::new(File::create(&path)?), &curve)?;
            println!("wrote {} points to {}", curve.points.len(), path.display());
        }
        None => write_boundary(std::io::stdout().lock(), &curve)?,
    }
    Ok(())
}

fn cmd_classify(args: GridArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let model = cfg.plant_model();
    let (kps, kis) = cfg.classify_grid();
    let mut rows = Vec::with_capacity(kps.len() * kis.len());
    for &kp in &kps {
        for &ki in &kis {
            rows.push((kp, ki, is_stable(&model, kp, ki, cfg.dt())?));
        }
    }
    match grid_target(&args.common, &cfg)? {
        Some(dir) => {
            let path = dir.join("classify.csv");
            write_classification(BufWriter::new(File::create(&path)?), &rows)?;
            let stable = rows.iter().filter(|r| r.2).count();
            println!("wrote {} points ({stable} stable) to {}", rows.len(), path.display());
        }
        None => write_classification(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

/// Grid commands print CSV to stdout unless `--out` is given.
fn grid_target(common: &Common, cfg: &ExperimentConfig) -> Result<Option<PathBuf>, Failure> {
    match common.out {
        Some(_) => out_dir(common, cfg).map(Some),
        None => Ok(None),
    }
}

fn cmd_simc(args: SimcArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let model = cfg.fopdt()?;
    let tau_c = args
        .tau_c
        .or(cfg.actor.simc.as_ref().and_then(|s| s.tau_c))
        .unwrap_or(model.theta);
    let k = simc_pi(&model, tau_c)?;
    let out = serde_json::json!({
        "fopdt": { "k": model.k, "tau": model.tau, "theta": model.theta },
        "tau_c": tau_c,
        "kp": k.kp,
        "ki": k.ki,
        "kd": k.kd,
        "rho": k.rho,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json value"));
    Ok(())
}

fn describe(f: &Failure) -> String {
    match f {
        Failure::Config(e) => e.to_string(),
        Failure::Numeric(m) => format!("numeric failure: {m}"),
        Failure::Other(m) => m.clone(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Boundary(a) => cmd_boundary(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Simc(a) => cmd_simc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f));
            ExitCode::from(match f {
                Failure::Config(_) => 2,
                Failure::Numeric(_) => 3,
                Failure::Other(_) => 1,
            })
        }
    }
}
