use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use unidyn::energy::oracle::write_golden;
use unidyn::geometry::io::{load_scene, save_scene, write_stiffness_csv, Checkpoint};
use unidyn::geometry::{
    chamfer_distance, gen_scene, l2_trajectory_distance, GeometryError, Point, RestGeometry, SceneKind, SceneParams,
    Trajectory, TrajectoryDataset,
};
use unidyn::simulation::{simulate_checkpoint, SimConfig, SimError};
use unidyn::training::{TrainConfig, TrainError, Trainer};

const MANIFEST: &str = "run_manifest.json";
const SEED_ENV: &str = "GDG_SEED";

#[derive(Parser)]
#[command(name = "unidyn", version, about = "Learn reduced dynamics from point trajectories and simulate them")]
struct Cli {
    /// Validate inputs without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    GenData {
        #[arg(long, value_parser = parse_kind)]
        kind: SceneKind,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 0.04)]
        dt: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train weights and material on a scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// JSON training config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a trained checkpoint.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON simulation config; defaults apply to missing fields.
        #[arg(long)]
        sim_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two trajectories frame by frame.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Chamfer)]
        metric: Metric,
    },
    /// Regenerate the energy golden-value file.
    Oracle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        rows: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Metric {
    Chamfer,
    L2,
}

fn parse_kind(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: GeometryError| e.to_string())
}

/// Error tagged with the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: e.into() }
}

fn data_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, err: e.into() }
}

fn numeric_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 4, err: e.into() }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: Option<String>,
    seed: Option<u64>,
    inputs: Vec<String>,
    output_dir: Option<String>,
    wall_clock_secs: f64,
    artifacts: Vec<String>,
}

/// SHA-256 of the canonical JSON form (object keys sorted).
fn config_hash<T: Serialize>(cfg: &T) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    format!("{:x}", Sha256::digest(canonical.as_bytes()))
}

fn env_seed() -> Outcome<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|e| config_err(anyhow!("{SEED_ENV}='{s}': {e}"))),
        Err(_) => Ok(None),
    }
}

/// Fails unless `dir` exists as a writable directory or could be created.
fn check_writable(dir: &Path) -> Outcome<()> {
    let mut p = dir;
    loop {
        if p.exists() {
            let md = fs::metadata(p).map_err(|e| data_err(anyhow!("{}: {e}", p.display())))?;
            if !md.is_dir() {
                return Err(data_err(anyhow!("{} is not a directory", p.display())));
            }
            if md.permissions().readonly() {
                return Err(data_err(anyhow!("{} is read-only", p.display())));
            }
            return Ok(());
        }
        match p.parent() {
            Some(parent) if !parent.as_os_str().is_empty() => p = parent,
            _ => return Ok(()),
        }
    }
}

fn create_out(dir: &Path) -> Outcome<()> {
    check_writable(dir)?;
    fs::create_dir_all(dir).map_err(|e| data_err(anyhow!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    fs::write(path, text).map_err(|e| data_err(anyhow!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| config_err(anyhow!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(anyhow!("{}: {e}", path.display())))
}

fn list_dir(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.retain(|n| n != MANIFEST);
    names.sort();
    names
}

fn finish(
    command: &str,
    hash: Option<String>,
    seed: Option<u64>,
    inputs: &[&Path],
    out: &Path,
    start: Instant,
) -> Outcome<()> {
    let manifest = RunManifest {
        command: command.into(),
        config_hash: hash,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        output_dir: Some(out.display().to_string()),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        artifacts: list_dir(out),
    };
    write_json(&out.join(MANIFEST), &manifest)
}

fn cmd_gen_data(
    kind: SceneKind,
    points: usize,
    frames: usize,
    dt: f64,
    seed: Option<u64>,
    out: &Path,
    dry_run: bool,
) -> Outcome<()> {
    let start = Instant::now();
    let mut params = SceneParams { num_points: points, num_frames: frames, dt, ..SceneParams::default() };
    if let Some(s) = env_seed()?.or(seed) {
        params.seed = s;
    }
    let (geom, data) = gen_scene(kind, &params).map_err(config_err)?;
    check_writable(out)?;
    if dry_run {
        return Ok(());
    }
    save_scene(out, kind.as_str(), &geom, &data).map_err(data_err)?;
    finish("gen-data", Some(config_hash(&(kind, &params))), Some(params.seed), &[], out, start)
}

fn cmd_train(scene: &Path, config: Option<&Path>, out: &Path, dry_run: bool) -> Outcome<()> {
    let start = Instant::now();
    let mut cfg: TrainConfig = read_json(config)?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    cfg.validate().map_err(|(field, msg)| config_err(anyhow!("config field '{field}': {msg}")))?;
    let (geom, data, _) = load_scene(scene).map_err(data_err)?;
    check_writable(out)?;
    let hash = config_hash(&cfg);
    let seed = cfg.seed;
    let mut trainer = Trainer::new(cfg, geom, data).map_err(train_err)?;
    if dry_run {
        return Ok(());
    }
    create_out(out)?;
    let log_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| data_err(anyhow!("{}: {e}", log_path.display())))?;
    let result = trainer.run(Some(&mut log));
    log.flush().map_err(|e| data_err(anyhow!("{}: {e}", log_path.display())))?;
    let mut report = match result {
        Ok(r) => r,
        Err(TrainError::Numeric { term, epoch, last_good }) => {
            if let Some(ck) = last_good {
                ck.save(&out.join("last_good_checkpoint.json")).map_err(data_err)?;
            }
            let inputs: Vec<&Path> = [Some(scene), config].into_iter().flatten().collect();
            finish("train", Some(hash), Some(seed), &inputs, out, start)?;
            return Err(numeric_err(anyhow!("non-finite value in {term} at epoch {epoch}")));
        }
        Err(e) => return Err(train_err(e)),
    };
    let ck = trainer.checkpoint();
    let ck_path = out.join("checkpoint.json");
    ck.save(&ck_path).map_err(data_err)?;
    let e = trainer.stiffness().map_err(numeric_err)?;
    write_stiffness_csv(&out.join("stiffness.csv"), &e).map_err(data_err)?;
    report.checkpoint_path = Some("checkpoint.json".into());
    write_json(&out.join("report.json"), &report)?;
    let inputs: Vec<&Path> = [Some(scene), config].into_iter().flatten().collect();
    finish("train", Some(hash), Some(seed), &inputs, out, start)?;
    if let Some(last) = report.epochs.last() {
        println!("{}", serde_json::to_string(last).expect("metrics serialize"));
    }
    Ok(())
}

fn train_err(e: TrainError) -> Failure {
    match e {
        TrainError::Config { .. } => config_err(e),
        TrainError::Numeric { .. } | TrainError::Ad(_) => numeric_err(e),
        TrainError::Data(_) | TrainError::Geometry(_) => data_err(e),
    }
}

fn sim_err(e: SimError) -> Failure {
    match e {
        SimError::Config { .. } => config_err(e),
        SimError::Checkpoint(_) | SimError::Geometry(_) => data_err(e),
    }
}

fn cmd_simulate(checkpoint: &Path, sim_config: Option<&Path>, out: &Path, dry_run: bool) -> Outcome<()> {
    let start = Instant::now();
    let cfg: SimConfig = read_json(sim_config)?;
    cfg.validate().map_err(|(field, msg)| config_err(anyhow!("config field '{field}': {msg}")))?;
    let ck = Checkpoint::load(checkpoint).map_err(data_err)?;
    let rest = checkpoint_geometry(&ck)?;
    check_writable(out)?;
    if dry_run {
        unidyn::simulation::ReducedModel::from_checkpoint(&ck, cfg.corrected_neohookean).map_err(sim_err)?;
        return Ok(());
    }
    let result = simulate_checkpoint(&ck, &cfg).map_err(sim_err)?;
    create_out(out)?;
    let data = TrajectoryDataset { trajectories: vec![Trajectory { frames: result.frames, tracked: true }], dt: cfg.dt };
    save_scene(out, "simulation", &rest, &data).map_err(data_err)?;
    let diag_path = out.join("diagnostics.jsonl");
    let mut text = String::new();
    for d in &result.diagnostics {
        text.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
        text.push('\n');
    }
    fs::write(&diag_path, text).map_err(|e| data_err(anyhow!("{}: {e}", diag_path.display())))?;
    let inputs: Vec<&Path> = [Some(checkpoint), sim_config].into_iter().flatten().collect();
    finish("simulate", Some(config_hash(&cfg)), None, &inputs, out, start)?;
    match result.failure {
        Some(f) => Err(numeric_err(anyhow!("simulation aborted at frame {}: non-finite {}", f.frame, f.term))),
        None => Ok(()),
    }
}

fn checkpoint_geometry(ck: &Checkpoint) -> Outcome<RestGeometry> {
    let x = ck.tensor("x_rest").map_err(data_err)?;
    let v = ck.tensor("volume").map_err(data_err)?;
    let m = ck.tensor("mass").map_err(data_err)?;
    let points: Vec<Point> = x.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    RestGeometry::with_weights(points, v.data().to_vec(), m.data().to_vec()).map_err(data_err)
}

#[derive(Serialize)]
struct EvalOutput {
    metric: Metric,
    per_frame: Vec<f64>,
    mean: f64,
    manifest: RunManifest,
}

fn cmd_eval(pred: &Path, reference: &Path, metric: Metric, dry_run: bool) -> Outcome<()> {
    let start = Instant::now();
    let (_, p, _) = load_scene(pred).map_err(data_err)?;
    let (_, r, _) = load_scene(reference).map_err(data_err)?;
    if p.num_trajectories() != r.num_trajectories() {
        return Err(data_err(anyhow!(
            "trajectory counts differ: {} vs {}",
            p.num_trajectories(),
            r.num_trajectories()
        )));
    }
    let mut per_frame = Vec::new();
    for (tp, tr) in p.trajectories.iter().zip(&r.trajectories) {
        if tp.num_frames() != tr.num_frames() {
            return Err(data_err(anyhow!("frame counts differ: {} vs {}", tp.num_frames(), tr.num_frames())));
        }
        for (a, b) in tp.frames.iter().zip(&tr.frames) {
            let v = match metric {
                Metric::Chamfer => chamfer_distance(a, b),
                Metric::L2 => l2_trajectory_distance(std::slice::from_ref(a), std::slice::from_ref(b)),
            };
            per_frame.push(v.map_err(data_err)?);
        }
    }
    if dry_run {
        return Ok(());
    }
    let mean = if per_frame.is_empty() { 0.0 } else { per_frame.iter().sum::<f64>() / per_frame.len() as f64 };
    let manifest = RunManifest {
        command: "eval".into(),
        config_hash: Some(config_hash(&metric)),
        seed: None,
        inputs: vec![pred.display().to_string(), reference.display().to_string()],
        output_dir: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        artifacts: Vec::new(),
    };
    let out = EvalOutput { metric, per_frame, mean, manifest };
    println!("{}", serde_json::to_string_pretty(&out).expect("eval output serializes"));
    Ok(())
}

fn cmd_oracle(out: &Path, seed: u64, rows: usize, dry_run: bool) -> Outcome<()> {
    let start = Instant::now();
    if rows == 0 {
        return Err(config_err(anyhow!("--rows must be positive")));
    }
    check_writable(out)?;
    if dry_run {
        return Ok(());
    }
    create_out(out)?;
    let path = out.join("energy_golden.csv");
    write_golden(&path, seed, rows).map_err(|e| data_err(anyhow!("{}: {e}", path.display())))?;
    finish("oracle", Some(config_hash(&(seed, rows))), Some(seed), &[], out, start)
}

fn run(cli: Cli) -> Outcome<()> {
    let dry = cli.dry_run;
    match cli.cmd {
        Command::GenData { kind, points, frames, dt, seed, out } => {
            cmd_gen_data(kind, points, frames, dt, seed, &out, dry)
        }
        Command::Train { scene, config, out } => cmd_train(&scene, config.as_deref(), &out, dry),
        Command::Simulate { checkpoint, sim_config, out } => {
            cmd_simulate(&checkpoint, sim_config.as_deref(), &out, dry)
        }
        Command::Eval { pred, reference, metric } => cmd_eval(&pred, &reference, metric, dry),
        Command::Oracle { out, seed, rows } => cmd_oracle(&out, seed, rows, dry),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
