//! Command-line front end: synthetic worlds, calibration, scoring,
//! evaluation, layer probing and parameter sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use geovad::dlsp::{dlsp_evaluate, select_layer};
use geovad::eval::{frame_metrics, separability_stats, sweep, DEFAULT_OVERLAP_BINS};
use geovad::io;
use geovad::pipeline::{
    calibrate_priors, center_all, score_dataset, score_online_dataset, CalibrationPriors, Mode, OnlineScorer,
    PipelineConfig,
};
use geovad::synth::{generate_world, WorldSpec};
use serde_json::json;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicUsize;

#[derive(Parser, Debug)]
#[command(name = "geovad", version, about = "Video anomaly scoring on the unit hypersphere")]
struct Cli {
    /// Seed for world generation and k-means restarts; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value pipeline config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a preset synthetic world: features, labels and calibration set.
    Synth(SynthArgs),
    /// Fit centering means and the prototype bank.
    Calibrate(CalibrateArgs),
    /// Score a feature file with saved priors.
    Infer(InferArgs),
    /// Score clips one at a time with synthetic-only priors.
    Online(OnlineArgs),
    /// Frame AUC/AP of a scores file, plus separability when given features.
    Eval(EvalArgs),
    /// Rank the layers of a multi-layer file and pick one.
    Dlsp(DlspArgs),
    /// Run the offline pipeline over a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// A, B, C or D.
    #[arg(long)]
    preset: String,
    /// Output directory; receives features.gvf, labels.csv and synthetic.gvf.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PriorPaths {
    #[arg(long)]
    priors: PathBuf,
    #[arg(long)]
    bank: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Two-class file with videos "normal" and "abnormal".
    #[arg(long)]
    synthetic: PathBuf,
    /// Test features, pooled into the unified mean in offline mode.
    #[arg(long)]
    features: Option<PathBuf>,
    #[command(flatten)]
    out: PriorPaths,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    priors: PriorPaths,
    /// Scores CSV (video_id,frame_index,score).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON with clip and frame scores per video.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OnlineArgs {
    #[command(flatten)]
    priors: PriorPaths,
    /// Feature file to score; without it clips are read from stdin, one
    /// per line as comma or space separated numbers.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Scores CSV for --features; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Features and priors for geodesic separability statistics.
    #[arg(long, requires_all = ["priors", "bank"])]
    features: Option<PathBuf>,
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Print JSON instead of key: value lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct DlspArgs {
    /// Multi-layer file (GVFL) with videos "normal" and "abnormal" per layer.
    #[arg(long)]
    layers: PathBuf,
    /// Saliency CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    /// Grid file, one `key = v1, v2, ...` line per axis.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Errors that are the caller's fault rather than the data's.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => io::parse_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn load_priors(p: &PriorPaths) -> anyhow::Result<CalibrationPriors> {
    let (unified_mean, visual_mean) =
        io::decode_priors(&io::read_bytes(&p.priors)?).with_context(|| p.priors.display().to_string())?;
    let bank = io::decode_bank(&io::read_bytes(&p.bank)?).with_context(|| p.bank.display().to_string())?;
    if bank.dim() != unified_mean.dim() {
        return Err(geovad::Error::DimensionMismatch {
            expected: bank.dim(),
            found: unified_mean.dim(),
        }
        .into());
    }
    Ok(CalibrationPriors {
        unified_mean,
        visual_mean,
        bank,
    })
}

fn read_features(path: &Path) -> anyhow::Result<geovad::dataset::FeatureDataset> {
    io::read_features(path).with_context(|| path.display().to_string())
}

fn synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let spec = WorldSpec::preset(&a.preset, cli.seed.unwrap_or(0)).map_err(|e| usage(e.to_string()))?;
    let world = generate_world(&spec)?;
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    io::write_features(&world.dataset, &a.out.join("features.gvf"))?;
    io::write_labels(&world.labels, &a.out.join("labels.csv"))?;
    io::write_features(
        &io::class_dataset(&world.syn_normal, &world.syn_abn)?,
        &a.out.join("synthetic.gvf"),
    )?;
    println!(
        "preset {}: {} videos, {} clips, dim {}",
        a.preset,
        world.dataset.videos.len(),
        world.dataset.clip_count(),
        world.dataset.dim
    );
    Ok(())
}

fn calibrate(cli: &Cli, a: &CalibrateArgs) -> anyhow::Result<()> {
    let c = config(cli)?;
    let syn = read_features(&a.synthetic)?;
    let (normal, abn) = io::split_classes(&syn)?;
    let test = a.features.as_deref().map(read_features).transpose()?;
    let priors = calibrate_priors(&normal, &abn, test.as_ref(), &c)?;
    io::write_bytes(
        &a.out.priors,
        &io::encode_priors(&priors.unified_mean, &priors.visual_mean)?,
    )?;
    io::write_bytes(&a.out.bank, &io::encode_bank(&priors.bank)?)?;
    println!(
        "bank: {} normal, {} anomalous prototypes, dim {}",
        priors.bank.norm_protos().len(),
        priors.bank.abn_protos().len(),
        priors.bank.dim()
    );
    Ok(())
}

fn infer(cli: &Cli, a: &InferArgs) -> anyhow::Result<()> {
    let c = config(cli)?;
    let priors = load_priors(&a.priors)?;
    let ds = read_features(&a.features)?;
    let run = score_dataset(&ds, &priors, &c)?;
    io::write_scores(&run.traces, &a.out)?;
    if let Some(p) = &a.json {
        let body = json!({ "at_base_clips": run.at_base_clips, "videos": run.traces });
        io::write_bytes(p, serde_json::to_string_pretty(&body)?.as_bytes())?;
    }
    if run.at_base_clips > 0 {
        eprintln!(
            "warning: {} clips coincided with a base point and were left uncentered",
            run.at_base_clips
        );
    }
    Ok(())
}

fn parse_clip(line: &str) -> anyhow::Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| anyhow::anyhow!("bad number {s:?}")))
        .collect()
}

fn online(cli: &Cli, a: &OnlineArgs) -> anyhow::Result<()> {
    let c = config(cli)?;
    let priors = load_priors(&a.priors)?;
    if let Some(path) = &a.features {
        let ds = read_features(path)?;
        let traces = score_online_dataset(&ds, &priors, c.frames_per_clip)?;
        match &a.out {
            Some(out) => io::write_scores(&traces, out)?,
            None => print!("{}", io::format_scores(&traces)?),
        }
        return Ok(());
    }
    if a.out.is_some() {
        return Err(usage("--out needs --features; stdin scores go to stdout"));
    }
    let scorer = OnlineScorer::new(priors);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "clip_index,score,at_base")?;
    let mut index = 0usize;
    for (n, line) in std::io::stdin().lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let clip = parse_clip(&line).map_err(|e| geovad::Error::ParseError {
            line: n + 1,
            message: e.to_string(),
        })?;
        let s = scorer.score(&clip)?;
        writeln!(out, "{index},{},{}", s.score, u8::from(s.at_base))?;
        out.flush()?;
        index += 1;
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<()> {
    let c = config(cli)?;
    let traces = io::read_scores(&a.scores)?;
    let labels = io::read_labels(&a.labels)?;
    let m = frame_metrics(&traces, &labels)?;
    let mut report = json!({ "auc": m.auc, "ap": m.ap, "frames": m.frames });
    if let (Some(f), Some(p), Some(b)) = (&a.features, &a.priors, &a.bank) {
        let ds = read_features(f)?;
        let priors = load_priors(&PriorPaths {
            priors: p.clone(),
            bank: b.clone(),
        })?;
        labels.check(&ds, c.frames_per_clip)?;
        let (mut feats, mut clip_labels) = (Vec::new(), Vec::new());
        let counter = AtomicUsize::new(0);
        for v in &ds.videos {
            feats.extend(center_all(&priors.unified_mean, &ds.unit_rows(&v.main)?, &counter)?);
            clip_labels.extend(labels.clip_labels(&v.id, c.frames_per_clip).expect("checked"));
        }
        let s = separability_stats(&feats, &clip_labels, &priors.bank, DEFAULT_OVERLAP_BINS)?;
        report["separability"] = serde_json::to_value(s)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("auc: {}", m.auc);
        println!("ap: {}", m.ap);
        println!("frames: {}", m.frames);
        if let Some(s) = report.get("separability") {
            for key in ["delta_mu", "sigma_delta", "fisher", "score_overlap"] {
                println!("{key}: {}", s[key]);
            }
        }
    }
    Ok(())
}

fn dlsp(a: &DlspArgs) -> anyhow::Result<()> {
    let layers = io::read_layers(&a.layers)?;
    let (mut normal, mut abn) = (Vec::new(), Vec::new());
    for l in &layers {
        let (n, b) = io::split_classes(l)?;
        normal.push(n);
        abn.push(b);
    }
    let saliency = dlsp_evaluate(&normal, &abn)?;
    io::write_bytes(&a.out, io::format_saliency(&saliency).as_bytes())?;
    println!("selected layer: {}", select_layer(&saliency));
    Ok(())
}

fn run_sweep(cli: &Cli, a: &SweepArgs) -> anyhow::Result<()> {
    let c = PipelineConfig {
        mode: Mode::Offline,
        ..config(cli)?
    };
    let ds = read_features(&a.features)?;
    let labels = io::read_labels(&a.labels)?;
    let (normal, abn) = io::split_classes(&read_features(&a.synthetic)?)?;
    let grid = io::parse_grid_str(&String::from_utf8_lossy(&io::read_bytes(&a.grid)?))?;
    let rows = sweep(&ds, &labels, &normal, &abn, &c, &grid)?;
    io::write_bytes(&a.out, io::format_sweep(&rows).as_bytes())?;
    println!("{} grid points", rows.len());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Calibrate(a) => calibrate(cli, a),
        Command::Infer(a) => infer(cli, a),
        Command::Online(a) => online(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Dlsp(a) => dlsp(a),
        Command::Sweep(a) => run_sweep(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
