//! `motseg` command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use motseg::annotation::{format_labels, label_motion, parse_poses, parse_tracklets, LabelParams};
use motseg::config::{BackboneName, DatasetKind, InputMode, RunConfig};
use motseg::datasets::{generate_synthetic, load_class_agnostic, load_split, read_flow, raster::read_rgb, FrameSample, Split};
use motseg::eval::{benchmark, count_params, evaluate};
use motseg::features::prepare_input;
use motseg::train::{alternate_train, load_checkpoint, load_pretrained, save_checkpoint, CheckpointMeta};
use motseg::viz::render;
use motseg::Model32;

const ENV_OUT: &str = "MOTSEG_OUT";

#[derive(Parser)]
#[command(
    name = "motseg",
    version,
    about = "Joint semantic and motion instance segmentation",
    after_help = "Settings resolve in order: command-line flags, then the --config file, then built-in defaults.\n\
                  Without --out, outputs go to $MOTSEG_OUT/<command>, or ./runs/<command> when it is unset."
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shapes dataset.
    Synth(SynthArgs),
    /// Label tracklets as moving or static from ego poses.
    Annotate(AnnotateArgs),
    /// Train both heads with alternating updates.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a report.
    Eval(EvalArgs),
    /// Measure inference speed and size of a checkpoint.
    Bench(BenchArgs),
    /// Render prototypes, coefficients and overlays for one image.
    Viz(VizArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of sequences.
    #[arg(long)]
    sequences: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    frames: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Ego pose records: `timestamp` and a row-major 3x4 [R|t] per line.
    #[arg(long)]
    poses: PathBuf,
    /// Tracklet records: `object_id category timestamp x y z yaw` per line.
    #[arg(long)]
    tracklets: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Speed above which an object is moving, in m/s.
    #[arg(long)]
    threshold: Option<f64>,
    /// Smoothing window in frames.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct DataOverrides {
    /// Dataset root.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset layout: instancemotseg or class_agnostic.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<DatasetKind>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOverrides,
    /// Class-agnostic dataset feeding the motion phases.
    #[arg(long)]
    motion_dataset: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Steps per phase before switching heads.
    #[arg(long)]
    alternation_k: Option<usize>,
    /// tiny_conv or mobilenet_v2_style.
    #[arg(long)]
    backbone: Option<BackboneName>,
    /// rgb, rgb_rgb or rgb_flow.
    #[arg(long, value_parser = parse_mode)]
    input_mode: Option<InputMode>,
    /// Number of prototypes.
    #[arg(long)]
    prototypes: Option<usize>,
    /// Checkpoint whose parameters under --init-prefix initialise the model.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long, default_value = "trunk")]
    init_prefix: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataOverrides,
    /// train, test or all.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also measure speed.
    #[arg(long)]
    bench: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataOverrides,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Frame at time t.
    #[arg(long)]
    image: PathBuf,
    /// Frame at t+1, for the rgb_rgb input mode.
    #[arg(long)]
    image_t1: Option<PathBuf>,
    /// Optical flow (.flo), for the rgb_flow input mode.
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn serde_enum<T: serde::de::DeserializeOwned>(s: &str, accepted: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("accepted values: {accepted}"))
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    serde_enum(s, "instancemotseg, class_agnostic")
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    serde_enum(s, "rgb, rgb_rgb, rgb_flow")
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_enum(s, "train, test, all")
}

fn out_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os(ENV_OUT)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command)
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("invalid config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the resolved config and its fingerprint next to the outputs.
fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    write(&dir.join("fingerprint.txt"), &format!("{fp}\n"))?;
    Ok(fp)
}

fn apply_data(cfg: &mut RunConfig, d: &DataOverrides) {
    if let Some(root) = &d.dataset {
        cfg.dataset.root = root.clone();
    }
    if let Some(kind) = d.kind {
        cfg.dataset.kind = kind;
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(s) = a.common.seed {
        cfg.synthetic.seed = s;
    }
    if let Some(n) = a.sequences {
        cfg.synthetic.num_sequences = n;
    }
    if let Some(n) = a.frames {
        cfg.synthetic.frames_per_sequence = n;
    }
    if let Some(n) = a.size {
        cfg.synthetic.image_size = [n, n];
    }
    cfg.validate()?;
    let out = out_dir(a.common.out, "synth");
    create(&out)?;
    let seqs = generate_synthetic(&cfg.synthetic, &out)?;
    let fp = write_resolved(&out, &cfg)?;
    let frames: usize = seqs.iter().map(|s| s.frames.len()).sum();
    println!("wrote {} sequences, {frames} frames to {} (config {fp})", seqs.len(), out.display());
    Ok(())
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let mut params = LabelParams::default();
    if let Some(t) = a.threshold {
        params.threshold = t;
    }
    if let Some(w) = a.window {
        params.window = w;
    }
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let poses = parse_poses(&read(&a.poses)?, &a.poses)?;
    let tracklets = parse_tracklets(&read(&a.tracklets)?, &a.tracklets)?;
    let labels = label_motion(&tracklets, &poses, params)?;
    let out = out_dir(a.out, "annotate");
    create(&out)?;
    write(&out.join("labels.txt"), &format_labels(&labels, params))?;
    let resolved = toml::to_string(&params).context("serialising label parameters")?;
    write(&out.join("config.toml"), &resolved)?;
    write(
        &out.join("fingerprint.txt"),
        &format!("{}\n", motseg::config::fingerprint(resolved.as_bytes())),
    )?;
    let moving = labels.iter().filter(|l| l.moving).count();
    println!("{} labels ({moving} moving) written to {}", labels.len(), out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    apply_data(&mut cfg, &a.data);
    if let Some(p) = a.motion_dataset {
        cfg.dataset.motion_root = Some(p);
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = Some(n);
    }
    if let Some(lr) = a.lr {
        cfg.train.lr0 = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(k) = a.alternation_k {
        cfg.train.alternation_k = k;
    }
    if let Some(b) = a.backbone {
        cfg.model.backbone = b;
    }
    if let Some(m) = a.input_mode {
        cfg.model.input_mode = m;
    }
    if let Some(k) = a.prototypes {
        cfg.model.num_prototypes = k;
    }
    cfg.validate()?;
    let semantic = load_split(&cfg.dataset, cfg.dataset.train_split)
        .with_context(|| format!("loading dataset {}", cfg.dataset.root.display()))?;
    let motion = match &cfg.dataset.motion_root {
        Some(root) => load_class_agnostic(root).with_context(|| format!("loading {}", root.display()))?,
        None => semantic.clone(),
    };
    let mut model = Model32::new(cfg.model.clone(), cfg.seed_for("model"))?;
    if let Some(p) = &a.init_from {
        let n = load_pretrained(&mut model, p, &a.init_prefix)?;
        log::info!("initialised {n} parameters from {}", p.display());
    }
    let out = out_dir(a.common.out, "train");
    create(&out)?;
    let fp = write_resolved(&out, &cfg)?;
    let mut metrics = String::new();
    let log_every = cfg.train.log_every.max(1);
    let records = alternate_train(&mut model, &semantic, &motion, &cfg.train, cfg.seed_for("train"), |r, _| {
        metrics.push_str(&format!("{r}\n"));
        if r.iteration % log_every == 0 {
            log::info!("{r}");
        }
        Ok(false)
    })?;
    write(&out.join("metrics.log"), &metrics)?;
    let meta = CheckpointMeta {
        iteration: records.len() as u64,
        model: cfg.model.clone(),
        run: Some(cfg.clone()),
    };
    let ck = out.join("checkpoint.bin");
    save_checkpoint(&model, &meta, &ck)?;
    println!("trained {} steps; checkpoint {} (config {fp})", records.len(), ck.display());
    Ok(())
}

/// Config stored in a checkpoint, or defaults around its model config.
fn checkpoint_config(meta: &CheckpointMeta) -> RunConfig {
    let mut cfg = meta.run.clone().unwrap_or_default();
    cfg.model = meta.model.clone();
    cfg
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", a.checkpoint.display()))?;
    let mut cfg = checkpoint_config(&meta);
    apply_data(&mut cfg, &a.data);
    if let Some(s) = a.split {
        cfg.dataset.eval_split = s;
    }
    let samples = load_split(&cfg.dataset, cfg.dataset.eval_split)
        .with_context(|| format!("loading dataset {}", cfg.dataset.root.display()))?;
    let mut report = evaluate(&model, &samples, &cfg.eval, &cfg.fingerprint())?;
    if a.bench {
        let inputs = samples
            .iter()
            .map(|s| prepare_input(s, &model.config))
            .collect::<motseg::Result<Vec<_>>>()?;
        report.fps = Some(benchmark(&model, &inputs, &cfg.eval)?.fps);
    }
    let out = out_dir(a.out, "eval");
    create(&out)?;
    write_resolved(&out, &cfg)?;
    write(&out.join("report.txt"), &report.to_table())?;
    write(&out.join("report.records"), &report.to_records())?;
    print!("{}", report.to_table());
    if report.has_nan() {
        eprintln!("error: report contains NaN metrics");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", a.checkpoint.display()))?;
    let mut cfg = checkpoint_config(&meta);
    apply_data(&mut cfg, &a.data);
    if let Some(w) = a.warmup {
        cfg.eval.bench_warmup = w;
    }
    if let Some(r) = a.runs {
        cfg.eval.bench_runs = r;
    }
    let samples = if a.data.dataset.is_some() {
        load_split(&cfg.dataset, cfg.dataset.eval_split)?
    } else {
        motseg::datasets::synthetic::generate_sequences(&cfg.synthetic)?
            .into_iter()
            .flat_map(|s| s.frames)
            .collect()
    };
    let inputs = samples
        .iter()
        .map(|s| prepare_input(s, &model.config))
        .collect::<motseg::Result<Vec<_>>>()?;
    let b = benchmark(&model, &inputs, &cfg.eval)?;
    let params = count_params(&model);
    let out = out_dir(a.out, "bench");
    create(&out)?;
    let fp = write_resolved(&out, &cfg)?;
    let records = format!(
        "fingerprint {fp}\nfps {:.6}\ntime_ms {:.6}\nparams_m {:.6}\nruns {}\n",
        b.fps, b.median_ms, params, b.runs
    );
    write(&out.join("bench.records"), &records)?;
    println!("{:.2} fps  {:.2} ms  {:.4} M params", b.fps, b.median_ms, params);
    Ok(())
}

fn cmd_viz(a: VizArgs) -> Result<()> {
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", a.checkpoint.display()))?;
    let cfg = checkpoint_config(&meta);
    let image = read_rgb(&a.image)?;
    let image_t1 = a.image_t1.as_deref().map(read_rgb).transpose()?;
    let flow = a.flow.as_deref().map(read_flow).transpose()?;
    let sample = FrameSample::new("viz", "0", image.clone(), image_t1, flow, Vec::new());
    let input = prepare_input(&sample, &model.config)?;
    let figs = render(&model, &input, &image, &cfg.eval)?;
    let out = out_dir(a.out, "viz");
    create(&out)?;
    write_resolved(&out, &cfg)?;
    let save = |img: &image::RgbImage, name: &str| -> Result<()> {
        let p = out.join(name);
        img.save(&p).with_context(|| format!("cannot write {}", p.display()))
    };
    save(&figs.prototypes, "prototypes.png")?;
    if figs.semantic_coefficients.is_none() && figs.motion_coefficients.is_none() {
        log::warn!("no detections; wrote the prototype grid only");
        return Ok(());
    }
    if let Some(g) = &figs.semantic_coefficients {
        save(g, "semantic_coefficients.png")?;
    }
    if let Some(g) = &figs.motion_coefficients {
        save(g, "motion_coefficients.png")?;
    }
    save(&figs.semantic_overlay, "semantic_overlay.png")?;
    save(&figs.motion_overlay, "motion_overlay.png")?;
    println!("figures written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Annotate(a) => cmd_annotate(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => return cmd_eval(a),
        Command::Bench(a) => cmd_bench(a)?,
        Command::Viz(a) => cmd_viz(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
