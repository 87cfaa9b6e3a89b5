use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use vsa::config::{Precision, RunConfig};
use vsa::data::{generate_dataset, Dataset, GenConfig, Split};
use vsa::gradcheck::{run_level, Level};
use vsa::model::{ViewPose, VsaModel};
use vsa::ppm::{hstack, write_ppm};
use vsa::rng::Rng;
use vsa::train::checkpoint::scalar_bytes;
use vsa::train::metrics::{smoothed, MetricsLog, StepLog, SMOOTHING_WINDOW};
use vsa::train::pretrain::{run_pretraining, Pretrainer, RunFiles};
use vsa::train::{finetune, linear_probe, Checkpoint};
use vsa::{Float, Tensor, VsaError};

const TRAIN_FILE: &str = "train.vsad";
const TEST_FILE: &str = "test.vsad";

#[derive(Parser)]
#[command(name = "vsa", version, about = "View-synthesis autoencoders: data, pretraining, probing, synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the procedural train and test splits.
    GenData(GenDataArgs),
    /// Self-supervised view-synthesis pretraining.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen encoder features.
    Probe(EvalArgs),
    /// End-to-end fine-tuning with a linear head.
    Finetune(EvalArgs),
    /// Write a source | synthesized | target triplet as PPM.
    Synth(SynthArgs),
    /// Finite-difference gradient checks at fp64.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Training objects; the test split gets a quarter as many.
    #[arg(long, default_value_t = 256)]
    objects: usize,
    #[arg(long)]
    test_objects: Option<usize>,
    #[arg(long, default_value_t = 12)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-view azimuth/elevation jitter in degrees.
    #[arg(long, default_value_t = 0.0)]
    pose_jitter: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.dec_depth=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory holding train.vsad and test.vsad.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many steps (the schedule still spans all epochs).
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, conflicts_with = "scratch")]
    checkpoint: Option<PathBuf>,
    /// Use a randomly initialized encoder.
    #[arg(long)]
    scratch: bool,
    /// Views averaged per prediction (0 = all).
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory or a single .vsad file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    object: usize,
    /// Comma-separated source view indices, one per model source view.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    source_views: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    target_view: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Ops,
    Blocks,
    Model,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "model")]
    level: LevelArg,
    /// Add a check with a deliberately broken backward rule.
    #[arg(long)]
    inject_fault: bool,
}

/// Failure modes mapped to exit codes.
enum Failure {
    /// A check or assertion failed: exit 1.
    Check(String),
    /// Usage, configuration or I/O problem: exit 2.
    Usage(String),
}

impl From<VsaError> for Failure {
    fn from(e: VsaError) -> Self {
        match e {
            VsaError::Io(_) | VsaError::Config(_) | VsaError::Format(_) | VsaError::InvalidArgument(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Probe(a) => eval(a, false),
        Command::Finetune(a) => eval(a, true),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn gen_data(a: GenDataArgs) -> CliResult {
    fs::create_dir_all(&a.out).map_err(VsaError::from)?;
    let base = GenConfig {
        classes: a.classes,
        objects: a.objects,
        views: a.views,
        size: a.size,
        seed: a.seed,
        pose_jitter_deg: a.pose_jitter,
        threads: vsa::parallel::thread_count(),
    };
    let test_objects = a.test_objects.unwrap_or(a.objects / 4);
    for (split, file, objects) in [(Split::Train, TRAIN_FILE, a.objects), (Split::Test, TEST_FILE, test_objects)] {
        let ds = generate_dataset(&GenConfig { objects, ..base.clone() }, split)?;
        let path = a.out.join(file);
        ds.write(&path)?;
        println!("{}: {} objects, {} views, {} bytes", path.display(), ds.len(), ds.views, ds.file_bytes());
    }
    Ok(())
}

fn load_config(c: &ConfigArgs) -> CliResult<RunConfig> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::with_overrides(&text, &c.overrides)?;
    if let Some(d) = &c.data {
        cfg.data.train = d.join(TRAIN_FILE).to_string_lossy().into_owned();
        cfg.data.test = d.join(TEST_FILE).to_string_lossy().into_owned();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn read_dataset(path: &str) -> CliResult<Dataset> {
    Dataset::read(Path::new(path)).map_err(|e| Failure::Usage(format!("{path}: {e}")))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    if cfg.out_dir.is_empty() {
        PathBuf::from("runs/default")
    } else {
        PathBuf::from(&cfg.out_dir)
    }
}

fn checkpoint_precision(path: &Path) -> CliResult<Precision> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(if scalar_bytes(&bytes)? == 8 { Precision::F64 } else { Precision::F32 })
}

fn pretrain(a: PretrainArgs) -> CliResult {
    let precision = match &a.resume {
        Some(p) => checkpoint_precision(p)?,
        None => load_config(&a.cfg)?.precision,
    };
    match precision {
        Precision::F32 => pretrain_as::<f32>(a),
        Precision::F64 => pretrain_as::<f64>(a),
    }
}

fn pretrain_as<T: Float>(a: PretrainArgs) -> CliResult {
    let (cfg, ck) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::<T>::load(p)?;
            let mut cfg = ck.config.clone();
            if let Some(o) = &a.cfg.out {
                cfg.out_dir = o.to_string_lossy().into_owned();
            }
            if let Some(d) = &a.cfg.data {
                cfg.data.train = d.join(TRAIN_FILE).to_string_lossy().into_owned();
            }
            (cfg, Some(ck))
        }
        None => {
            let mut cfg = load_config(&a.cfg)?;
            if let Some(e) = a.epochs {
                cfg.optim.total_epochs = e;
            }
            (cfg, None)
        }
    };
    let train = read_dataset(&cfg.data.train)?;
    let mut trainer = match &ck {
        Some(ck) => {
            let ck = Checkpoint { config: cfg.clone(), ..ck.clone() };
            Pretrainer::<T>::resume(&ck, &train)?
        }
        None => Pretrainer::<T>::new(cfg.clone(), &train)?,
    };
    trainer.threads = vsa::parallel::thread_count();
    let files = RunFiles::new(out_dir(&cfg));
    let out = run_pretraining(&mut trainer, a.max_steps, Some(&files))?;
    let losses: Vec<f64> = out.curve.iter().map(|e| e.loss).collect();
    match smoothed(&losses, SMOOTHING_WINDOW).last() {
        Some(l) => println!("step {}: smoothed loss {l:.6}", trainer.step),
        None => println!("step {}: no steps run", trainer.step),
    }
    println!("checkpoint: {}", files.checkpoint().display());
    Ok(())
}

fn eval(a: EvalArgs, tune: bool) -> CliResult {
    if a.checkpoint.is_none() && !a.scratch {
        return Err(Failure::Usage("pass --checkpoint or --scratch".into()));
    }
    let precision = match &a.checkpoint {
        Some(p) => checkpoint_precision(p)?,
        None => load_config(&a.cfg)?.precision,
    };
    match precision {
        Precision::F32 => eval_as::<f32>(a, tune),
        Precision::F64 => eval_as::<f64>(a, tune),
    }
}

fn eval_as<T: Float>(a: EvalArgs, tune: bool) -> CliResult {
    let (mut cfg, model) = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::<T>::load(p)?;
            let model = ck.model()?;
            let mut cfg = ck.config.clone();
            // evaluation settings come from the command line, the model from the checkpoint
            let given = load_config(&a.cfg)?;
            cfg.probe = given.probe;
            cfg.finetune = given.finetune;
            if a.cfg.data.is_some() {
                cfg.data = given.data;
            }
            if a.cfg.out.is_some() {
                cfg.out_dir = given.out_dir;
            }
            if a.cfg.seed.is_some() {
                cfg.seed = given.seed;
            }
            (cfg, model)
        }
        None => {
            let cfg = load_config(&a.cfg)?;
            let model = VsaModel::<T>::new(cfg.model.clone(), cfg.seed)?;
            (cfg, model)
        }
    };
    if let Some(v) = a.views {
        cfg.probe.views = v;
        cfg.finetune.views = v;
    }
    if let Some(e) = a.epochs {
        cfg.probe.optim.total_epochs = e;
        cfg.finetune.optim.total_epochs = e;
    }
    let train = read_dataset(&cfg.data.train)?;
    let test = read_dataset(&cfg.data.test)?;
    let dir = out_dir(&cfg);
    cfg.write_to_dir(&dir)?;
    let (name, result) = if tune {
        let (model, r) = finetune(model, &train, &test, &cfg.finetune, cfg.seed)?;
        Checkpoint::from_model(&model, None, &cfg, 0, cfg.seed).save(&dir.join("finetuned.vsack"))?;
        ("finetune", r)
    } else {
        ("probe", linear_probe(&model, &train, &test, &cfg.probe, cfg.seed)?)
    };
    let mut log = MetricsLog::append(&dir.join(format!("{name}_metrics.csv")))?;
    for e in &result.curve {
        log.write(e)?;
    }
    let last = result.curve.last().map_or(0, |e| e.step + 1);
    log.write(&StepLog { step: last, lr: 0.0, loss: f64::NAN, acc: Some(result.test_acc) })?;
    println!("{name}: train accuracy {:.4}, test accuracy {:.4}", result.train_acc, result.test_acc);
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    match checkpoint_precision(&a.checkpoint)? {
        Precision::F32 => synth_as::<f32>(a),
        Precision::F64 => synth_as::<f64>(a),
    }
}

fn synth_as<T: Float>(a: SynthArgs) -> CliResult {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    let model = ck.model()?;
    let path = if a.data.is_dir() {
        a.data.join(match a.split {
            SplitArg::Train => TRAIN_FILE,
            SplitArg::Test => TEST_FILE,
        })
    } else {
        a.data.clone()
    };
    let data = read_dataset(&path.to_string_lossy())?;
    let sample = data
        .samples
        .get(a.object)
        .ok_or_else(|| Failure::Usage(format!("object {} out of range ({} objects)", a.object, data.len())))?;
    for &v in a.source_views.iter().chain([&a.target_view]) {
        if v >= data.views {
            return Err(Failure::Usage(format!("view {v} out of range ({} views)", data.views)));
        }
    }
    let pose = |v: usize| ViewPose { index: v, camera: sample.poses[v].clone() };
    let sources: Vec<Tensor<T>> = a.source_views.iter().map(|&v| sample.images[v].cast()).collect();
    let source_poses: Vec<ViewPose> = a.source_views.iter().map(|&v| pose(v)).collect();
    let mut rng = Rng::seed_from_u64(ck.seed);
    let out = model.synthesize(&sources, &source_poses, &pose(a.target_view), model.cfg.mask_ratio, &mut rng)?;
    let out: Tensor<f32> = out.cast();
    let target = &sample.images[a.target_view];
    let mut panel: Vec<&Tensor<f32>> = a.source_views.iter().map(|&v| &sample.images[v]).collect();
    panel.push(&out);
    panel.push(target);
    write_ppm(&a.out, &hstack(&panel, 2)?)?;
    let mse = out.data().iter().zip(target.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>()
        / target.numel() as f64;
    println!("{}: synthesized view {} of object {} (mse {mse:.6})", a.out.display(), a.target_view, a.object);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let level = match a.level {
        LevelArg::Ops => Level::Ops,
        LevelArg::Blocks => Level::Blocks,
        LevelArg::Model => Level::Model,
    };
    let items = run_level(level, a.inject_fault)?;
    let mut failed = 0;
    for it in &items {
        let status = if it.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max rel err {:.3e}  (tol {:.0e})  {status}", it.name, it.max_rel_err, it.tolerance);
        failed += usize::from(!it.passed());
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} gradient checks failed", items.len())));
    }
    println!("all {} checks passed", items.len());
    Ok(())
}
