//! The `vidgan` command line: one subcommand per pipeline stage.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::datasets::SpriteWorld;
use crate::evalsvc::{self, AggregateFilter, ServerConfig};
use crate::nets::checkpoint::ModelCheckpoint;
use crate::nets::export::encode_gif;
use crate::nets::{sample_latent, Discriminator, NetConfig, Scale};
use crate::replearn::{self, FinetuneConfig, Init, LabeledClipSet, Split};
use crate::rng::Rng;
use crate::tensor::{BatchNormMode, Tensor};
use crate::training::{
    self, first_frames, run_training, sample_baseline, AeConfig, Autoencoder, CheckpointPlan, FutureTrainer, GanTrainer,
    RecNorm, Trainer,
};
use crate::videoio::{self, read_clip, write_clip, Image, IngestConfig};

pub use config::{FileConfig, NetSection, RunConfig, TrainSection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "vidgan", version, about = "Video GANs at desk scale: data, training, generation and evaluation")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Metrics destination; stdout when absent.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Frame directories listed in a manifest -> stabilized, normalized clips.
    Ingest(IngestArgs),
    /// Adversarial training of a one- or two-stream generator.
    TrainGan(TrainCmd),
    /// First-frame conditioned training.
    TrainFuture(TrainCmd),
    /// Autoencoder plus latent Gaussian mixture baseline.
    TrainBaseline(BaselineArgs),
    /// Sample clips from a checkpoint.
    Generate(GenerateArgs),
    /// Predict a clip from a single frame.
    PredictFuture(PredictArgs),
    /// Fine-tune a discriminator for action classification.
    Finetune(FinetuneArgs),
    /// Label-fraction sweep, pretrained against random initialization.
    Sweep(SweepArgs),
    /// Top-activating regions of one hidden unit.
    VisualizeUnits(VisualizeArgs),
    /// Clip files -> looping GIF animations.
    ExportGif(ExportArgs),
    /// Two-alternative forced-choice evaluation server.
    ServeEval(ServeArgs),
    /// Preference table from an evaluation store.
    Aggregate(AggregateArgs),
}

/// Every train and net field; unset flags fall back to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// TOML file with top-level `seed`/`arch` and `[train]`/`[net]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// one-stream | two-stream
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub lambda_mask: Option<f64>,
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    /// l2 | l1
    #[arg(long, value_parser = parse_rec_norm)]
    pub rec_norm: Option<RecNorm>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// full | half | quarter
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
}

fn parse_rec_norm(s: &str) -> Result<RecNorm, String> {
    match s {
        "l2" => Ok(RecNorm::L2),
        "l1" => Ok(RecNorm::L1),
        _ => Err(format!("expected l2 or l1, got {s:?}")),
    }
}

/// Training clips: a directory of `.tvclip` files or a synthetic sprite set.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of synthetic moving-sprite clips instead of `--data`.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Final checkpoint path.
    #[arg(long, default_value = "model.tvgan")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Keep only videos with this tag; repeatable.
    #[arg(long = "tag")]
    pub tags: Vec<String>,
    #[arg(long)]
    pub no_stabilize: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: u64,
    #[arg(long, default_value_t = 256)]
    pub components: usize,
    #[arg(long, default_value = "baseline.tvgan")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a GIF next to each clip.
    #[arg(long)]
    pub gif: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A `.tvclip` (its first frame is used) or an image file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gif: bool,
}

/// Labeled clips: `<dir>/{train,test}/<class>/*.tvclip` or the synthetic
/// sprite-action task.
#[derive(Debug, Clone, Default, Args)]
pub struct LabeledArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Clips per class for the synthetic action task (test gets half).
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Net scale for random initialization and synthetic clips.
    #[arg(long, default_value = "quarter")]
    pub scale: String,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// GAN checkpoint whose discriminator initializes the classifier;
    /// random initialization when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: LabeledArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Report the linear probe on frozen features as well.
    #[arg(long)]
    pub probe: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: LabeledArgs,
    #[arg(long, value_delimiter = ',', default_values_t = replearn::DEFAULT_FRACTIONS)]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub unit: usize,
    #[arg(long, default_value_t = 8)]
    pub top: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// A `.tvclip` file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    /// Output `.gif` for a single clip, directory otherwise.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub upscale: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// `<model>/[<category>/]*.gif` tree.
    #[arg(long)]
    pub media: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Static UI bundle served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: std::net::SocketAddr,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Rater ids to leave out.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs it, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    workdir: &'a Path,
    log: Option<PathBuf>,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn metrics(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.log {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir).map_err(rt)?;
                }
                Box::new(BufWriter::new(File::create(p).map_err(rt)?))
            }
            None => Box::new(std::io::stdout().lock()),
        })
    }

    fn emit(&self, out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(rt)?;
        match out {
            Some(p) => write_file(&self.path(p), text.as_bytes()),
            None => {
                println!("{text}");
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(rt)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        workdir: &cli.workdir,
        log: cli.log.as_ref().map(|p| cli.workdir.join(p)),
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::TrainGan(a) => train_gan(&ctx, a),
        Command::TrainFuture(a) => train_future(&ctx, a),
        Command::TrainBaseline(a) => train_baseline(&ctx, a),
        Command::Generate(a) => generate(&ctx, a),
        Command::PredictFuture(a) => predict_future(&ctx, a),
        Command::Finetune(a) => finetune(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::VisualizeUnits(a) => visualize(&ctx, a),
        Command::ExportGif(a) => export_gif(&ctx, a),
        Command::ServeEval(a) => serve_eval(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
    }
}

fn resolve(ctx: &Ctx, args: &TrainArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => FileConfig::load(&ctx.path(p))?,
        None => FileConfig::default(),
    };
    RunConfig::resolve(args, &file, true)
}

/// `.tvclip` files under `dir`, recursively, in path order.
pub fn find_clips(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "tvclip") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_data(ctx: &Ctx, data: &DataArgs, net: &NetConfig, seed: u64) -> Result<Vec<Tensor>> {
    let clips = match (&data.data, data.synthetic) {
        (Some(_), Some(_)) => return Err(CliError::Usage("pass only one of --data and --synthetic".into())),
        (None, None) => return Err(CliError::Usage("missing required flag --data (or --synthetic)".into())),
        (None, Some(n)) => SpriteWorld::new(net.frames, net.size).moving_dataset(n, seed),
        (Some(dir), None) => {
            let files = find_clips(&ctx.path(dir)).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
            files.iter().map(|f| read_clip(f)).collect::<Result<Vec<_>, _>>().map_err(rt)?
        }
    };
    if clips.is_empty() {
        return Err(CliError::Runtime("no training clips found".into()));
    }
    let want = net.clip_shape();
    if let Some(bad) = clips.iter().find(|c| c.shape() != want) {
        return Err(CliError::Runtime(format!("clip shape {:?} does not match the model's {want:?}", bad.shape())));
    }
    Ok(clips)
}

fn train_loop<T: Trainer>(ctx: &Ctx, trainer: &mut T, data: &[Tensor], iters: u64, every: u64, out: &Path) -> Result<()> {
    let out = ctx.path(out);
    let plan = (every > 0).then(|| CheckpointPlan {
        dir: out.parent().unwrap_or(Path::new(".")).join("checkpoints"),
        every,
    });
    let mut log = ctx.metrics()?;
    run_training(trainer, data, iters, Some(&mut *log), plan.as_ref(), |_| {}).map_err(rt)?;
    log.flush().map_err(rt)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(rt)?;
    }
    trainer.save(&out).map_err(rt)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn train_gan(ctx: &Ctx, a: &TrainCmd) -> Result<()> {
    let cfg = resolve(ctx, &a.train)?;
    let data = load_data(ctx, &a.data, &cfg.net, cfg.train.seed)?;
    let mut t = GanTrainer::new(cfg.net, cfg.arch, cfg.train).map_err(rt)?;
    train_loop(ctx, &mut t, &data, cfg.train.max_iterations, cfg.train.checkpoint_every, &a.out)
}

fn train_future(ctx: &Ctx, a: &TrainCmd) -> Result<()> {
    let cfg = resolve(ctx, &a.train)?;
    let data = load_data(ctx, &a.data, &cfg.net, cfg.train.seed)?;
    let mut t = FutureTrainer::new(cfg.net, cfg.arch, cfg.train).map_err(rt)?;
    train_loop(ctx, &mut t, &data, cfg.train.max_iterations, cfg.train.checkpoint_every, &a.out)
}

fn train_baseline(ctx: &Ctx, a: &BaselineArgs) -> Result<()> {
    let cfg = resolve(ctx, &a.train)?;
    let data = load_data(ctx, &a.data, &cfg.net, cfg.train.seed)?;
    let ae_cfg = AeConfig {
        steps: a.steps,
        batch_size: cfg.train.batch_size.min(data.len()).max(2),
        lr: cfg.train.lr,
        beta1: cfg.train.beta1,
        seed: cfg.train.seed,
    };
    let mut log = ctx.metrics()?;
    let mut io_err = None;
    let mut ae = training::train_autoencoder(&data, cfg.net, &ae_cfg, |it, loss| {
        if let Err(e) = writeln!(log, "{}", json!({"iter": it, "rec": loss})) {
            io_err.get_or_insert(e);
        }
    })
    .map_err(rt)?;
    if let Some(e) = io_err {
        return Err(rt(e));
    }
    log.flush().map_err(rt)?;
    let codes = encode_all(&mut ae, &data)?;
    let gmm = training::fit_gmm(&codes, a.components, cfg.train.seed).map_err(rt)?;
    let out = ctx.path(&a.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(rt)?;
    }
    ae.checkpoint(cfg.train.seed, a.steps, Some(&gmm)).save(&out).map_err(rt)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn encode_all(ae: &mut Autoencoder, clips: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut codes = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(16) {
        let z = ae.encode(&Tensor::stack(chunk).map_err(rt)?, BatchNormMode::Eval).map_err(rt)?;
        let d = z.len() / chunk.len();
        codes.extend(z.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(codes)
}

fn load_checkpoint(ctx: &Ctx, p: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(&ctx.path(p)).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}

fn save_clip(path: &Path, clip: &Tensor, gif: bool) -> Result<()> {
    write_clip(path, clip).map_err(rt)?;
    if gif {
        write_file(&path.with_extension("gif"), &encode_gif(clip, 4).map_err(rt)?)?;
    }
    Ok(())
}

/// `count` clips from a GAN or baseline checkpoint, a pure function of the
/// checkpoint and `seed`.
pub fn generate_clips(ck: &ModelCheckpoint, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    match ck.meta.kind.as_str() {
        "gan" => {
            let mut g = GanTrainer::from_checkpoint(ck).map_err(rt)?.generator;
            let z = sample_latent(count, g.config.latent_dim, &mut Rng::new(seed));
            let clips = g.sample(&z, BatchNormMode::Eval).map_err(rt)?;
            Ok((0..count).map(|i| clips.outer(i)).collect())
        }
        "baseline" => {
            let (mut ae, gmm) = Autoencoder::from_checkpoint(ck).map_err(rt)?;
            let gmm = gmm.ok_or_else(|| CliError::Runtime("baseline checkpoint has no mixture".into()))?;
            let root = Rng::new(seed);
            (0..count)
                .map(|i| sample_baseline(&gmm, &mut ae.decoder, root.derive(i as u64).next_u64()).map_err(rt))
                .collect()
        }
        other => Err(CliError::Runtime(format!("cannot generate from a {other:?} checkpoint"))),
    }
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let clips = generate_clips(&ck, a.count, a.seed)?;
    let out = ctx.path(&a.out);
    std::fs::create_dir_all(&out).map_err(rt)?;
    let mut names = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let name = format!("clip_{i:04}.tvclip");
        save_clip(&out.join(&name), c, a.gif)?;
        names.push(name);
    }
    let manifest = json!({
        "kind": ck.meta.kind,
        "checkpoint": a.checkpoint,
        "seed": a.seed,
        "count": a.count,
        "clips": names,
    });
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(rt)?.as_bytes())
}

fn predict_future(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    if ck.meta.kind != "future" {
        return Err(CliError::Runtime(format!("expected a future checkpoint, got {:?}", ck.meta.kind)));
    }
    let mut t = FutureTrainer::from_checkpoint(&ck).map_err(rt)?;
    let size = ck.meta.config.size;
    let input = ctx.path(&a.input);
    let x0 = if input.extension().is_some_and(|e| e == "tvclip") {
        let clip = read_clip(&input).map_err(rt)?;
        first_frames(&Tensor::stack(&[clip]).map_err(rt)?)
    } else {
        let img = Image::load(&input).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
        videoio::to_clip(&[img], size).reshape(&[1, 3, size, size]).map_err(rt)?
    };
    if x0.shape() != [1, 3, size, size] {
        return Err(CliError::Runtime(format!("input frame {:?} does not match the model's {size}x{size}", x0.shape())));
    }
    let clip = t.predict(&x0, BatchNormMode::Eval).map_err(rt)?.outer(0);
    let out = ctx.path(&a.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(rt)?;
    }
    save_clip(&out, &clip, a.gif)
}

fn labeled_sets(ctx: &Ctx, a: &LabeledArgs, seed: u64) -> Result<(LabeledClipSet, LabeledClipSet, NetConfig)> {
    let scale = Scale::parse(&a.scale).ok_or_else(|| CliError::Usage(format!("unknown scale {:?}", a.scale)))?;
    let net = NetConfig::at_scale(scale);
    match (&a.data, a.synthetic) {
        (Some(_), Some(_)) => Err(CliError::Usage("pass only one of --data and --synthetic".into())),
        (None, None) => Err(CliError::Usage("missing required flag --data (or --synthetic)".into())),
        (None, Some(per)) => {
            let w = SpriteWorld::new(net.frames, net.size);
            let train = LabeledClipSet::sprite_actions(&w, per, seed, Split::Train);
            let test = LabeledClipSet::sprite_actions(&w, per.div_ceil(2), seed.wrapping_add(1_000_003), Split::Test);
            Ok((train, test, net))
        }
        (Some(dir), None) => {
            let (train, test, _) = replearn::load_labeled_dir(&ctx.path(dir)).map_err(rt)?;
            Ok((train, test, net))
        }
    }
}

fn discriminator_of(ck: &ModelCheckpoint) -> Result<Discriminator> {
    match ck.meta.kind.as_str() {
        "gan" => Ok(GanTrainer::from_checkpoint(ck).map_err(rt)?.discriminator),
        "future" => Ok(FutureTrainer::from_checkpoint(ck).map_err(rt)?.discriminator),
        other => Err(CliError::Runtime(format!("{other:?} checkpoint has no discriminator"))),
    }
}

fn finetune(ctx: &Ctx, a: &FinetuneArgs) -> Result<()> {
    let (train, test, net) = labeled_sets(ctx, &a.data, a.seed)?;
    let backbone = a.checkpoint.as_ref().map(|p| load_checkpoint(ctx, p).and_then(|c| discriminator_of(&c))).transpose()?;
    let init = match &backbone {
        Some(d) => Init::Pretrained(d.clone()),
        None => Init::Random(net),
    };
    let cfg = FinetuneConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        dropout: a.dropout,
        seed: a.seed,
        ..Default::default()
    };
    let r = replearn::finetune(init, &train, &test, &cfg).map_err(rt)?;
    let probe = match (&backbone, a.probe) {
        (Some(d), true) => Some(replearn::linear_probe(d, &train, &test, 200).map_err(rt)?),
        _ => None,
    };
    ctx.emit(
        a.out.as_deref(),
        &json!({
            "init": if backbone.is_some() { "finetuned" } else { "random" },
            "accuracy": r.accuracy,
            "chance": 1.0 / train.classes as f64,
            "linear_probe": probe,
            "train": train.len(),
            "test": test.len(),
            "final_loss": r.losses.last(),
        }),
    )
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let d = discriminator_of(&ck)?;
    let (train, test, _) = labeled_sets(ctx, &a.data, a.seeds.first().copied().unwrap_or(0))?;
    let cfg = FinetuneConfig {
        steps: a.steps,
        lr: a.lr,
        ..Default::default()
    };
    let table = replearn::data_fraction_sweep(&d, &train, &test, &a.fractions, &a.seeds, &cfg).map_err(rt)?;
    write_file(&ctx.path(&a.out), table.to_csv().as_bytes())?;
    for s in table.summary() {
        eprintln!(
            "fraction {:>6}: finetuned {:.3} random {:.3} gain {:.3}",
            s.fraction, s.finetuned, s.random, s.gain
        );
    }
    Ok(())
}

fn visualize(ctx: &Ctx, a: &VisualizeArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let d = discriminator_of(&ck)?;
    let clips = load_data(ctx, &a.data, &ck.meta.config, a.seed)?;
    let report = replearn::visualize_unit(&d, a.layer, a.unit, &clips, a.top).map_err(|e| match e {
        replearn::ReplearnError::InvalidUnit(m) => CliError::Usage(format!("invalid unit: {m}")),
        other => rt(other),
    })?;
    replearn::write_report(&report, &clips, &ctx.path(&a.out)).map_err(rt)?;
    eprintln!("{} entries, degenerate: {}", report.entries.len(), report.degenerate);
    Ok(())
}

fn export_gif(ctx: &Ctx, a: &ExportArgs) -> Result<()> {
    let input = ctx.path(&a.input);
    let out = ctx.path(&a.out);
    if input.is_dir() {
        let files = find_clips(&input).map_err(rt)?;
        for f in &files {
            let rel = f.strip_prefix(&input).unwrap_or(f).with_extension("gif");
            let clip = read_clip(f).map_err(rt)?;
            write_file(&out.join(rel), &encode_gif(&clip, a.upscale).map_err(rt)?)?;
        }
        eprintln!("wrote {} animations under {}", files.len(), out.display());
    } else {
        let clip = read_clip(&input).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
        write_file(&out, &encode_gif(&clip, a.upscale).map_err(rt)?)?;
    }
    Ok(())
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let entries = videoio::read_manifest(&ctx.path(&a.manifest)).map_err(|e| match e {
        videoio::VideoError::Manifest(m) => CliError::Usage(m),
        other => rt(other),
    })?;
    let mut cfg = IngestConfig {
        frames: a.frames,
        size: a.size,
        fps: a.fps,
        tags: a.tags.clone(),
        ..Default::default()
    };
    if a.no_stabilize {
        cfg.stabilize.rms_threshold = f64::INFINITY;
    }
    let report = videoio::ingest(&entries, &ctx.path(&a.out), &cfg).map_err(rt)?;
    eprintln!(
        "{} clips from {} videos, {} segments dropped",
        report.clip_count(),
        report.videos.len(),
        report.dropped_segments()
    );
    ctx.emit(None, &serde_json::to_value(&report).map_err(rt)?)
}

fn serve_eval(ctx: &Ctx, a: &ServeArgs) -> Result<()> {
    let cfg = ServerConfig {
        bind: a.bind,
        store_dir: ctx.path(&a.store),
        media_root: ctx.path(&a.media),
        static_dir: a.static_dir.as_ref().map(|p| ctx.path(p)),
        seed: a.seed,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(rt)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(cfg.bind).await.map_err(rt)?;
        eprintln!("serving on http://{}", listener.local_addr().map_err(rt)?);
        evalsvc::serve(listener, &cfg).await.map_err(rt)
    })
}

fn aggregate(ctx: &Ctx, a: &AggregateArgs) -> Result<()> {
    let records = evalsvc::load_records(&ctx.path(&a.store)).map_err(rt)?;
    let filter = AggregateFilter {
        exclude_raters: a.exclude.iter().cloned().collect(),
    };
    let table = evalsvc::aggregate(&records, &filter);
    ctx.emit(a.out.as_deref(), &serde_json::to_value(&table).map_err(rt)?)
}
