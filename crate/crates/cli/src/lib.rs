//! `connseg` command-line front end.
//!
//! Every subcommand reads and writes volumes in the raw+JSON format and
//! echoes its parsed arguments into `<out-dir>/<command>_manifest.json`.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use connseg::fuzzy::{AffinityParams, ConsolidationStatus};
use connseg::metrics::{evaluate, Domain, MetricsTable};
use connseg::model::{
    load_checkpoint, predict_volume, save_checkpoint, AdamConfig, ModelConfig, TrainConfig, Trainer, DEFAULT_LOSS_EPS,
};
use connseg::phantom::{generate, PhantomConfig};
use connseg::pipeline::{preprocess_ct, segment, Preprocessed};
use connseg::preprocess::{HuWindow, LungParams};
use connseg::tiler::{sample_training_cubes, ChannelGrid, Sample, SamplingPolicy, TileSpec};
use connseg::volio::{self, Dtype, VolumeData, VolumeHeader, VolumeKind};
use connseg::{decode_connectivity, encode_connectivity, Error, CHANNELS};

pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_EMPTY_RESULT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_BAD_FORMAT: i32 = 6;

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) => EXIT_INVALID_INPUT,
        Error::EmptyResult(_) => EXIT_EMPTY_RESULT,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_IO,
        Error::Truncated { .. } | Error::UnknownDtype(_) | Error::MalformedHeader { .. } => EXIT_BAD_FORMAT,
    }
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    match parts.as_slice() {
        [a, b, c] => {
            let p = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
            Ok([p(a)?, p(b)?, p(c)?])
        }
        _ => Err(format!("expected three comma-separated sizes Z,H,W, got {s:?}")),
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "connseg", version, about = "Connectivity-based airway segmentation pipeline")]
pub struct Cli {
    /// Worker threads; 1 makes every stage bit-reproducible.
    #[arg(long, global = true, env = "CONNSEG_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a synthetic chest phantom with airway and lung ground truth.
    Phantom(PhantomArgs),
    /// Lung mask, lung distance map and windowed intensities from a CT.
    Preprocess(PreprocessArgs),
    /// Binary mask to 26-channel connectivity labels.
    Encode(EncodeArgs),
    /// 26-channel connectivity cube back to a mask.
    Decode(DecodeArgs),
    /// Train the network on preprocessed volumes.
    Train(TrainArgs),
    /// Tiled inference, decoding, lung masking and consolidation.
    Predict(PredictArgs),
    /// DSC / TPR / FPR / PPV table for predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, value_parser = parse_triple, default_value = "64,64,64")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 3.0)]
    pub trunk_radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<prefix>ct`, `<prefix>airway` and `<prefix>lungs`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct WindowArgs {
    #[arg(long, default_value_t = -1000.0, allow_negative_numbers = true)]
    pub hu_lo: f32,
    #[arg(long, default_value_t = 600.0, allow_negative_numbers = true)]
    pub hu_hi: f32,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// CT volume stem (HU intensities).
    #[arg(long)]
    pub ct: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, default_value_t = -600.0, allow_negative_numbers = true)]
    pub lung_threshold: f32,
    #[arg(long, default_value_t = 1.5)]
    pub hull_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smooth_sigma: f64,
    /// Air components below this fraction of the volume are ignored.
    #[arg(long, default_value_t = 0.001)]
    pub min_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(Debug, Args, Serialize)]
pub struct TileArgs {
    #[arg(long, value_parser = parse_triple, default_value = "32,64,64")]
    pub cube_size: [usize; 3],
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Airway ground-truth mask stem.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tiles: TileArgs,
    #[arg(long, value_parser = parse_triple, default_value = "8,16,16")]
    pub train_stride: [usize; 3],
    #[arg(long, default_value_t = 0.25)]
    pub bg_keep_prob: f64,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub samples_per_epoch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub flip_prob: f64,
    #[arg(long, default_value_t = 4)]
    pub scales: usize,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    /// Replace batch norm with identity.
    #[arg(long)]
    pub no_batchnorm: bool,
    /// Train a 1-channel mask head instead of connectivity channels.
    #[arg(long)]
    pub no_conn: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from this checkpoint stem.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsDomain {
    Full,
    Lung,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tiles: TileArgs,
    #[arg(long, value_parser = parse_triple, default_value = "16,32,32")]
    pub test_stride: [usize; 3],
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = AffinityParams::default().sigma)]
    pub fc_sigma: f64,
    #[arg(long, default_value_t = AffinityParams::default().theta)]
    pub fc_theta: f64,
    /// Skip fuzzy-connectedness consolidation.
    #[arg(long)]
    pub no_fc: bool,
    /// Also write the stitched probabilities, decoded and lung-masked candidates.
    #[arg(long)]
    pub save_intermediate: bool,
    /// Tiles per forward pass.
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Prediction mask stems, one per case.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth mask stems, matching `--pred` in order.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricsDomain::Full)]
    pub metrics_domain: MetricsDomain,
    /// Lung mask stems for `--metrics-domain lung`.
    #[arg(long, num_args = 1..)]
    pub lung: Vec<PathBuf>,
    /// Case names; defaults to 1, 2, ...
    #[arg(long, num_args = 1..)]
    pub case: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub type CmdResult<T = ()> = Result<T, Error>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_manifest<A: Serialize>(dir: &Path, command: &str, args: &A, threads: Option<usize>) -> CmdResult {
    ensure_dir(dir)?;
    let body = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": threads,
        "args": args,
    });
    let path = dir.join(format!("{command}_manifest.json"));
    let text = serde_json::to_string_pretty(&body).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))
}

/// Stem paths inside a preprocess output directory.
pub mod names {
    pub const LUNG: &str = "lung";
    pub const DISTANCE: &str = "distance";
    pub const NORMALIZED: &str = "normalized";
    pub const CHECKPOINT: &str = "checkpoint";
    pub const PROBABILITY: &str = "probability";
    pub const DECODED: &str = "decoded";
    pub const MASKED: &str = "masked";
    pub const SEGMENTATION: &str = "segmentation";
    pub const LOSS_CURVE: &str = "loss_curve.csv";
    pub const LOSS_STEPS: &str = "loss_steps.csv";
}

pub fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let t = cli.threads;
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a, t),
        Command::Preprocess(a) => cmd_preprocess(a, t),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Train(a) => cmd_train(a, t),
        Command::Predict(a) => cmd_predict(a, t),
        Command::Evaluate(a) => cmd_evaluate(a, t),
    }
}

fn prefixed(prefix: &Path, name: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(name);
    PathBuf::from(s)
}

pub fn cmd_phantom(a: &PhantomArgs, threads: Option<usize>) -> CmdResult {
    let cfg = PhantomConfig {
        shape: a.shape,
        depth: a.depth,
        trunk_radius: a.trunk_radius,
        seed: a.seed,
        ..Default::default()
    };
    let p = generate(&cfg)?;
    let sp = p.ct.spacing();
    volio::write_scalar(&prefixed(&a.out_prefix, "ct"), &p.ct, VolumeKind::Intensity)?;
    volio::write_mask(&prefixed(&a.out_prefix, "airway"), &p.airway, sp)?;
    volio::write_mask(&prefixed(&a.out_prefix, "lungs"), &p.lungs, sp)?;
    let dir = a.out_prefix.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_manifest(dir, "phantom", &serde_json::json!({ "cli": a, "phantom": cfg }), threads)?;
    log::info!("phantom: {} airway voxels, {} lung voxels", p.airway.count(), p.lungs.count());
    Ok(())
}

pub fn cmd_preprocess(a: &PreprocessArgs, threads: Option<usize>) -> CmdResult {
    let ct = volio::read_scalar(&a.ct)?;
    let window = HuWindow::new(a.window.hu_lo, a.window.hu_hi)?;
    let params = LungParams {
        sigma: a.smooth_sigma,
        threshold: a.lung_threshold,
        hull_ratio: a.hull_ratio,
        min_fraction: a.min_fraction,
    };
    let pre = preprocess_ct(&ct, &window, &params)?;
    ensure_dir(&a.out_dir)?;
    volio::write_mask(&a.out_dir.join(names::LUNG), &pre.lung, ct.spacing())?;
    volio::write_scalar(&a.out_dir.join(names::DISTANCE), &pre.distance, VolumeKind::Distance)?;
    volio::write_scalar(&a.out_dir.join(names::NORMALIZED), &pre.normalized, VolumeKind::Intensity)?;
    write_manifest(&a.out_dir, "preprocess", a, threads)?;
    log::info!("preprocess: lung mask of {} voxels", pre.lung.count());
    Ok(())
}

pub fn load_preprocessed(dir: &Path) -> CmdResult<Preprocessed> {
    let pre = Preprocessed {
        lung: volio::read_mask(&dir.join(names::LUNG))?,
        distance: volio::read_scalar(&dir.join(names::DISTANCE))?,
        normalized: volio::read_scalar(&dir.join(names::NORMALIZED))?,
    };
    let s = pre.lung.shape();
    if pre.distance.shape() != s || pre.normalized.shape() != s {
        return Err(Error::InvalidInput(format!("{} holds volumes of different shapes", dir.display())));
    }
    Ok(pre)
}

pub fn cmd_encode(a: &EncodeArgs) -> CmdResult {
    let (h, _) = volio::read_volume(&a.mask)?;
    let mask = volio::read_mask(&a.mask)?;
    volio::write_cube(&a.out, &encode_connectivity(&mask), h.spacing)
}

pub fn cmd_decode(a: &DecodeArgs) -> CmdResult {
    let h = volio::read_header(&a.cube)?;
    let cube = volio::read_cube(&a.cube)?;
    let mask = decode_connectivity(&cube, a.threshold)?;
    volio::write_mask(&a.out, &mask, h.spacing)
}

fn append_line(path: &Path, header: &str, line: &str) -> CmdResult {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    if fresh {
        writeln!(f, "{header}").map_err(io_err(path))?;
    }
    writeln!(f, "{line}").map_err(io_err(path))
}

pub fn cmd_train(a: &TrainArgs, threads: Option<usize>) -> CmdResult {
    let pre = load_preprocessed(&a.data_dir)?;
    let airway = volio::read_mask(&a.gt)?;
    if airway.shape() != pre.lung.shape() {
        return Err(Error::InvalidInput("ground truth and preprocessed volumes differ in shape".into()));
    }
    let spec = TileSpec::new(a.tiles.cube_size, a.train_stride)?;
    let model = ModelConfig {
        scales: a.scales,
        base_channels: a.base_channels,
        batchnorm: !a.no_batchnorm,
        out_channels: if a.no_conn { 1 } else { CHANNELS },
        ..Default::default()
    };
    model.validate()?;
    model.check_input(spec.cube_shape())?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        samples_per_epoch: a.samples_per_epoch,
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            ..Default::default()
        },
        loss_eps: DEFAULT_LOSS_EPS,
        flip_prob: a.flip_prob,
        seed: a.seed,
    };
    let mut trainer = match &a.resume {
        Some(stem) => {
            let ck = load_checkpoint(stem)?;
            if ck.params.config != model {
                return Err(Error::InvalidInput(format!(
                    "checkpoint model {:?} differs from the requested {:?}",
                    ck.params.config, model
                )));
            }
            Trainer::resume(ck, config)?
        }
        None => Trainer::new(&model, config)?,
    };
    ensure_dir(&a.out_dir)?;
    write_manifest(&a.out_dir, "train", a, threads)?;
    let training = serde_json::to_value(a).expect("args serialize");
    let pool: Vec<Sample> = sample_training_cubes(
        &pre.normalized,
        &airway,
        &pre.lung,
        &pre.distance,
        &spec,
        SamplingPolicy {
            bg_keep_prob: a.bg_keep_prob,
        },
        a.seed,
    )?
    .collect();
    log::info!("train: {} samples in the pool, {} trainable parameters", pool.len(), trainer.params.trainable_count());
    let ck_stem = a.out_dir.join(names::CHECKPOINT);
    if trainer.epoch == 0 {
        save_checkpoint(&ck_stem, &trainer.checkpoint(training.clone()))?;
    }
    let steps_csv = a.out_dir.join(names::LOSS_STEPS);
    let curve_csv = a.out_dir.join(names::LOSS_CURVE);
    while trainer.epoch < a.epochs {
        let start = Instant::now();
        let epoch = trainer.epoch + 1;
        let mut lines = Vec::new();
        let stats = trainer.run_epoch(&pool, |step, loss| lines.push(format!("{epoch},{step},{:.9}", loss.loss)))?;
        for l in &lines {
            append_line(&steps_csv, "epoch,step,loss", l)?;
        }
        append_line(
            &curve_csv,
            "epoch,mean_loss,steps",
            &format!("{},{:.9},{}", stats.epoch, stats.mean_loss, stats.steps),
        )?;
        let ck = trainer.checkpoint(training.clone());
        save_checkpoint(&ck_stem, &ck)?;
        save_checkpoint(&a.out_dir.join(format!("{}_epoch{:03}", names::CHECKPOINT, stats.epoch)), &ck)?;
        log::info!(
            "epoch {} mean loss {:.4} ({} steps, {:.1}s)",
            stats.epoch,
            stats.mean_loss,
            stats.steps,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn write_grid(stem: &Path, grid: &ChannelGrid, spacing: [f64; 3]) -> CmdResult {
    let header = VolumeHeader::new(grid.shape, grid.channels, Dtype::F32, spacing, VolumeKind::Probability);
    volio::write_volume(stem, &header, &VolumeData::F32(grid.data.clone()))
}

pub fn cmd_predict(a: &PredictArgs, threads: Option<usize>) -> CmdResult {
    let pre = load_preprocessed(&a.data_dir)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let spec = TileSpec::new(a.tiles.cube_size, a.test_stride)?;
    let fc = AffinityParams {
        sigma: a.fc_sigma,
        theta: a.fc_theta,
    };
    fc.validate()?;
    ensure_dir(&a.out_dir)?;
    write_manifest(&a.out_dir, "predict", a, threads)?;
    let prob = predict_volume(&ck.params, &pre.normalized, &pre.aux_context()?, &spec, a.batch_size)?;
    let seg = segment(&prob, &pre.lung, &pre.normalized, a.threshold, (!a.no_fc).then_some(&fc))?;
    let sp = pre.normalized.spacing();
    if a.save_intermediate {
        write_grid(&a.out_dir.join(names::PROBABILITY), &prob, sp)?;
        volio::write_mask(&a.out_dir.join(names::DECODED), &seg.decoded, sp)?;
        volio::write_mask(&a.out_dir.join(names::MASKED), &seg.masked, sp)?;
    }
    volio::write_mask(&a.out_dir.join(names::SEGMENTATION), seg.final_mask(), sp)?;
    match &seg.consolidated {
        Some((_, ConsolidationStatus::EmptyCandidates)) => log::warn!("predict: no candidates to consolidate"),
        Some((_, ConsolidationStatus::Grown { added })) => log::info!("predict: consolidation added {added} voxels"),
        None => {}
    }
    log::info!("predict: {} airway voxels", seg.final_mask().count());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs, threads: Option<usize>) -> CmdResult {
    if a.pred.len() != a.gt.len() {
        return Err(Error::InvalidInput(format!("{} predictions but {} ground truths", a.pred.len(), a.gt.len())));
    }
    if a.metrics_domain == MetricsDomain::Lung && a.lung.len() != a.pred.len() {
        return Err(Error::InvalidInput("--metrics-domain lung needs one --lung mask per case".into()));
    }
    if !a.case.is_empty() && a.case.len() != a.pred.len() {
        return Err(Error::InvalidInput("--case needs one name per prediction".into()));
    }
    let mut table = MetricsTable::default();
    for i in 0..a.pred.len() {
        let pred = volio::read_mask(&a.pred[i])?;
        let gt = volio::read_mask(&a.gt[i])?;
        let lung = match a.metrics_domain {
            MetricsDomain::Lung => Some(volio::read_mask(&a.lung[i])?),
            MetricsDomain::Full => None,
        };
        let domain = lung.as_ref().map_or(Domain::Full, Domain::Within);
        let name = a.case.get(i).cloned().unwrap_or_else(|| (i + 1).to_string());
        table.push(name, evaluate(&pred, &gt, domain)?);
    }
    print!("{}", table.to_text());
    if let Some(dir) = &a.out_dir {
        write_manifest(dir, "evaluate", a, threads)?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, table.to_csv()).map_err(io_err(&csv))?;
        let txt = dir.join("metrics.txt");
        fs::write(&txt, table.to_text()).map_err(io_err(&txt))?;
        let json = dir.join("metrics.json");
        let rows: Vec<_> = table.rows.iter().map(|(c, m)| serde_json::json!({"case": c, "metrics": m})).collect();
        let text = serde_json::to_string_pretty(&rows).expect("metrics serialize") + "\n";
        fs::write(&json, text).map_err(io_err(&json))?;
    }
    Ok(())
}
