use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use omnilayout::ablation::{
    ablation_compare, evaluate_prediction, gt_layout, load_examples, summarize, AblationConfig,
    EvalOptions, Example,
};
use omnilayout::boundary::BoundaryMap;
use omnilayout::geom::DEFAULT_CAMERA_HEIGHT;
use omnilayout::model::{load_checkpoint, save_checkpoint, train, Model, ModelConfig, Sample, TrainConfig};
use omnilayout::recover::recover_layout;
use omnilayout::sampling::{build_grid, GridMode, GridSpec};
use omnilayout::synth::{generate_dataset, list_samples, load_png, read_annotation, GeneratorConfig};

/// Experiment settings. Every field has a default; command-line flags win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    seed: u64,
    /// Fraction of a dataset held out for validation (train) or testing (ablate).
    holdout_fraction: f64,
    generator: GeneratorConfig,
    model: ModelConfig,
    train: TrainConfig,
    eval: EvalOptions,
    ablation_modes: Vec<GridMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout_fraction: 0.1,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            ablation_modes: GridMode::ALL.to_vec(),
        }
    }
}

#[derive(Parser)]
#[command(name = "omnilayout", version, about = "Room layout from equirectangular panoramas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; unknown keys are rejected
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config) [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (NNNNN.png + NNNNN.json)
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Image width [default: model width, 128]
        #[arg(long)]
        width: Option<usize>,
        /// Image height [default: model height, 64]
        #[arg(long)]
        height: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Convolution sampling: planar, equirect or gnomonic [default: equirect]
        #[arg(long)]
        mode: Option<GridMode>,
        #[arg(long)]
        out: PathBuf,
        /// [default: 10]
        #[arg(long)]
        epochs: Option<usize>,
        /// [default: 4]
        #[arg(long)]
        batch: Option<usize>,
        /// Adam learning rate [default: 0.0003]
        #[arg(long)]
        lr: Option<f64>,
        /// Disable stretch augmentation
        #[arg(long)]
        no_augment: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Predict a boundary map for one image, or for every NNNNN.png of a directory
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output JSON file, or directory when --image is a directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recover a 3D layout from a boundary map
    Recover {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ceiling-view trace as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CAMERA_HEIGHT)]
        camera_height: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted maps (NNNNN.json) against a dataset directory
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-row-group pixel error CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Raster height for pixel errors [default: 512]
        #[arg(long)]
        eval_height: Option<usize>,
        /// Rows per row group [default: 25]
        #[arg(long)]
        group_rows: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and compare the conv modes over several seeds
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Number of seeds per mode (seeds 0..N offset by --seed)
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Output directory for report.json and row_groups.csv
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        /// Comma-separated modes [default: planar,equirect,gnomonic]
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<GridMode>>,
        /// [default: 10]
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the tap coordinates of a sampling grid as CSV
    GridDump {
        #[arg(long)]
        mode: GridMode,
        /// Input shape HxW
        #[arg(long, value_parser = parse_pair)]
        shape: (usize, usize),
        /// Kernel size HxW
        #[arg(long, value_parser = parse_pair, default_value = "3x3")]
        kernel: (usize, usize),
        /// Stride HxW
        #[arg(long, value_parser = parse_pair, default_value = "1x1")]
        stride: (usize, usize),
        /// Output file; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(&dir.join("run_config.json"), cfg)
}

fn read_map(path: &Path) -> Result<BoundaryMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map: BoundaryMap =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    map.validate().with_context(|| format!("{}", path.display()))?;
    Ok(map)
}

/// Splits off the last `fraction` of the examples (at least one when there
/// are two or more).
fn split(examples: Vec<Example>, fraction: f64) -> (Vec<Example>, Vec<Example>) {
    let n = examples.len();
    let mut held = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        held = held.clamp(1, n - 1);
    }
    let mut train = examples;
    let test = train.split_off(n - held.min(n));
    (train, test)
}

fn gen_data(count: usize, out: &Path, width: Option<usize>, height: Option<usize>, cfg: RunConfig) -> Result<()> {
    let w = width.unwrap_or(cfg.model.width);
    let h = height.unwrap_or(cfg.model.height);
    generate_dataset(out, count, cfg.seed, &cfg.generator, w, h)?;
    echo_config(out, &cfg)?;
    eprintln!("wrote {count} samples to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    data: &Path,
    out: &Path,
    mode: Option<GridMode>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    no_augment: bool,
    mut cfg: RunConfig,
) -> Result<()> {
    if let Some(m) = mode {
        cfg.model.mode = m;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = batch {
        cfg.train.batch = b;
    }
    if let Some(lr) = lr {
        cfg.train.adam.lr = lr;
    }
    if no_augment {
        cfg.train.augment = false;
    }
    cfg.model.seed = cfg.seed;
    cfg.train.seed = cfg.seed;

    let examples = load_examples(data)?;
    if examples.is_empty() {
        bail!("no samples in {}", data.display());
    }
    let (train_ex, val_ex) = split(examples, cfg.holdout_fraction);
    let train_set: Vec<Sample> = train_ex.iter().map(Example::sample).collect();
    let val_set: Vec<Sample> = val_ex.iter().map(Example::sample).collect();
    let model = Model::new(cfg.model.clone())?;
    eprintln!(
        "training {} mode, {} train / {} val samples, {} epochs",
        cfg.model.mode,
        train_set.len(),
        val_set.len(),
        cfg.train.epochs
    );
    let report = train(&model, model.init_params(), &train_set, &val_set, &cfg.train, |l| {
        match l.val_pixel_error {
            Some(v) => eprintln!("epoch {:>3}  loss {:.5}  val pixel error {:.3}%", l.epoch, l.train_loss, v),
            None => eprintln!("epoch {:>3}  loss {:.5}", l.epoch, l.train_loss),
        }
    })?;
    save_checkpoint(out, &cfg.model, &report.params)?;
    let mut csv = String::from("epoch,train_loss,val_pixel_error\n");
    for l in &report.log {
        let val = l.val_pixel_error.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", l.epoch, l.train_loss, val));
    }
    fs::write(out.join("train_log.csv"), csv)?;
    echo_config(out, &cfg)?;
    Ok(())
}

fn infer(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let (model, params) = load_checkpoint(ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let predict = |png: &Path, dst: &Path| -> Result<()> {
        let img = load_png(png).with_context(|| format!("reading {}", png.display()))?;
        let map = model
            .predict(&params, &img)
            .with_context(|| format!("{}", png.display()))?;
        write_json(dst, &map)
    };
    if image.is_dir() {
        fs::create_dir_all(out)?;
        let jsons = list_samples(image)?;
        for json in &jsons {
            predict(&json.with_extension("png"), &out.join(json.file_name().unwrap()))?;
        }
        eprintln!("wrote {} maps to {}", jsons.len(), out.display());
        Ok(())
    } else {
        predict(image, out)
    }
}

fn recover(map: &Path, out: &Path, trace: Option<&Path>, camera_height: f64) -> Result<()> {
    let map = read_map(map)?;
    let rec = recover_layout(&map, camera_height).context("layout recovery failed")?;
    write_json(out, &rec.to_json())?;
    if let Some(t) = trace {
        fs::write(t, rec.trace.to_csv())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    options: &'a EvalOptions,
    summary: omnilayout::ablation::EvalSummary,
    samples: Vec<SampleReport>,
}

#[derive(Serialize)]
struct SampleReport {
    name: String,
    #[serde(flatten)]
    eval: omnilayout::ablation::PredictionEval,
}

fn eval(pred: &Path, gt: &Path, report: &Path, csv: Option<&Path>, opts: EvalOptions) -> Result<()> {
    let gts = list_samples(gt)?;
    if gts.is_empty() {
        bail!("no annotations in {}", gt.display());
    }
    let mut samples = Vec::with_capacity(gts.len());
    for json in &gts {
        let name = json.file_name().unwrap().to_string_lossy().into_owned();
        let ann = read_annotation(json)?;
        let map = read_map(&pred.join(&name))?;
        let layout = gt_layout(&ann)?;
        let e = evaluate_prediction(&map, &ann, &layout, &opts).with_context(|| name.clone())?;
        samples.push(SampleReport { name, eval: e });
    }
    let evals: Vec<_> = samples.iter().map(|s| s.eval.clone()).collect();
    let summary = summarize(&evals, &opts);
    if let Some(path) = csv {
        let mut text = String::from("group,pole_distance_lo,pole_distance_hi,pixel_error\n");
        for g in &summary.row_groups {
            text.push_str(&format!("{},{},{},{}\n", g.group, g.pole_distance_lo, g.pole_distance_hi, g.percent));
        }
        fs::write(path, text)?;
    }
    println!(
        "pixel error {:.3}%  corner error {}  3D IoU {:.4}  recovery failures {}/{}",
        summary.pixel_error,
        summary.corner_error.map_or("n/a".into(), |c| format!("{c:.3}%")),
        summary.iou,
        summary.recovery_failures,
        summary.count
    );
    write_json(
        report,
        &EvalReport {
            options: &opts,
            summary,
            samples,
        },
    )
}

fn ablate(
    data: &Path,
    seeds: u64,
    out: &Path,
    modes: Option<Vec<GridMode>>,
    epochs: Option<usize>,
    mut cfg: RunConfig,
) -> Result<()> {
    if let Some(m) = modes {
        cfg.ablation_modes = m;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let examples = load_examples(data)?;
    let (train_ex, test_ex) = split(examples, cfg.holdout_fraction);
    if train_ex.is_empty() || test_ex.is_empty() {
        bail!("{} needs at least two samples", data.display());
    }
    let train_set: Vec<Sample> = train_ex.iter().map(Example::sample).collect();
    let acfg = AblationConfig {
        modes: cfg.ablation_modes.clone(),
        seeds: (0..seeds).map(|s| cfg.seed + s).collect(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        eval: cfg.eval.clone(),
    };
    let report = ablation_compare(&train_set, &test_ex, &acfg, |mode, seed, l| {
        eprintln!("{mode} seed {seed} epoch {:>3}  loss {:.5}", l.epoch, l.train_loss);
    })?;
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    if let Some(rg) = &report.row_groups {
        fs::write(out.join("row_groups.csv"), rg.to_csv())?;
    }
    echo_config(out, &cfg)?;
    println!("mode      pixel error %     corner error %    3D IoU            polar error %");
    for m in &report.modes {
        let corner = m
            .corner_error
            .map_or("n/a".to_string(), |c| format!("{:.3} ± {:.3}", c.mean, c.std));
        println!(
            "{:<9} {:.3} ± {:.3}   {:<17} {:.4} ± {:.4}   {:.3} ± {:.3}",
            m.mode.as_str(),
            m.pixel_error.mean,
            m.pixel_error.std,
            corner,
            m.iou.mean,
            m.iou.std,
            m.polar_error.mean,
            m.polar_error.std
        );
    }
    Ok(())
}

fn grid_dump(mode: GridMode, shape: (usize, usize), kernel: (usize, usize), stride: (usize, usize), out: Option<&Path>) -> Result<()> {
    let grid = build_grid(GridSpec::new(mode, kernel, shape).with_stride(stride))?;
    let (kh, kw) = kernel;
    let mut text = String::from("row,ki,kj,u_src,v_src\n");
    for r in 0..grid.output().0 {
        for (t, tap) in grid.row_taps(r).iter().enumerate() {
            let (u, v) = grid.source_coord(tap, 0);
            let (ki, kj) = (t / kw, t % kw);
            text.push_str(&format!(
                "{r},{},{},{u},{v}\n",
                ki as isize - (kh / 2) as isize,
                kj as isize - (kw / 2) as isize
            ));
        }
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            count,
            out,
            width,
            height,
            common,
        } => gen_data(count, &out, width, height, load_config(&common)?),
        Command::Train {
            data,
            mode,
            out,
            epochs,
            batch,
            lr,
            no_augment,
            common,
        } => run_train(&data, &out, mode, epochs, batch, lr, no_augment, load_config(&common)?),
        Command::Infer {
            ckpt,
            image,
            out,
            common,
        } => {
            load_config(&common)?;
            infer(&ckpt, &image, &out)
        }
        Command::Recover {
            map,
            out,
            trace,
            camera_height,
            common,
        } => {
            load_config(&common)?;
            recover(&map, &out, trace.as_deref(), camera_height)
        }
        Command::Eval {
            pred,
            gt,
            report,
            csv,
            eval_height,
            group_rows,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(h) = eval_height {
                cfg.eval.eval_height = h;
            }
            if let Some(g) = group_rows {
                cfg.eval.group_rows = g;
            }
            eval(&pred, &gt, &report, csv.as_deref(), cfg.eval)
        }
        Command::Ablate {
            data,
            seeds,
            out,
            modes,
            epochs,
            common,
        } => ablate(&data, seeds, &out, modes, epochs, load_config(&common)?),
        Command::GridDump {
            mode,
            shape,
            kernel,
            stride,
            out,
            common,
        } => {
            load_config(&common)?;
            grid_dump(mode, shape, kernel, stride, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
