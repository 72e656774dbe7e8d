//! Command-line interface: `synth`, `train`, `eval`, `gradcheck` and
//! `benchmark`, wiring the data, model, training and metrics modules
//! together.
//!
//! Every command is deterministic given its flags (all randomness is
//! seeded through configs), and exit codes are uniform across
//! commands:
//!
//! | code | meaning                                  |
//! |-----:|------------------------------------------|
//! |    0 | success                                  |
//! |    1 | usage or configuration error             |
//! |    2 | data error (datasets, checkpoints, I/O)  |
//! |    3 | numeric failure (non-finite loss, failed gradient check) |
//!
//! Training configs are strict JSON with a `model` and a `train`
//! section; unknown keys are rejected by name so typos cannot silently
//! fall back to defaults. The `--model` flag overrides the config's
//! `model.variant`, which is how `benchmark` trains all three variants
//! from one file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::blocks::{block_forward, rcl_forward, BlockIds, BlockKind, BlockSpec, ConvPair, RclIds};
use crate::data::{
    load_dataset, save_dataset, split, synth_generate, SampleSet, SplitIndices, DEFAULT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradReport, DEFAULT_GRAD_STEP, DEFAULT_GRAD_TOL};
use crate::metrics::{aggregate, evaluate_sample, report_table, MetricsRow, ReportRow};
use crate::model::{forward_network, Model, ModelConfig, Variant};
use crate::ops::{bce_loss, conv2d, conv_transpose2d, maxpool2d, weighted_sum};
use crate::ops::{Padding, Phase};
use crate::tape::Vid;
use crate::tensor::Tensor4;
use crate::train::{train, write_curves_csv, write_curves_svg, TrainConfig};

/// File names written under `--out`.
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVES_CSV_FILE: &str = "curves.csv";
pub const CURVES_SVG_FILE: &str = "curves.svg";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const TABLE_FILE: &str = "table.md";

const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// On-disk run configuration: a `model` and a `train` section, both
/// optional (missing fields take defaults), both rejecting unknown
/// keys by name.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            reason: format!("cannot read config {path:?}: {e}"),
        })?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "r2unet",
    version,
    about = "Recurrent-residual U-Net segmentation toolkit",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic ellipse dataset (images/, masks/, split.json).
    Synth {
        /// Number of samples.
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant on a dataset directory.
    Train {
        /// Architecture to train (overrides the config's model.variant).
        #[arg(long, value_enum)]
        model: ModelFlag,
        /// Dataset directory (images/, masks/, split.json).
        #[arg(long)]
        data: PathBuf,
        /// JSON config with "model" and "train" sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the checkpoint and training curves.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which split.json list to evaluate.
        #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
        split: SplitFlag,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = BlockFlag::All)]
        block: BlockFlag,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate all three variants under one config; write a
    /// comparison table.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelFlag {
    #[value(name = "unet")]
    Unet,
    #[value(name = "resunet")]
    Resunet,
    #[value(name = "dense-r2unet")]
    DenseR2unet,
}

impl From<ModelFlag> for Variant {
    fn from(flag: ModelFlag) -> Variant {
        match flag {
            ModelFlag::Unet => Variant::UNet,
            ModelFlag::Resunet => Variant::ResUNet,
            ModelFlag::DenseR2unet => Variant::DenseR2UNet,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitFlag {
    Train,
    Val,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockFlag {
    Conv,
    ConvTranspose,
    Maxpool,
    SigmoidBce,
    Rcl,
    R2,
    DenseR2,
    Model,
    All,
}

/// Parse `args` (`argv[0]` included) and run the command, returning
/// the process exit code. The binary's `main` is a one-line wrapper
/// around this, so tests can drive the full CLI in-process.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command (success paths return their own).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Data { .. } | Error::Io(_) | Error::Checkpoint { .. } | Error::NonBinary { .. } => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth { n, size, seed, out } => cmd_synth(n, size, seed, &out),
        Command::Train { model, data, config, out } => cmd_train(model, &data, config.as_deref(), &out),
        Command::Eval { checkpoint, data, split, out } => cmd_eval(&checkpoint, &data, split, &out),
        Command::Gradcheck { block, seed } => cmd_gradcheck(block, seed),
        Command::Benchmark { data, config, out } => cmd_benchmark(&data, config.as_deref(), &out),
    }
}

fn cmd_synth(n: usize, size: usize, seed: u64, out: &Path) -> Result<i32> {
    if n == 0 || size == 0 {
        return Err(Error::Config { reason: format!("synth needs n >= 1 and size >= 1, got n {n} size {size}") });
    }
    if size.trailing_zeros() < 4 {
        eprintln!(
            "warning: size {size} is only divisible by 2^{z}; models deeper than {z} \
             level(s) will reject it (the default depth is 4, wanting a multiple of 16)",
            z = size.trailing_zeros()
        );
    }
    let set = synth_generate(n, size, seed);
    save_dataset(out, &set)?;
    let indices = split(&set, DEFAULT_FRACTIONS, seed)?;
    indices.save(out.join("split.json"))?;
    println!(
        "wrote {n} image/mask pairs ({size}x{size}) and split.json ({}/{}/{} train/val/test) under {}",
        indices.train.len(),
        indices.val.len(),
        indices.test.len(),
        out.display()
    );
    Ok(0)
}

/// Load `split.json` next to the dataset; all three pipeline commands
/// require it so that train/val/test membership is pinned on disk.
fn load_split(data: &Path) -> Result<SplitIndices> {
    let path = data.join("split.json");
    if !path.exists() {
        return Err(Error::data(format!(
            "no split file at {path:?}; `synth` writes one, or add one by hand \
             (JSON with train/val/test id arrays and a seed)"
        )));
    }
    SplitIndices::load(path)
}

/// The dataset must already be at the model's input size; the CLI never
/// resizes behind the caller's back.
fn ensure_input_size(config: &ModelConfig, set: &SampleSet) -> Result<()> {
    let (h, w) = config.input_size;
    for (img, id) in set.images.iter().zip(&set.ids) {
        let shape = img.shape();
        if (shape[2], shape[3]) != (h, w) {
            return Err(Error::shape(format!(
                "sample {id:?} is {}x{} but the model wants {h}x{w}; regenerate the dataset \
                 at that size or resize it (bilinear images, nearest masks)",
                shape[2], shape[3]
            )));
        }
    }
    Ok(())
}

fn cmd_train(model: ModelFlag, data: &Path, config: Option<&Path>, out: &Path) -> Result<i32> {
    let mut rc = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    rc.model.variant = model.into();
    rc.validate()?;

    let set = load_dataset(data)?;
    let indices = load_split(data)?;
    ensure_input_size(&rc.model, &set)?;
    let train_set = set.subset(&indices.train)?.pairs();
    let val_set = set.subset(&indices.val)?.pairs();

    let built = rc.model.build()?;
    println!(
        "training {} ({} parameters) on {} samples, validating on {}",
        rc.model.variant.as_str(),
        built.count_params(),
        train_set.len(),
        val_set.len()
    );
    let (trained, records) = train(built, &train_set, &val_set, &rc.train)?;
    for r in &records {
        println!(
            "epoch {:>3}: train_loss {:.4}  train_dice {:.4}  val_dice {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.train_dice, r.val_dice, r.seconds
        );
    }

    fs::create_dir_all(out)?;
    trained.save(&out.join(CHECKPOINT_FILE))?;
    write_curves_csv(&records, &out.join(CURVES_CSV_FILE))?;
    write_curves_svg(&records, &out.join(CURVES_SVG_FILE))?;
    println!("wrote {CHECKPOINT_FILE}, {CURVES_CSV_FILE}, {CURVES_SVG_FILE} under {}", out.display());
    Ok(0)
}

/// Mean/std metrics of a model over a sample set (per-sample metrics
/// at the given probability threshold, then aggregated).
pub fn evaluate_model(model: &Model, set: &SampleSet, threshold: f64) -> Result<MetricsRow> {
    let mut rows = Vec::with_capacity(set.len());
    for (image, mask) in set.images.iter().zip(&set.masks) {
        let probs = model.predict(image)?;
        rows.push(evaluate_sample(&probs, mask, threshold)?);
    }
    aggregate(&rows)
}

fn cmd_eval(checkpoint: &Path, data: &Path, which: SplitFlag, out: &Path) -> Result<i32> {
    let model = Model::load(checkpoint)?;
    let set = load_dataset(data)?;
    let indices = load_split(data)?;
    let ids = match which {
        SplitFlag::Train => &indices.train,
        SplitFlag::Val => &indices.val,
        SplitFlag::Test => &indices.test,
    };
    let chosen = set.subset(ids)?;
    ensure_input_size(&model.config, &chosen)?;

    let metrics = evaluate_model(&model, &chosen, TrainConfig::default().dice_threshold)?;
    let row = ReportRow {
        model: model.config.variant.as_str().to_string(),
        params: Some(model.count_params() as u64),
        metrics,
    };
    let table = report_table(&[row])?;
    fs::create_dir_all(out)?;
    fs::write(out.join(METRICS_CSV_FILE), &table.csv)?;
    print!("{}", table.markdown);
    println!("({} samples) wrote {METRICS_CSV_FILE} under {}", chosen.len(), out.display());
    Ok(0)
}

fn cmd_gradcheck(block: BlockFlag, seed: u64) -> Result<i32> {
    let reports = gradcheck_reports(block, seed)?;
    let mut all_passed = true;
    let mut worst: Option<(String, f64)> = None;
    for (name, report) in &reports {
        for entry in &report.entries {
            println!("{name}/{}: {:.3e}", entry.name, entry.max_rel_err);
            if worst.as_ref().is_none_or(|(_, w)| entry.max_rel_err > *w) {
                worst = Some((format!("{name}/{}", entry.name), entry.max_rel_err));
            }
        }
        all_passed &= report.passed();
    }
    let (worst_name, worst_err) = worst.expect("every block checks at least one tensor");
    if all_passed {
        println!("gradcheck PASS: worst {worst_name} at {worst_err:.3e} (threshold {DEFAULT_GRAD_TOL:e})");
        Ok(0)
    } else {
        eprintln!("gradcheck FAIL: {worst_name} at {worst_err:.3e} exceeds {DEFAULT_GRAD_TOL:e}");
        Ok(3)
    }
}

fn cmd_benchmark(data: &Path, config: Option<&Path>, out: &Path) -> Result<i32> {
    let rc = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    rc.validate()?;

    let set = load_dataset(data)?;
    let indices = load_split(data)?;
    ensure_input_size(&rc.model, &set)?;
    let train_set = set.subset(&indices.train)?.pairs();
    let val_set = set.subset(&indices.val)?.pairs();
    let test_set = set.subset(&indices.test)?;

    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for variant in [Variant::UNet, Variant::ResUNet, Variant::DenseR2UNet] {
        let mut mc = rc.model.clone();
        mc.variant = variant;
        let name = variant.as_str();
        let built = mc.build()?;
        let params = built.count_params() as u64;
        println!("benchmark: training {name} ({params} parameters)");
        let (trained, records) = train(built, &train_set, &val_set, &rc.train)?;
        trained.save(&out.join(format!("{name}.ckpt")))?;
        write_curves_csv(&records, &out.join(format!("{name}_curves.csv")))?;
        write_curves_svg(&records, &out.join(format!("{name}_curves.svg")))?;

        let metrics = evaluate_model(&trained, &test_set, rc.train.dice_threshold)?;
        let row = ReportRow { model: name.to_string(), params: Some(params), metrics };
        fs::write(
            out.join(format!("{name}_metrics.csv")),
            report_table(std::slice::from_ref(&row))?.csv,
        )?;
        rows.push(row);
    }

    let table = report_table(&rows)?;
    let mut page = table.markdown.clone();
    page.push_str(
        "\nPublished full-scale reference for context (not a target at this scale): \
         the densely connected recurrent-residual U-Net reports DSC 0.981 \u{00b1} 0.009 \
         on LUNA lung segmentation.\n",
    );
    fs::write(out.join(TABLE_FILE), &page)?;
    print!("{page}");
    println!("wrote {TABLE_FILE} and per-model checkpoints/curves/metrics under {}", out.display());
    Ok(0)
}

/// Deterministic seed sequence for building test fixtures.
struct SeedSeq {
    seed: u64,
    counter: u64,
}

impl SeedSeq {
    fn new(seed: u64) -> Self {
        SeedSeq { seed, counter: 0 }
    }

    fn next(&mut self) -> u64 {
        self.counter += 1;
        self.seed ^ self.counter.wrapping_mul(SEED_MIX)
    }
}

/// Gradient-check the selected block(s) at small fixed shapes and
/// return `(block name, report)` pairs. [`BlockFlag::All`] covers every
/// layer the networks are assembled from, plus a whole depth-2 model.
pub fn gradcheck_reports(block: BlockFlag, seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    let picks: Vec<BlockFlag> = match block {
        BlockFlag::All => vec![
            BlockFlag::Conv,
            BlockFlag::ConvTranspose,
            BlockFlag::Maxpool,
            BlockFlag::SigmoidBce,
            BlockFlag::Rcl,
            BlockFlag::R2,
            BlockFlag::DenseR2,
            BlockFlag::Model,
        ],
        single => vec![single],
    };
    let mut out = Vec::with_capacity(picks.len());
    for pick in picks {
        let (name, report) = match pick {
            BlockFlag::Conv => ("conv", check_conv(seed)?),
            BlockFlag::ConvTranspose => ("conv-transpose", check_conv_transpose(seed)?),
            BlockFlag::Maxpool => ("maxpool", check_maxpool(seed)?),
            BlockFlag::SigmoidBce => ("sigmoid-bce", check_sigmoid_bce(seed)?),
            BlockFlag::Rcl => ("rcl", check_rcl(seed)?),
            BlockFlag::R2 => ("r2", check_block(BlockSpec::new(BlockKind::Residual, 2, 3), seed)?),
            BlockFlag::DenseR2 => {
                ("dense-r2", check_block(BlockSpec::new(BlockKind::DenseR2, 2, 4), seed)?)
            }
            BlockFlag::Model => ("model", check_model(seed)?),
            BlockFlag::All => unreachable!("expanded above"),
        };
        out.push((name, report));
    }
    Ok(out)
}

fn check_conv(seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    let x = Tensor4::rand_uniform([2, 3, 6, 6], -1.0, 1.0, seq.next())?;
    let w = Tensor4::he_init([4, 3, 3, 3], 27, seq.next())?;
    let b = Tensor4::rand_uniform([1, 4, 1, 1], -0.1, 0.1, seq.next())?;
    let weights = Tensor4::rand_uniform([2, 4, 6, 6], -1.0, 1.0, seq.next())?;
    grad_check(
        |tape, ids| {
            let y = conv2d(tape, ids[0], ids[1], ids[2], Padding::Same, 1)?;
            weighted_sum(tape, y, &weights)
        },
        &[("x", x), ("w", w), ("b", b)],
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

fn check_conv_transpose(seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    let x = Tensor4::rand_uniform([1, 3, 5, 5], -1.0, 1.0, seq.next())?;
    let w = Tensor4::he_init([3, 2, 3, 3], 27, seq.next())?;
    let b = Tensor4::rand_uniform([1, 2, 1, 1], -0.1, 0.1, seq.next())?;
    let weights = Tensor4::rand_uniform([1, 2, 10, 10], -1.0, 1.0, seq.next())?;
    grad_check(
        |tape, ids| {
            let y = conv_transpose2d(tape, ids[0], ids[1], ids[2], 2)?;
            weighted_sum(tape, y, &weights)
        },
        &[("x", x), ("w", w), ("b", b)],
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

fn check_maxpool(seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    // Continuous random values: no ties, so the subgradient choice
    // cannot disagree with the finite-difference probe.
    let x = Tensor4::rand_uniform([1, 2, 6, 6], -1.0, 1.0, seq.next())?;
    let weights = Tensor4::rand_uniform([1, 2, 3, 3], -1.0, 1.0, seq.next())?;
    grad_check(
        |tape, ids| {
            let y = maxpool2d(tape, ids[0])?;
            weighted_sum(tape, y, &weights)
        },
        &[("x", x)],
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

fn check_sigmoid_bce(seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    let logits = Tensor4::rand_uniform([2, 1, 4, 4], -3.0, 3.0, seq.next())?;
    let target = random_mask([2, 1, 4, 4], seq.next())?;
    grad_check(
        |tape, ids| bce_loss(tape, ids[0], &target),
        &[("logits", logits)],
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

fn check_rcl(seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    let x = Tensor4::rand_uniform([1, 2, 5, 5], -1.0, 1.0, seq.next())?;
    let w_f = Tensor4::he_init([3, 2, 3, 3], 18, seq.next())?;
    let w_r = Tensor4::he_init([3, 3, 3, 3], 27, seq.next())?;
    let b = Tensor4::rand_uniform([1, 3, 1, 1], -0.1, 0.1, seq.next())?;
    let weights = Tensor4::rand_uniform([1, 3, 5, 5], -1.0, 1.0, seq.next())?;
    grad_check(
        |tape, ids| {
            let unit = RclIds { w_f: ids[1], w_r: Some(ids[2]), b: ids[3] };
            let y = rcl_forward(tape, ids[0], &unit, 2)?;
            weighted_sum(tape, y, &weights)
        },
        &[("x", x), ("w_f", w_f), ("w_r", w_r), ("b", b)],
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

/// Fresh parameter tensors for one block, in the fixed order
/// [`block_ids_from`] consumes.
fn block_param_set(spec: &BlockSpec, seed: u64) -> Result<Vec<(String, Tensor4)>> {
    let mut seq = SeedSeq::new(seed);
    let mut out = Vec::new();
    for u in 0..spec.units {
        let (ci, co) = spec.unit_channels(u);
        out.push((format!("u{u}.w_f"), Tensor4::he_init([co, ci, 3, 3], ci * 9, seq.next())?));
        if spec.t > 0 {
            out.push((format!("u{u}.w_r"), Tensor4::he_init([co, co, 3, 3], co * 9, seq.next())?));
        }
        out.push((format!("u{u}.b"), Tensor4::rand_uniform([1, co, 1, 1], -0.1, 0.1, seq.next())?));
    }
    if spec.needs_compression() {
        let ci = spec.compression_c_in();
        out.push(("compress.w".into(), Tensor4::he_init([spec.c_out, ci, 1, 1], ci, seq.next())?));
        out.push((
            "compress.b".into(),
            Tensor4::rand_uniform([1, spec.c_out, 1, 1], -0.1, 0.1, seq.next())?,
        ));
    }
    if spec.needs_projection() {
        out.push((
            "project.w".into(),
            Tensor4::he_init([spec.c_out, spec.c_in, 1, 1], spec.c_in, seq.next())?,
        ));
        out.push((
            "project.b".into(),
            Tensor4::rand_uniform([1, spec.c_out, 1, 1], -0.1, 0.1, seq.next())?,
        ));
    }
    Ok(out)
}

/// Reassemble [`BlockIds`] from tape handles laid out by
/// [`block_param_set`].
fn block_ids_from(spec: &BlockSpec, ids: &[Vid]) -> BlockIds {
    let mut it = ids.iter().copied();
    let mut units = Vec::with_capacity(spec.units);
    for _ in 0..spec.units {
        let w_f = it.next().expect("unit w_f id");
        let w_r = (spec.t > 0).then(|| it.next().expect("unit w_r id"));
        let b = it.next().expect("unit b id");
        units.push(RclIds { w_f, w_r, b });
    }
    let compress = spec
        .needs_compression()
        .then(|| ConvPair { w: it.next().expect("compress.w id"), b: it.next().expect("compress.b id") });
    let project = spec
        .needs_projection()
        .then(|| ConvPair { w: it.next().expect("project.w id"), b: it.next().expect("project.b id") });
    BlockIds { units, compress, project }
}

fn check_block(spec: BlockSpec, seed: u64) -> Result<GradReport> {
    let mut seq = SeedSeq::new(seed);
    let x = Tensor4::rand_uniform([1, spec.c_in, 5, 5], -1.0, 1.0, seq.next())?;
    let weights = Tensor4::rand_uniform([1, spec.c_out, 5, 5], -1.0, 1.0, seq.next())?;
    let mut params: Vec<(String, Tensor4)> = vec![("x".to_string(), x)];
    params.extend(block_param_set(&spec, seq.next())?);
    let refs: Vec<(&str, Tensor4)> =
        params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    grad_check(
        |tape, ids| {
            let block_ids = block_ids_from(&spec, &ids[1..]);
            let y = block_forward(tape, ids[0], &spec, &block_ids, Phase::Eval, 0)?;
            weighted_sum(tape, y, &weights)
        },
        &refs,
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

/// Whole-network check: binary cross-entropy of a depth-2 model on an
/// 8x8 input, differentiated with respect to the input and every
/// parameter tensor.
fn check_model(seed: u64) -> Result<GradReport> {
    let config = ModelConfig {
        variant: Variant::DenseR2UNet,
        depth: 2,
        base_width: 2,
        t: 2,
        dropout_rate: 0.0,
        input_size: (8, 8),
        seed,
    };
    let model = config.build()?;
    let mut seq = SeedSeq::new(seed ^ 0x5EED);
    let x = Tensor4::rand_uniform([1, 1, 8, 8], 0.0, 1.0, seq.next())?;
    let target = random_mask([1, 1, 8, 8], seq.next())?;

    let names: Vec<String> = model.param_names().map(str::to_string).collect();
    let mut params: Vec<(&str, Tensor4)> = vec![("x", x)];
    for name in &names {
        params.push((name.as_str(), model.param(name).expect("listed name").clone()));
    }
    grad_check(
        |tape, ids| {
            let logits = forward_network(
                &config,
                tape,
                ids[0],
                &mut |want| {
                    names
                        .iter()
                        .position(|n| n == want)
                        .map(|i| ids[i + 1])
                        .ok_or_else(|| Error::UnknownParam { name: want.to_string() })
                },
                Phase::Eval,
                0,
            )?;
            bce_loss(tape, logits, &target)
        },
        &params,
        DEFAULT_GRAD_STEP,
        DEFAULT_GRAD_TOL,
    )
}

fn random_mask(shape: [usize; 4], seed: u64) -> Result<Tensor4> {
    let probs = Tensor4::rand_uniform(shape, 0.0, 1.0, seed)?;
    let data = probs.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor4::from_vec(shape, data)
}
