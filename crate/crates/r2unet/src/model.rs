//! Network assembly: the shared encoder/decoder skeleton, the three
//! block variants that plug into it, deterministic seeded builds and
//! checkpointing.
//!
//! Every variant shares one skeleton: `depth` encoder levels (block,
//! then 2x2 maxpool, channels doubling per level), a bottleneck block,
//! `depth` decoder levels (3x3 stride-2 transposed conv, concatenation
//! with the equal-resolution encoder output, block), and a final 1x1
//! conv down to one logit channel. Output spatial dims always equal
//! input spatial dims, which is why the input size must be divisible
//! by `2^depth`.
//!
//! The variants differ only in which [`BlockKind`] fills the levels:
//!
//! * `unet`: plain two-conv levels,
//! * `resunet`: the same stack with projected residual skips,
//! * `dense_r2unet`: densely connected recurrent units with residual
//!   skips. Dense levels grow `c_out / 2` channels per unit, which
//!   keeps their parameter count within a small factor of the plain
//!   network's instead of several times larger.
//!
//! Parameters live in an insertion-ordered store keyed by stable
//! hierarchical names (`enc0.u1.w_f`, `dec2.up.b`, `head.w`, ...), so
//! checkpoints, optimizer state and gradient reports all agree on
//! which tensor is which.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::blocks::{block_forward, BlockIds, BlockKind, BlockSpec, ConvPair, RclIds};
use crate::error::{Error, Result};
use crate::ops::{concat_channels, conv2d, conv_transpose2d, maxpool2d, sigmoid, Padding, Phase};
use crate::tape::{Tape, Vid};
use crate::tensor::Tensor4;

/// First line of every checkpoint file; bump `v1` on layout changes.
const CHECKPOINT_MAGIC: &str = "r2unet-checkpoint v1";

/// Which block wiring fills the encoder/decoder levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "unet")]
    UNet,
    #[serde(rename = "resunet")]
    ResUNet,
    #[serde(rename = "dense_r2unet")]
    DenseR2UNet,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::UNet => "unet",
            Variant::ResUNet => "resunet",
            Variant::DenseR2UNet => "dense_r2unet",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::UNet),
            "resunet" => Ok(Variant::ResUNet),
            "dense_r2unet" => Ok(Variant::DenseR2UNet),
            other => Err(Error::Config {
                reason: format!("unknown variant {other:?} (expected unet, resunet or dense_r2unet)"),
            }),
        }
    }
}

/// Everything needed to rebuild a network deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Encoder levels; the bottleneck runs at `input / 2^depth`.
    pub depth: usize,
    /// Channels at the first encoder level; doubles per level.
    pub base_width: usize,
    /// Recurrence steps per unit (`dense_r2unet` only; others use 0).
    pub t: usize,
    /// Channel dropout probability at every block tail during training.
    pub dropout_rate: f64,
    /// `(h, w)` the network accepts; both divisible by `2^depth`.
    pub input_size: (usize, usize),
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DenseR2UNet,
            depth: 4,
            base_width: 16,
            t: 2,
            dropout_rate: 0.2,
            input_size: (256, 256),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 10 {
            return Err(Error::Config { reason: format!("depth must be 1..=10, got {}", self.depth) });
        }
        if self.base_width == 0 {
            return Err(Error::Config { reason: "base_width must be at least 1".into() });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidRate { rate: self.dropout_rate });
        }
        let (h, w) = self.input_size;
        let div = 1usize << self.depth;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Divisibility { h, w, depth: self.depth });
        }
        Ok(())
    }

    /// Channel width of encoder level `i` (level 0 is `base_width`).
    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// The block wiring this variant uses for a `c_in -> c_out` level.
    fn level_spec(&self, c_in: usize, c_out: usize) -> BlockSpec {
        let mut spec = match self.variant {
            Variant::UNet => BlockSpec::new(BlockKind::Plain, c_in, c_out),
            Variant::ResUNet => BlockSpec::new(BlockKind::Residual, c_in, c_out),
            Variant::DenseR2UNet => BlockSpec::new(BlockKind::DenseR2, c_in, c_out),
        };
        spec.t = match self.variant {
            Variant::DenseR2UNet => self.t,
            _ => 0,
        };
        // Growing c_out/2 per dense unit (instead of c_out) keeps the
        // dense network's parameter count comparable to the plain one.
        spec.dense_growth = (c_out / 2).max(1);
        spec.dropout_rate = self.dropout_rate;
        spec
    }

    /// Initialize all parameters and return the ready-to-run model.
    pub fn build(&self) -> Result<Model> {
        self.validate()?;
        let mut params = IndexMap::new();
        let mut counter = 0u64;
        for piece in layout(self) {
            piece.init_into(&mut params, self.seed, &mut counter)?;
        }
        Ok(Model { config: self.clone(), params })
    }
}

/// One parameter-bearing stage of the skeleton, in execution order.
enum Piece {
    Enc { name: String, spec: BlockSpec },
    Bottleneck { spec: BlockSpec },
    /// 3x3 stride-2 transposed conv doubling the spatial dims.
    Up { name: String, c_in: usize, c_out: usize },
    Dec { name: String, spec: BlockSpec, skip_level: usize },
    /// 1x1 conv collapsing `c_in` channels to one logit map.
    Head { c_in: usize },
}

/// The skeleton in execution (= store = manifest) order.
fn layout(config: &ModelConfig) -> Vec<Piece> {
    let mut pieces = Vec::new();
    for i in 0..config.depth {
        let c_in = if i == 0 { 1 } else { config.width(i - 1) };
        pieces.push(Piece::Enc {
            name: format!("enc{i}"),
            spec: config.level_spec(c_in, config.width(i)),
        });
    }
    pieces.push(Piece::Bottleneck {
        spec: config.level_spec(config.width(config.depth - 1), config.width(config.depth)),
    });
    for i in (0..config.depth).rev() {
        pieces.push(Piece::Up {
            name: format!("dec{i}.up"),
            c_in: config.width(i + 1),
            c_out: config.width(i),
        });
        pieces.push(Piece::Dec {
            name: format!("dec{i}"),
            spec: config.level_spec(2 * config.width(i), config.width(i)),
            skip_level: i,
        });
    }
    pieces.push(Piece::Head { c_in: config.base_width });
    pieces
}

impl Piece {
    fn block_name(&self) -> &str {
        match self {
            Piece::Enc { name, .. } | Piece::Dec { name, .. } => name,
            Piece::Bottleneck { .. } => "bottleneck",
            _ => unreachable!("not a block piece"),
        }
    }

    /// Create this piece's parameters into `store` in definition order.
    fn init_into(&self, store: &mut IndexMap<String, Tensor4>, seed: u64, counter: &mut u64) -> Result<()> {
        let mut weight = |store: &mut IndexMap<String, Tensor4>,
                          name: String,
                          shape: [usize; 4],
                          fan_in: usize|
         -> Result<()> {
            // ChaCha seeding decorrelates nearby integers, so a plain
            // per-tensor counter mixed with the model seed is enough.
            let s = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            *counter += 1;
            store.insert(name, Tensor4::he_init(shape, fan_in, s)?);
            Ok(())
        };
        let bias = |store: &mut IndexMap<String, Tensor4>, name: String, c: usize| -> Result<()> {
            store.insert(name, Tensor4::zeros([1, c, 1, 1])?);
            Ok(())
        };
        match self {
            Piece::Enc { spec, .. } | Piece::Bottleneck { spec } | Piece::Dec { spec, .. } => {
                let base = self.block_name();
                for u in 0..spec.units {
                    let (ci, co) = spec.unit_channels(u);
                    weight(store, format!("{base}.u{u}.w_f"), [co, ci, 3, 3], ci * 9)?;
                    if spec.t >= 1 {
                        weight(store, format!("{base}.u{u}.w_r"), [co, co, 3, 3], co * 9)?;
                    }
                    bias(store, format!("{base}.u{u}.b"), co)?;
                }
                if spec.needs_compression() {
                    let ci = spec.compression_c_in();
                    weight(store, format!("{base}.compress.w"), [spec.c_out, ci, 1, 1], ci)?;
                    bias(store, format!("{base}.compress.b"), spec.c_out)?;
                }
                if spec.needs_projection() {
                    weight(store, format!("{base}.project.w"), [spec.c_out, spec.c_in, 1, 1], spec.c_in)?;
                    bias(store, format!("{base}.project.b"), spec.c_out)?;
                }
            }
            Piece::Up { name, c_in, c_out } => {
                // Transposed conv weights are (c_in, c_out, kh, kw).
                weight(store, format!("{name}.w"), [*c_in, *c_out, 3, 3], c_in * 9)?;
                bias(store, format!("{name}.b"), *c_out)?;
            }
            Piece::Head { c_in } => {
                weight(store, "head.w".into(), [1, *c_in, 1, 1], *c_in)?;
                bias(store, "head.b".into(), 1)?;
            }
        }
        Ok(())
    }
}

/// Fetch one block's parameter handles from a name -> [`Vid`] lookup.
fn block_ids(spec: &BlockSpec, base: &str, get: &mut dyn FnMut(&str) -> Result<Vid>) -> Result<BlockIds> {
    let mut units = Vec::with_capacity(spec.units);
    for u in 0..spec.units {
        units.push(RclIds {
            w_f: get(&format!("{base}.u{u}.w_f"))?,
            w_r: if spec.t >= 1 { Some(get(&format!("{base}.u{u}.w_r"))?) } else { None },
            b: get(&format!("{base}.u{u}.b"))?,
        });
    }
    let compress = if spec.needs_compression() {
        Some(ConvPair { w: get(&format!("{base}.compress.w"))?, b: get(&format!("{base}.compress.b"))? })
    } else {
        None
    };
    let project = if spec.needs_projection() {
        Some(ConvPair { w: get(&format!("{base}.project.w"))?, b: get(&format!("{base}.project.b"))? })
    } else {
        None
    };
    Ok(BlockIds { units, compress, project })
}

/// Run the skeleton on already-registered parameter handles. This is
/// the single wiring used by [`Model::forward_logits`], [`Model::predict`]
/// and the finite-difference checks, so they cannot drift apart.
pub(crate) fn forward_network(
    config: &ModelConfig,
    tape: &mut Tape,
    x: Vid,
    get: &mut dyn FnMut(&str) -> Result<Vid>,
    phase: Phase,
    dropout_seed: u64,
) -> Result<Vid> {
    let mut cur = x;
    let mut skips: Vec<Vid> = Vec::with_capacity(config.depth);
    let mut block_no = 0u64;
    let tail_seed = |block_no: &mut u64| {
        // Distinct stream per block so masks never repeat across levels.
        let s = dropout_seed ^ block_no.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        *block_no += 1;
        s
    };
    for piece in layout(config) {
        match &piece {
            Piece::Enc { name, spec } => {
                let ids = block_ids(spec, name, get)?;
                let out = block_forward(tape, cur, spec, &ids, phase, tail_seed(&mut block_no))?;
                skips.push(out);
                cur = maxpool2d(tape, out)?;
            }
            Piece::Bottleneck { spec } => {
                let ids = block_ids(spec, "bottleneck", get)?;
                cur = block_forward(tape, cur, spec, &ids, phase, tail_seed(&mut block_no))?;
            }
            Piece::Up { name, .. } => {
                let w = get(&format!("{name}.w"))?;
                let b = get(&format!("{name}.b"))?;
                cur = conv_transpose2d(tape, cur, w, b, 2)?;
            }
            Piece::Dec { name, spec, skip_level } => {
                cur = concat_channels(tape, skips[*skip_level], cur)?;
                let ids = block_ids(spec, name, get)?;
                cur = block_forward(tape, cur, spec, &ids, phase, tail_seed(&mut block_no))?;
            }
            Piece::Head { .. } => {
                let w = get("head.w")?;
                let b = get("head.b")?;
                cur = conv2d(tape, cur, w, b, Padding::Same, 1)?;
            }
        }
    }
    Ok(cur)
}

/// A built network: immutable during inference, mutated by the trainer.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    params: IndexMap<String, Tensor4>,
}

impl Model {
    /// Total scalar parameter count across all tensors.
    pub fn count_params(&self) -> usize {
        self.params.values().map(Tensor4::len).sum()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor4> {
        self.params.get(name)
    }

    /// Parameters in store order, mutable — the optimizer's view.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (h, w) = self.config.input_size;
        if x.c() != 1 || x.h() != h || x.w() != w {
            return Err(Error::shape(format!(
                "network expects (n, 1, {h}, {w}) inputs, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Register the input and every parameter on `tape`, run the
    /// network, and return the logit map plus the parameter handles in
    /// store order (the trainer reads gradients off those).
    pub fn forward_logits(
        &self,
        tape: &mut Tape,
        x: &Tensor4,
        phase: Phase,
        dropout_seed: u64,
    ) -> Result<(Vid, Vec<(String, Vid)>)> {
        self.check_input(x)?;
        let xid = tape.input(x.clone());
        let named: Vec<(String, Vid)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), tape.input(t.clone())))
            .collect();
        let logits = forward_network(&self.config, tape, xid, &mut |name| {
            named
                .iter()
                .find(|(n, _)| n.as_str() == name)
                .map(|&(_, vid)| vid)
                .ok_or_else(|| Error::UnknownParam { name: name.to_string() })
        }, phase, dropout_seed)?;
        Ok((logits, named))
    }

    /// Sigmoid probabilities in eval phase: deterministic, dropout off.
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_logits(&mut tape, x, Phase::Eval, 0)?;
        let probs = sigmoid(&mut tape, logits);
        Ok(tape.value(probs).clone())
    }

    /// Write the checkpoint: magic line, config as one JSON line, a
    /// `name n c h w` manifest, then each tensor's binary payload in
    /// manifest order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "{}", serde_json::to_string(&self.config)?)?;
        writeln!(out, "{}", self.params.len())?;
        let mut manifest = String::new();
        for (name, t) in &self.params {
            debug_assert!(!name.contains(char::is_whitespace), "names must be manifest-safe");
            let [n, c, h, w] = t.shape();
            writeln!(manifest, "{name} {n} {c} {h} {w}").expect("string write");
        }
        out.write_all(manifest.as_bytes())?;
        for t in self.params.values() {
            t.write_to(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read a checkpoint written by [`Model::save`], verifying magic,
    /// config, manifest shapes and payload completeness.
    pub fn load(path: &Path) -> Result<Model> {
        let mut input = BufReader::new(File::open(path)?);
        let mut line = String::new();
        let mut next_line = |input: &mut BufReader<File>, what: &str| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint { reason: format!("file ends before {what}") });
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let magic = next_line(&mut input, "the magic line")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint {
                reason: format!("unsupported magic/version {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
            });
        }
        let config: ModelConfig = serde_json::from_str(&next_line(&mut input, "the config line")?)?;
        config.validate()?;
        let count: usize = next_line(&mut input, "the parameter count")?
            .parse()
            .map_err(|e| Error::Checkpoint { reason: format!("bad parameter count: {e}") })?;
        let mut manifest = Vec::with_capacity(count);
        for i in 0..count {
            let entry = next_line(&mut input, &format!("manifest entry {i}"))?;
            let mut fields = entry.split_whitespace();
            let name = fields
                .next()
                .ok_or_else(|| Error::Checkpoint { reason: format!("empty manifest entry {i}") })?
                .to_string();
            let dims: Vec<usize> = fields.map(str::parse).collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Checkpoint { reason: format!("manifest entry {name}: {e}") })?;
            if dims.len() != 4 {
                return Err(Error::Checkpoint {
                    reason: format!("manifest entry {name} has {} dims, expected 4", dims.len()),
                });
            }
            manifest.push((name, [dims[0], dims[1], dims[2], dims[3]]));
        }
        let mut params = IndexMap::with_capacity(count);
        for (name, shape) in manifest {
            let t = Tensor4::read_from(&mut input).map_err(|e| match e {
                Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::Checkpoint {
                    reason: format!("file truncated inside tensor {name}"),
                },
                other => other,
            })?;
            if t.shape() != shape {
                return Err(Error::Checkpoint {
                    reason: format!("tensor {name} is {:?} but manifest says {:?}", t.shape(), shape),
                });
            }
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint { reason: format!("duplicate tensor {name}") });
            }
        }
        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::Checkpoint { reason: "trailing bytes after last tensor".into() });
        }
        Ok(Model { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, DEFAULT_GRAD_STEP, DEFAULT_GRAD_TOL};
    use crate::ops::bce_loss;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            depth: 2,
            base_width: 4,
            input_size: (16, 16),
            seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_matches_input_shape_for_every_variant() {
        for variant in [Variant::UNet, Variant::ResUNet, Variant::DenseR2UNet] {
            let model = small(variant).build().unwrap();
            let x = Tensor4::rand_uniform([2, 1, 16, 16], 0.0, 1.0, 1).unwrap();
            let probs = model.predict(&x).unwrap();
            assert_eq!(probs.shape(), [2, 1, 16, 16], "{variant:?}");
            assert!(probs.data().iter().all(|p| (0.0..=1.0).contains(p)), "{variant:?}");
        }
    }

    #[test]
    fn indivisible_input_size_is_rejected() {
        let cfg = ModelConfig { depth: 3, input_size: (20, 32), ..small(Variant::UNet) };
        assert!(matches!(cfg.build(), Err(Error::Divisibility { h: 20, w: 32, depth: 3 })));
    }

    #[test]
    fn variant_json_names_match_cli_and_checkpoint_spelling() {
        for variant in [Variant::UNet, Variant::ResUNet, Variant::DenseR2UNet] {
            let json = serde_json::to_string(&variant).unwrap();
            assert_eq!(json, format!("{:?}", variant.as_str()));
            assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), variant);
        }
    }

    #[test]
    fn predict_rejects_sizes_other_than_configured() {
        let model = small(Variant::UNet).build().unwrap();
        let wrong = Tensor4::zeros([1, 1, 32, 32]).unwrap();
        assert!(matches!(model.predict(&wrong), Err(Error::ShapeMismatch { .. })));
        let chans = Tensor4::zeros([1, 2, 16, 16]).unwrap();
        assert!(matches!(model.predict(&chans), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn builds_are_deterministic_per_seed_and_differ_across_seeds() {
        let x = Tensor4::rand_uniform([1, 1, 16, 16], 0.0, 1.0, 2).unwrap();
        let a = small(Variant::DenseR2UNet).build().unwrap().predict(&x).unwrap();
        let b = small(Variant::DenseR2UNet).build().unwrap().predict(&x).unwrap();
        let bits = |t: &Tensor4| t.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));

        let other = ModelConfig { seed: 12, ..small(Variant::DenseR2UNet) }.build().unwrap();
        assert_ne!(bits(&a), bits(&other.predict(&x).unwrap()));
    }

    #[test]
    fn repeated_eval_predictions_are_bitwise_identical() {
        let model = small(Variant::DenseR2UNet).build().unwrap();
        let x = Tensor4::rand_uniform([1, 1, 16, 16], 0.0, 1.0, 3).unwrap();
        let a = model.predict(&x).unwrap();
        let b = model.predict(&x).unwrap();
        let bits = |t: &Tensor4| t.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn unet_param_count_matches_hand_arithmetic() {
        // depth 2, base 4: every number below is written out by hand.
        let cfg = small(Variant::UNet);
        let model = cfg.build().unwrap();
        let enc0 = (4 * 9 + 4) + (4 * 4 * 9 + 4); // 1 -> 4, two convs
        let enc1 = (8 * 4 * 9 + 8) + (8 * 8 * 9 + 8); // 4 -> 8
        let bott = (16 * 8 * 9 + 16) + (16 * 16 * 9 + 16); // 8 -> 16
        let up1 = 16 * 8 * 9 + 8; // 3x3 transposed conv 16 -> 8
        let dec1 = (8 * 16 * 9 + 8) + (8 * 8 * 9 + 8); // concat 16 -> 8
        let up0 = 8 * 4 * 9 + 4;
        let dec0 = (4 * 8 * 9 + 4) + (4 * 4 * 9 + 4);
        let head = 4 + 1;
        assert_eq!(model.count_params(), enc0 + enc1 + bott + up1 + dec1 + up0 + dec0 + head);
        assert_eq!(model.count_params(), 8197);
    }

    #[test]
    fn count_params_matches_block_level_formula_at_depth_4() {
        let cfg = ModelConfig {
            variant: Variant::DenseR2UNet,
            input_size: (256, 256),
            ..ModelConfig::default()
        };
        let model = cfg.build().unwrap();
        let mut expect = 0;
        for piece in layout(&cfg) {
            expect += match &piece {
                Piece::Enc { spec, .. } | Piece::Bottleneck { spec } | Piece::Dec { spec, .. } => {
                    spec.param_count()
                }
                Piece::Up { c_in, c_out, .. } => c_in * c_out * 9 + c_out,
                Piece::Head { c_in } => c_in + 1,
            };
        }
        assert_eq!(model.count_params(), expect);
    }

    #[test]
    fn variants_share_core_parameter_names() {
        let unet = small(Variant::UNet).build().unwrap();
        let dense = small(Variant::DenseR2UNet).build().unwrap();
        for name in ["enc0.u0.w_f", "enc0.u0.b", "dec1.up.w", "head.w", "head.b"] {
            assert!(unet.param(name).is_some(), "unet missing {name}");
            assert!(dense.param(name).is_some(), "dense missing {name}");
        }
        for name in ["enc0.u0.w_r", "enc0.compress.w", "enc0.project.w"] {
            assert!(unet.param(name).is_none(), "unet should not have {name}");
            assert!(dense.param(name).is_some(), "dense missing {name}");
        }
        assert_ne!(unet.count_params(), dense.count_params());
    }

    #[test]
    fn dense_variant_stays_within_1_5x_of_plain_unet() {
        for (depth, base) in [(2, 8), (3, 8), (4, 16)] {
            let size = 1usize << (depth + 2);
            let cfg = |variant| ModelConfig {
                variant,
                depth,
                base_width: base,
                input_size: (size, size),
                ..ModelConfig::default()
            };
            let plain = cfg(Variant::UNet).build().unwrap().count_params() as f64;
            let dense = cfg(Variant::DenseR2UNet).build().unwrap().count_params() as f64;
            let ratio = dense / plain;
            assert!(
                (0.5..=1.5).contains(&ratio),
                "depth {depth} base {base}: dense/plain = {ratio:.3}"
            );
        }
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small(Variant::DenseR2UNet).build().unwrap();
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();

        assert_eq!(back.config, model.config);
        assert_eq!(back.count_params(), model.count_params());
        let names: Vec<_> = model.param_names().collect();
        assert_eq!(back.param_names().collect::<Vec<_>>(), names);
        for name in names {
            let (a, b) = (model.param(name).unwrap(), back.param(name).unwrap());
            assert_eq!(a.shape(), b.shape(), "{name}");
            assert!(
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{name} changed across the round trip"
            );
        }

        let x = Tensor4::rand_uniform([1, 1, 16, 16], 0.0, 1.0, 4).unwrap();
        assert_eq!(model.predict(&x).unwrap().data(), back.predict(&x).unwrap().data());
    }

    #[test]
    fn corrupt_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small(Variant::UNet).build().unwrap();
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..7].copy_from_slice(b"z2unet!");
        std::fs::write(&path, bytes).unwrap();
        match Model::load(&path) {
            Err(Error::Checkpoint { reason }) => assert!(reason.contains("magic"), "{reason}"),
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_names_the_torn_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small(Variant::UNet).build().unwrap();
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match Model::load(&path) {
            Err(Error::Checkpoint { reason }) => assert!(reason.contains("truncated"), "{reason}"),
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small(Variant::UNet).build().unwrap();
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Checkpoint { .. })));
    }

    /// End-to-end Jacobian check of bce_loss(forward(x)) against central
    /// finite differences over every parameter of a small dense model.
    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            variant: Variant::DenseR2UNet,
            depth: 2,
            base_width: 2,
            input_size: (8, 8),
            seed: 5,
            ..ModelConfig::default()
        };
        let model = cfg.build().unwrap();
        let x = Tensor4::rand_uniform([1, 1, 8, 8], 0.0, 1.0, 6).unwrap();
        let target_bits = Tensor4::rand_uniform([1, 1, 8, 8], 0.0, 1.0, 7).unwrap();
        let target = Tensor4::from_vec(
            [1, 1, 8, 8],
            target_bits.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();

        let mut entries: Vec<(String, Tensor4)> = vec![("x".into(), x)];
        for name in model.param_names() {
            entries.push((name.to_string(), model.param(name).unwrap().clone()));
        }
        let names: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
        let named: Vec<(&str, Tensor4)> =
            entries.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();

        let cfg2 = cfg.clone();
        let report = grad_check(
            move |tape, ids| {
                let logits = forward_network(&cfg2, tape, ids[0], &mut |want| {
                    names
                        .iter()
                        .position(|n| n.as_str() == want)
                        .map(|i| ids[i])
                        .ok_or_else(|| Error::UnknownParam { name: want.to_string() })
                }, Phase::Eval, 0)?;
                bce_loss(tape, logits, &target)
            },
            &named,
            DEFAULT_GRAD_STEP,
            DEFAULT_GRAD_TOL,
        )
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }
}
