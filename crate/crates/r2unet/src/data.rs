//! Dataset handling: binary PGM ingestion, bilinear/nearest resizing,
//! deterministic train/val/test splits, and a seeded synthetic dataset
//! of bright ellipses on noisy backgrounds.
//!
//! A dataset on disk is a directory with paired files
//!
//! ```text
//! <dir>/images/<id>.pgm       8-bit binary PGM (P5), maxval <= 255
//! <dir>/masks/<id>_mask.pgm   same size; > 127 counts as foreground
//! ```
//!
//! plus an optional `split.json` produced by [`split`]. PGM was picked
//! as the ingestion format because it is trivially parseable anywhere;
//! converting PNG/DICOM exports to PGM is a one-liner in ImageMagick
//! (`magick input.png -colorspace Gray -depth 8 output.pgm`).
//!
//! Resizing uses the half-pixel-center convention (align-corners
//! false): output pixel `i` samples the source at
//! `(i + 0.5) * in/out - 0.5`, with border clamping. Masks should be
//! resized with [`ResizeKind::Nearest`], which keeps them binary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// An 8-bit grayscale image in PGM "P5" form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    /// Largest pixel value in the encoding, `1..=255`.
    pub maxval: u8,
    /// Row-major pixel bytes, exactly `width * height` of them.
    pub pixels: Vec<u8>,
}

impl Pgm {
    /// Parse a binary PGM. The header accepts `#` comments anywhere
    /// whitespace is allowed; the pixel payload must be exactly
    /// `width * height` bytes, nothing more.
    pub fn parse(bytes: &[u8]) -> Result<Pgm> {
        let mut pos = 0usize;
        let magic = header_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::data(format!(
                "pgm: expected binary magic \"P5\", got {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::data(format!("pgm: zero dimension {width}x{height}")));
        }
        if !(1..=255).contains(&maxval) {
            return Err(Error::data(format!("pgm: maxval {maxval} unsupported (need 1..=255)")));
        }
        // Exactly one whitespace byte separates the header from the
        // pixel payload.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::data("pgm: missing separator after maxval"));
        }
        pos += 1;
        let want = width * height;
        let got = bytes.len() - pos;
        if got < want {
            return Err(Error::data(format!("pgm: pixel data truncated ({got} of {want} bytes)")));
        }
        if got > want {
            return Err(Error::data(format!("pgm: {} trailing bytes after pixel data", got - want)));
        }
        Ok(Pgm { width, height, maxval: maxval as u8, pixels: bytes[pos..].to_vec() })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Pgm> {
        Self::parse(&fs::read(path)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Normalize to a `[1, 1, h, w]` tensor with values in `[0, 1]`
    /// (pixel / maxval).
    pub fn to_image(&self) -> Tensor4 {
        let m = self.maxval as f64;
        let data = self.pixels.iter().map(|&p| p as f64 / m).collect();
        Tensor4::from_vec([1, 1, self.height, self.width], data).expect("pgm dims validated")
    }

    /// Binarize to a `[1, 1, h, w]` mask: bytes above 127 are
    /// foreground.
    pub fn to_mask(&self) -> Tensor4 {
        let data = self.pixels.iter().map(|&p| if p > 127 { 1.0 } else { 0.0 }).collect();
        Tensor4::from_vec([1, 1, self.height, self.width], data).expect("pgm dims validated")
    }

    /// Quantize a single-plane tensor with values in `[0, 1]` to 8-bit
    /// (values are clamped first, so masks encode as 0 / 255).
    pub fn from_unit_plane(t: &Tensor4) -> Result<Pgm> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::shape(format!("pgm wants a [1,1,h,w] plane, got {:?}", t.shape())));
        }
        let pixels = t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Ok(Pgm { width: w, height: h, maxval: 255, pixels })
    }
}

/// Skip whitespace and `#`-to-end-of-line comments, then return the
/// next run of non-whitespace bytes.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::data("pgm: truncated header"));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::data(format!("pgm: bad {what} token {:?}", String::from_utf8_lossy(&tok)))
        })
}

/// Paired images and masks with stable string identifiers.
#[derive(Clone, Debug)]
pub struct SampleSet {
    /// One `[1, 1, h, w]` tensor per sample, values in `[0, 1]`.
    pub images: Vec<Tensor4>,
    /// Same shapes as `images`, values exactly 0.0 or 1.0.
    pub masks: Vec<Tensor4>,
    pub ids: Vec<String>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Clone out `(image, mask)` pairs in order, the shape the training
    /// loop consumes.
    pub fn pairs(&self) -> Vec<(Tensor4, Tensor4)> {
        self.images.iter().cloned().zip(self.masks.iter().cloned()).collect()
    }

    /// The subset with the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<SampleSet> {
        let mut out = SampleSet { images: Vec::new(), masks: Vec::new(), ids: Vec::new() };
        for id in ids {
            let i = self
                .ids
                .iter()
                .position(|have| have == id)
                .ok_or_else(|| Error::data(format!("sample {id:?} not in this set")))?;
            out.images.push(self.images[i].clone());
            out.masks.push(self.masks[i].clone());
            out.ids.push(id.clone());
        }
        Ok(out)
    }

    /// Resize every image (bilinear) and mask (nearest) to `h x w`.
    pub fn resized(&self, h: usize, w: usize) -> Result<SampleSet> {
        let mut out = SampleSet { images: Vec::new(), masks: Vec::new(), ids: self.ids.clone() };
        for (img, mask) in self.images.iter().zip(&self.masks) {
            out.images.push(resize(img, h, w, ResizeKind::Bilinear)?);
            out.masks.push(resize(mask, h, w, ResizeKind::Nearest)?);
        }
        Ok(out)
    }
}

/// Load a paired dataset directory (see the module docs for layout).
///
/// Every image must have a mask and vice versa; unpaired files and
/// size mismatches are reported with the offending id.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SampleSet> {
    let dir = dir.as_ref();
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");

    let mut ids = Vec::new();
    for entry in fs::read_dir(&images_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if stem.is_empty() {
            return Err(Error::data(format!("unusable image file name {:?}", path)));
        }
        ids.push(stem.to_string());
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::data(format!("no .pgm images under {:?}", images_dir)));
    }

    // Catch masks whose image is missing, not just the reverse.
    for entry in fs::read_dir(&masks_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let id = stem.strip_suffix("_mask").unwrap_or(stem);
        if !ids.iter().any(|have| have == id) {
            return Err(Error::data(format!("mask {id:?} has no matching image")));
        }
    }

    let mut set = SampleSet { images: Vec::new(), masks: Vec::new(), ids: Vec::new() };
    for id in ids {
        let mask_path = masks_dir.join(format!("{id}_mask.pgm"));
        if !mask_path.exists() {
            return Err(Error::data(format!("image {id:?} has no mask file at {mask_path:?}")));
        }
        let image = Pgm::read(images_dir.join(format!("{id}.pgm")))?.to_image();
        let mask = Pgm::read(mask_path)?.to_mask();
        if image.shape() != mask.shape() {
            return Err(Error::data(format!(
                "sample {id:?}: image is {:?} but mask is {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        set.images.push(image);
        set.masks.push(mask);
        set.ids.push(id);
    }
    Ok(set)
}

/// Write a dataset directory in the layout [`load_dataset`] reads.
/// Images are quantized to 8 bits; masks encode as 0 / 255.
pub fn save_dataset(dir: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    let dir = dir.as_ref();
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&masks_dir)?;
    for ((image, mask), id) in set.images.iter().zip(&set.masks).zip(&set.ids) {
        Pgm::from_unit_plane(image)?.write(images_dir.join(format!("{id}.pgm")))?;
        Pgm::from_unit_plane(mask)?.write(masks_dir.join(format!("{id}_mask.pgm")))?;
    }
    Ok(())
}

/// Interpolation used by [`resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeKind {
    /// Half-pixel-center bilinear; use for images.
    Bilinear,
    /// Nearest source pixel; use for masks (values pass through
    /// untouched, so binary stays binary).
    Nearest,
}

/// Source coordinate of output index `i` under half-pixel centers.
fn sample_center(i: usize, in_len: usize, out_len: usize) -> f64 {
    (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Per-axis bilinear taps: clamped left/right source indices and the
/// right-hand weight.
fn bilinear_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let s = sample_center(i, in_len, out_len);
            let left = s.floor();
            let frac = s - left;
            let clamp = |v: f64| (v.max(0.0) as usize).min(in_len - 1);
            (clamp(left), clamp(left + 1.0), frac)
        })
        .collect()
}

fn nearest_axis(in_len: usize, out_len: usize) -> Vec<usize> {
    (0..out_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * in_len as f64 / out_len as f64).floor();
            (s.max(0.0) as usize).min(in_len - 1)
        })
        .collect()
}

/// Resize every plane of `x` to `out_h x out_w`.
pub fn resize(x: &Tensor4, out_h: usize, out_w: usize, kind: ResizeKind) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor4::zeros([n, c, out_h, out_w])?;
    match kind {
        ResizeKind::Bilinear => {
            let rows = bilinear_axis(h, out_h);
            let cols = bilinear_axis(w, out_w);
            for ni in 0..n {
                for ci in 0..c {
                    for (oy, &(ya, yb, wy)) in rows.iter().enumerate() {
                        for (ox, &(xa, xb, wx)) in cols.iter().enumerate() {
                            // Lerp form so constant inputs survive
                            // bitwise (a + w*(a - a) == a).
                            let top = {
                                let a = x.at(ni, ci, ya, xa);
                                a + wx * (x.at(ni, ci, ya, xb) - a)
                            };
                            let bottom = {
                                let a = x.at(ni, ci, yb, xa);
                                a + wx * (x.at(ni, ci, yb, xb) - a)
                            };
                            out.set(ni, ci, oy, ox, top + wy * (bottom - top));
                        }
                    }
                }
            }
        }
        ResizeKind::Nearest => {
            let rows = nearest_axis(h, out_h);
            let cols = nearest_axis(w, out_w);
            for ni in 0..n {
                for ci in 0..c {
                    for (oy, &sy) in rows.iter().enumerate() {
                        for (ox, &sx) in cols.iter().enumerate() {
                            out.set(ni, ci, oy, ox, x.at(ni, ci, sy, sx));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Default train/val/test fractions: 20% held out for testing, the
/// rest cut 4:1 into train and validation.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// A deterministic partition of sample ids, as stored in `split.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIndices {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitIndices {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SplitIndices> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Shuffle the ids with a seeded generator and cut the shuffled list
/// contiguously into train/val/test by the given fractions (which must
/// be non-negative and sum to 1). The same seed always produces the
/// same partition.
pub fn split(set: &SampleSet, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    if set.is_empty() {
        return Err(Error::data("cannot split an empty sample set"));
    }
    let (ft, fv, fe) = fractions;
    let sum = ft + fv + fe;
    if !(ft >= 0.0 && fv >= 0.0 && fe >= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config {
            reason: format!("split fractions {fractions:?} must be non-negative and sum to 1"),
        });
    }
    let mut ids = set.ids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = ((n as f64 * ft).round() as usize).min(n);
    let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(SplitIndices { train: ids, val, test, seed })
}

/// One synthetic "lesion": a rotated filled ellipse.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes, in pixels.
    pub a: f64,
    pub b: f64,
    /// Rotation of the `a` axis, radians.
    pub theta: f64,
}

impl Ellipse {
    /// The quadratic form whose unit sublevel set is the ellipse:
    /// `evaluate(x, y) <= 1` exactly when `(x, y)` is inside.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

/// Per-sample seed, mixed so samples are independent of each other and
/// of how many samples a run asks for.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn synth_sample(size: usize, seed: u64) -> (Tensor4, Tensor4, Vec<Ellipse>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let count = rng.gen_range(1..=3);
    let mut ellipses = Vec::with_capacity(count);
    let mut brightness = Vec::with_capacity(count);
    for _ in 0..count {
        ellipses.push(Ellipse {
            cx: rng.gen_range(0.2 * s..=0.8 * s),
            cy: rng.gen_range(0.2 * s..=0.8 * s),
            a: rng.gen_range(0.08 * s..=0.22 * s),
            b: rng.gen_range(0.08 * s..=0.22 * s),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        });
        brightness.push(rng.gen_range(0.65..=0.9));
    }

    let noise = Normal::new(0.0, 0.05).expect("fixed sigma is valid");
    let mut image = Tensor4::zeros([1, 1, size, size]).expect("size >= 1");
    let mut mask = Tensor4::zeros([1, 1, size, size]).expect("size >= 1");
    for y in 0..size {
        for x in 0..size {
            let mut level = 0.1f64;
            let mut inside = false;
            for (e, &bright) in ellipses.iter().zip(&brightness) {
                if e.evaluate(x as f64, y as f64) <= 1.0 {
                    level = level.max(bright);
                    inside = true;
                }
            }
            let v = (level + noise.sample(&mut rng)).clamp(0.0, 1.0);
            image.set(0, 0, y, x, v);
            if inside {
                mask.set(0, 0, y, x, 1.0);
            }
        }
    }
    (image, mask, ellipses)
}

/// [`synth_generate`] plus the ellipse parameters behind each mask,
/// for tests that want to re-check the ground truth analytically.
pub fn synth_generate_detailed(n: usize, size: usize, seed: u64) -> (SampleSet, Vec<Vec<Ellipse>>) {
    let mut set = SampleSet { images: Vec::new(), masks: Vec::new(), ids: Vec::new() };
    let mut shapes = Vec::new();
    for i in 0..n {
        let (image, mask, ellipses) = synth_sample(size, sample_seed(seed, i));
        set.images.push(image);
        set.masks.push(mask);
        let mut id = String::from("synth_");
        write!(id, "{i:04}").expect("string write");
        set.ids.push(id);
        shapes.push(ellipses);
    }
    (set, shapes)
}

/// Generate `n` synthetic samples of `size x size`: a dark background
/// with Gaussian pixel noise (sigma 0.05) and 1–3 bright ellipses; the
/// mask is the exact ellipse union. Fully determined by the arguments,
/// and sample `i` does not depend on `n`.
pub fn synth_generate(n: usize, size: usize, seed: u64) -> SampleSet {
    synth_generate_detailed(n, size, seed).0
}
