//! The optimization loop: BCE-on-logits objective, Adam and
//! SGD-with-momentum updates, seeded shuffling/dropout/augmentation,
//! per-epoch dice tracking and curve emission.
//!
//! Everything downstream of the seeds is deterministic: given the same
//! model, data and [`TrainConfig`] seed, two runs produce bitwise
//! identical parameters and identical loss/dice streams (wall-clock
//! times excepted). Any non-finite loss or parameter aborts the run
//! with the offending tensor's name rather than training on garbage.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops::{bce_loss, sigmoid, Phase};
use crate::tape::Tape;
use crate::tensor::Tensor4;

/// Update rule for [`train`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Step size; 0 is allowed and makes every update a no-op, which
    /// is occasionally useful as a pipeline smoke test.
    pub lr: f64,
    /// Adam first/second-moment decay rates.
    pub beta1: f64,
    pub beta2: f64,
    /// Adam denominator guard.
    pub eps: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives shuffling, dropout masks and flip augmentation.
    pub seed: u64,
    /// Probability cut for the dice tracked in [`EpochRecord`]s.
    pub dice_threshold: f64,
    /// Mirror training samples horizontally with probability 1/2.
    /// Off by default so runs are comparable across configurations.
    pub augment_flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            dice_threshold: 0.5,
            augment_flips: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config { reason: format!("lr must be finite and >= 0, got {}", self.lr) });
        }
        if self.batch_size == 0 {
            return Err(Error::Config { reason: "batch_size must be at least 1".into() });
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config { reason: format!("{name} must be in [0, 1), got {v}") });
            }
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::Config { reason: format!("eps must be positive, got {}", self.eps) });
        }
        if !(0.0..=1.0).contains(&self.dice_threshold) {
            return Err(Error::Config {
                reason: format!("dice_threshold must be in [0, 1], got {}", self.dice_threshold),
            });
        }
        Ok(())
    }
}

/// One line of the training history; serialized to `curves.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dice: f64,
    pub val_dice: f64,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub seconds: f64,
}

/// Adam moment estimates, one pair per parameter, in parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor4>,
    v: Vec<Tensor4>,
    /// Completed steps; drives the bias correction.
    t: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = [usize; 4]>) -> Result<Self> {
        let m: Vec<Tensor4> = shapes.into_iter().map(Tensor4::zeros).collect::<Result<_>>()?;
        let v = m.clone();
        Ok(AdamState { m, v, t: 0 })
    }
}

/// One bias-corrected Adam update over a parameter list.
///
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, then
/// `p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step(
    params: &mut [&mut Tensor4],
    grads: &[&Tensor4],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam_step arity mismatch: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "adam_step grad {i} is {:?} but param is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Heavy-ball SGD: `vel <- momentum vel + g`, `p <- p - lr vel`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor4],
    grads: &[&Tensor4],
    velocity: &mut [Tensor4],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!(
            "sgd_momentum_step arity mismatch: {} params, {} grads, {} velocity slots",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "sgd_momentum_step grad {i} is {:?} but param is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        for ((pv, gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(velocity[i].data_mut()) {
            *vel = momentum * *vel + gv;
            *pv -= lr * *vel;
        }
    }
    Ok(())
}

/// Dice of a binarized batch: classify `prob >= threshold` as
/// foreground and score `2TP / (2TP + FP + FN)` over all pixels, with
/// the empty-vs-empty case scoring a perfect 1.0.
pub fn dice_of_batch(probs: &Tensor4, targets: &Tensor4, threshold: f64) -> Result<f64> {
    let (tp, fp, fj) = dice_counts(probs, targets, threshold)?;
    Ok(dice_from_counts(tp, fp, fj))
}

fn dice_counts(probs: &Tensor4, targets: &Tensor4, threshold: f64) -> Result<(u64, u64, u64)> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "dice_of_batch shapes differ: {:?} vs {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let (mut tp, mut fp, mut fj) = (0u64, 0u64, 0u64);
    for (&p, &t) in probs.data().iter().zip(targets.data()) {
        let pred = p >= threshold;
        let truth = t != 0.0;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fj += 1,
            (false, false) => {}
        }
    }
    Ok((tp, fp, fj))
}

fn dice_from_counts(tp: u64, fp: u64, fj: u64) -> f64 {
    let denom = 2 * tp + fp + fj;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Mirror a tensor along its width axis.
fn hflip(t: &Tensor4) -> Tensor4 {
    let mut out = t.clone();
    let [n, c, h, w] = t.shape();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(ni, ci, y, x, t.at(ni, ci, y, w - 1 - x));
                }
            }
        }
    }
    out
}

/// Stack per-sample `(image, mask)` pairs into one `(B, 1, h, w)` batch
/// pair, optionally mirroring individual samples.
fn stack_batch(
    set: &[(Tensor4, Tensor4)],
    picks: &[usize],
    flips: &[bool],
) -> Result<(Tensor4, Tensor4)> {
    let [_, c, h, w] = set[picks[0]].0.shape();
    let mut xs = Vec::with_capacity(picks.len() * c * h * w);
    let mut ts = Vec::with_capacity(picks.len() * c * h * w);
    for (k, &i) in picks.iter().enumerate() {
        let (img, mask) = &set[i];
        if img.shape() != [1, c, h, w] || mask.shape() != [1, c, h, w] {
            return Err(Error::shape(format!(
                "sample {i} is {:?}/{:?}, expected [1, {c}, {h}, {w}]",
                img.shape(),
                mask.shape()
            )));
        }
        if flips[k] {
            xs.extend_from_slice(hflip(img).data());
            ts.extend_from_slice(hflip(mask).data());
        } else {
            xs.extend_from_slice(img.data());
            ts.extend_from_slice(mask.data());
        }
    }
    Ok((
        Tensor4::from_vec([picks.len(), c, h, w], xs)?,
        Tensor4::from_vec([picks.len(), c, h, w], ts)?,
    ))
}

/// Optimizer state plus the parameter names it reports on blow-ups.
struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    momentum: f64,
    names: Vec<String>,
    adam: AdamState,
    velocity: Vec<Tensor4>,
}

impl Optimizer {
    fn new(tcfg: &TrainConfig, model: &Model) -> Result<Self> {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        for name in model.param_names() {
            names.push(name.to_string());
            shapes.push(model.param(name).expect("listed name").shape());
        }
        let adam = AdamState::new(shapes.iter().copied())?;
        let velocity = shapes.into_iter().map(Tensor4::zeros).collect::<Result<_>>()?;
        Ok(Optimizer {
            kind: tcfg.optimizer,
            lr: tcfg.lr,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.eps,
            momentum: tcfg.momentum,
            names,
            adam,
            velocity,
        })
    }

    /// Apply one update and verify every parameter stayed finite.
    fn step(&mut self, model: &mut Model, grads: &[Tensor4]) -> Result<()> {
        let mut params: Vec<&mut Tensor4> = model.params_mut().map(|(_, t)| t).collect();
        let grad_refs: Vec<&Tensor4> = grads.iter().collect();
        match self.kind {
            OptimizerKind::Adam => adam_step(
                &mut params,
                &grad_refs,
                &mut self.adam,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            )?,
            OptimizerKind::SgdMomentum => sgd_momentum_step(
                &mut params,
                &grad_refs,
                &mut self.velocity,
                self.lr,
                self.momentum,
            )?,
        }
        for (i, p) in params.iter().enumerate() {
            if !p.all_finite() {
                return Err(Error::NonFinite { tensor: self.names[i].clone() });
            }
        }
        Ok(())
    }
}

/// Pooled dice of a model over a whole set, eval phase, batched.
fn eval_dice(model: &Model, set: &[(Tensor4, Tensor4)], tcfg: &TrainConfig) -> Result<f64> {
    let (mut tp, mut fp, mut fj) = (0u64, 0u64, 0u64);
    let picks: Vec<usize> = (0..set.len()).collect();
    for chunk in picks.chunks(tcfg.batch_size) {
        let flips = vec![false; chunk.len()];
        let (x, t) = stack_batch(set, chunk, &flips)?;
        let probs = model.predict(&x)?;
        let (a, b, c) = dice_counts(&probs, &t, tcfg.dice_threshold)?;
        tp += a;
        fp += b;
        fj += c;
    }
    Ok(dice_from_counts(tp, fp, fj))
}

/// Run the full loop and return the trained model plus one record per
/// epoch. Deterministic given the config seed; aborts with the
/// offending tensor's name if anything goes non-finite.
pub fn train(
    model: Model,
    train_set: &[(Tensor4, Tensor4)],
    val_set: &[(Tensor4, Tensor4)],
    tcfg: &TrainConfig,
) -> Result<(Model, Vec<EpochRecord>)> {
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("train and validation sets must be nonempty"));
    }
    let mut model = model;
    let mut opt = Optimizer::new(tcfg, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut records = Vec::with_capacity(tcfg.epochs);
    let mut step_no = 0u64;

    for epoch in 0..tcfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let (mut tp, mut fp, mut fj) = (0u64, 0u64, 0u64);

        for chunk in order.chunks(tcfg.batch_size) {
            let flips: Vec<bool> = chunk
                .iter()
                .map(|_| tcfg.augment_flips && rng.gen_bool(0.5))
                .collect();
            let (x, t) = stack_batch(train_set, chunk, &flips)?;

            let mut tape = Tape::new();
            // Per-step dropout stream; forward_network decorrelates the
            // per-block masks from this one seed.
            let dropout_seed = tcfg.seed ^ (step_no + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let (logits, named) = model.forward_logits(&mut tape, &x, Phase::Train, dropout_seed)?;
            let probs = sigmoid(&mut tape, logits);
            let loss_id = bce_loss(&mut tape, logits, &t)?;
            let loss = tape.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFinite { tensor: "loss".into() });
            }
            tape.backward(loss_id)?;

            let grads: Vec<Tensor4> = named
                .iter()
                .map(|(_, vid)| match tape.grad(*vid) {
                    Some(g) => g.clone(),
                    // A parameter can sit behind fully dropped channels
                    // for a step; that is a legitimate zero gradient.
                    None => Tensor4::zeros(tape.value(*vid).shape()).expect("param shape"),
                })
                .collect();
            opt.step(&mut model, &grads)?;

            let (a, b, c) = dice_counts(tape.value(probs), &t, tcfg.dice_threshold)?;
            tp += a;
            fp += b;
            fj += c;
            loss_sum += loss;
            batches += 1;
            step_no += 1;
        }

        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_dice: dice_from_counts(tp, fp, fj),
            val_dice: eval_dice(&model, val_set, tcfg)?,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, records))
}

/// Write the history as `curves.csv` with full-precision values.
pub fn write_curves_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,train_dice,val_dice,seconds")?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_dice, r.val_dice, r.seconds)?;
    }
    out.flush()?;
    Ok(())
}

/// Render train/val dice per epoch as a small standalone SVG line
/// chart. Purely a convenience artifact.
pub fn write_curves_svg(records: &[EpochRecord], path: &Path) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 48.0; // margin on every side
    let n = records.len().max(2) as f64;
    let px = |i: usize| M + (W - 2.0 * M) * i as f64 / (n - 1.0);
    let py = |v: f64| H - M - (H - 2.0 * M) * v.clamp(0.0, 1.0);
    let polyline = |vals: &mut dyn Iterator<Item = (usize, f64)>, color: &str| {
        let pts: Vec<String> =
            vals.map(|(i, v)| format!("{:.2},{:.2}", px(i), py(v))).collect();
        format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes: dice in [0,1] on y, epoch on x.
    svg.push_str(&format!(
        "  <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "  <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M
    ));
    svg.push_str(&polyline(
        &mut records.iter().map(|r| (r.epoch, r.train_dice)),
        "#1f77b4",
    ));
    svg.push_str(&polyline(
        &mut records.iter().map(|r| (r.epoch, r.val_dice)),
        "#d62728",
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\">epoch</text>\n",
        W / 2.0 - 18.0,
        H - M / 3.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#1f77b4\">train dice</text>\n",
        W - M - 130.0,
        M
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#d62728\">val dice</text>\n",
        W - M - 50.0,
        M
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
