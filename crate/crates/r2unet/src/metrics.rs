//! Segmentation quality metrics: per-pixel confusion counts, the ratio
//! metrics derived from them (Dice, Jaccard, precision, recall,
//! sensitivity, specificity, accuracy), trapezoidal ROC AUC, and
//! mean ± std aggregation with table/CSV rendering.
//!
//! Degenerate denominators follow the conventions common in
//! segmentation tooling: an empty prediction of an empty ground truth
//! is perfect (Dice 1.0, precision 1.0, ...), while an empty
//! prediction that misses real foreground scores 0. This rewards
//! correctly predicting "nothing here" instead of leaving the metric
//! undefined.
//!
//! AUC is computed on a fixed grid of 257 thresholds `0, 1/256, ...,
//! 1` (classifying `p >= threshold` as foreground) with trapezoidal
//! integration, plus an implicit `(0, 0)` anchor above the top
//! threshold. On probabilities that lie exactly on the `1/256` lattice
//! this equals the pairwise ranking statistic (ties at half credit).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Per-pixel tallies of a binarized prediction against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// The seven confusion-count metrics (AUC needs raw probabilities and
/// lives in [`auc`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountMetrics {
    pub dsc: f64,
    pub js: f64,
    pub precision: f64,
    pub recall: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

/// All eight per-sample metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub dsc: f64,
    pub js: f64,
    pub precision: f64,
    pub recall: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub auc: f64,
    /// True when the sample's ground truth had only one class, making
    /// the AUC value a convention rather than a measurement.
    pub auc_degenerate: bool,
}

/// Mean and population standard deviation of one metric over samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Aggregated metrics over a sample set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub dsc: Stat,
    pub js: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub sensitivity: Stat,
    pub specificity: Stat,
    pub accuracy: Stat,
    pub auc: Stat,
}

fn ensure_binary(t: &Tensor4, what: &str) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinary { context: what.into() });
    }
    Ok(())
}

/// Binarize probabilities: foreground where `p >= threshold`.
pub fn binarize(probs: &Tensor4, threshold: f64) -> Tensor4 {
    let data = probs.data().iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect();
    Tensor4::from_vec(probs.shape(), data).expect("shape preserved")
}

/// Count per-pixel agreement between two binary masks.
pub fn confusion(pred: &Tensor4, gt: &Tensor4) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "confusion shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    ensure_binary(pred, "confusion prediction mask")?;
    ensure_binary(gt, "confusion ground-truth mask")?;
    let mut c = ConfusionCounts { true_pos: 0, true_neg: 0, false_pos: 0, false_neg: 0 };
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.true_pos += 1,
            (false, false) => c.true_neg += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// The ratio metrics, with degenerate denominators resolved as
/// documented in the module docs. All results lie in `[0, 1]` for any
/// non-negative counts.
pub fn metrics_from_counts(c: &ConfusionCounts) -> CountMetrics {
    let (tp, tn, fp, fne) = (c.true_pos, c.true_neg, c.false_pos, c.false_neg);
    let dsc = if 2 * tp + fp + fne == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fne) as f64
    };
    let js = dsc / (2.0 - dsc);
    let precision = if tp + fp == 0 {
        if fne == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fne == 0 {
        if fp == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fne) as f64
    };
    let specificity = if tn + fp == 0 {
        if fne == 0 { 1.0 } else { 0.0 }
    } else {
        tn as f64 / (tn + fp) as f64
    };
    let accuracy = if c.total() == 0 { 1.0 } else { (tp + tn) as f64 / c.total() as f64 };
    CountMetrics { dsc, js, precision, recall, sensitivity: recall, specificity, accuracy }
}

/// AUC value plus a flag marking single-class ground truths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AucOutcome {
    pub value: f64,
    pub degenerate: bool,
}

/// Number of threshold grid points (0, 1/256, ..., 1).
const AUC_GRID: usize = 257;

/// Area under the ROC curve over the fixed 257-threshold grid.
///
/// For each threshold the classifier is `p >= threshold`; the curve is
/// anchored at `(0, 0)` and integrated with trapezoids. A ground truth
/// with only one class present yields `1.0` with `degenerate` set.
pub fn auc(probs: &Tensor4, gt: &Tensor4) -> Result<AucOutcome> {
    if probs.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "auc shapes differ: {:?} vs {:?}",
            probs.shape(),
            gt.shape()
        )));
    }
    ensure_binary(gt, "auc ground-truth mask")?;
    if probs.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::data("auc probabilities must lie in [0, 1]"));
    }

    // bucket[k] = pixels whose probability p satisfies
    // floor(256 p) == k; then p >= k/256 iff its bucket index >= k
    // (exact: 256 p is a power-of-two scaling, and k <= 256 p iff
    // k/256 <= p for integer k).
    let mut pos_bucket = [0u64; AUC_GRID];
    let mut neg_bucket = [0u64; AUC_GRID];
    for (&p, &g) in probs.data().iter().zip(gt.data()) {
        let k = ((256.0 * p).floor() as usize).min(AUC_GRID - 1);
        if g == 1.0 {
            pos_bucket[k] += 1;
        } else {
            neg_bucket[k] += 1;
        }
    }
    let pos_total: u64 = pos_bucket.iter().sum();
    let neg_total: u64 = neg_bucket.iter().sum();
    if pos_total == 0 || neg_total == 0 {
        return Ok(AucOutcome { value: 1.0, degenerate: true });
    }

    // Walk thresholds from 1 down to 0, accumulating "predicted
    // positive" counts; (fpr, tpr) then climbs from (0, 0) to (1, 1).
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut area = 0.0;
    for k in (0..AUC_GRID).rev() {
        tp += pos_bucket[k];
        fp += neg_bucket[k];
        let tpr = tp as f64 / pos_total as f64;
        let fpr = fp as f64 / neg_total as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(AucOutcome { value: area, degenerate: false })
}

/// Confusion metrics at `threshold` plus AUC, for one sample.
pub fn evaluate_sample(probs: &Tensor4, gt: &Tensor4, threshold: f64) -> Result<SampleMetrics> {
    let cm = metrics_from_counts(&confusion(&binarize(probs, threshold), gt)?);
    let a = auc(probs, gt)?;
    Ok(SampleMetrics {
        dsc: cm.dsc,
        js: cm.js,
        precision: cm.precision,
        recall: cm.recall,
        sensitivity: cm.sensitivity,
        specificity: cm.specificity,
        accuracy: cm.accuracy,
        auc: a.value,
        auc_degenerate: a.degenerate,
    })
}

/// Sample mean and population standard deviation per metric.
pub fn aggregate(rows: &[SampleMetrics]) -> Result<MetricsRow> {
    if rows.is_empty() {
        return Err(Error::data("aggregate needs at least one sample"));
    }
    let stat = |get: fn(&SampleMetrics) -> f64| -> Stat {
        let n = rows.len() as f64;
        let mean = rows.iter().map(get).sum::<f64>() / n;
        let var = rows.iter().map(|r| (get(r) - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    };
    Ok(MetricsRow {
        dsc: stat(|r| r.dsc),
        js: stat(|r| r.js),
        precision: stat(|r| r.precision),
        recall: stat(|r| r.recall),
        sensitivity: stat(|r| r.sensitivity),
        specificity: stat(|r| r.specificity),
        accuracy: stat(|r| r.accuracy),
        auc: stat(|r| r.auc),
    })
}

/// One line of a comparison table.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub model: String,
    /// Total trainable parameter count, when known.
    pub params: Option<u64>,
    pub metrics: MetricsRow,
}

/// Rendered comparison table: human-readable markdown plus a CSV with
/// full-precision values that re-parse exactly.
#[derive(Clone, Debug)]
pub struct ReportTable {
    pub markdown: String,
    pub csv: String,
}

const METRIC_NAMES: [&str; 8] =
    ["DSC", "JS", "Precision", "Recall", "Sensitivity", "Specificity", "Accuracy", "AUC"];

fn row_stats(m: &MetricsRow) -> [Stat; 8] {
    [m.dsc, m.js, m.precision, m.recall, m.sensitivity, m.specificity, m.accuracy, m.auc]
}

/// Render rows in the fixed column order `Model, DSC, JS, Precision,
/// Recall, Sensitivity, Specificity, Accuracy, AUC, Params`, with
/// metric cells as `mean ± std` to three decimals in the markdown and
/// as separate full-precision `_mean`/`_std` columns in the CSV.
pub fn report_table(rows: &[ReportRow]) -> Result<ReportTable> {
    if rows.is_empty() {
        return Err(Error::data("report_table needs at least one row"));
    }
    let mut md = String::new();
    md.push_str("| Model |");
    for name in METRIC_NAMES {
        write!(md, " {name} |").expect("string write");
    }
    md.push_str(" Params |\n|---|");
    md.push_str(&"---:|".repeat(METRIC_NAMES.len() + 1));
    md.push('\n');

    let mut csv = String::from("model");
    for name in METRIC_NAMES {
        let lower = name.to_ascii_lowercase();
        write!(csv, ",{lower}_mean,{lower}_std").expect("string write");
    }
    csv.push_str(",params\n");

    for row in rows {
        write!(md, "| {} |", row.model).expect("string write");
        write!(csv, "{}", row.model).expect("string write");
        for s in row_stats(&row.metrics) {
            write!(md, " {:.3} ± {:.3} |", s.mean, s.std).expect("string write");
            write!(csv, ",{},{}", s.mean, s.std).expect("string write");
        }
        match row.params {
            Some(p) => {
                writeln!(md, " {p} |").expect("string write");
                writeln!(csv, ",{p}").expect("string write");
            }
            None => {
                md.push_str("  |\n");
                csv.push_str(",\n");
            }
        }
    }
    Ok(ReportTable { markdown: md, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{mann_whitney_auc, reference_metrics};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts(tp: u64, tn: u64, fp: u64, fne: u64) -> ConfusionCounts {
        ConfusionCounts { true_pos: tp, true_neg: tn, false_pos: fp, false_neg: fne }
    }

    fn lattice_tensor(ks: &[u32]) -> Tensor4 {
        Tensor4::from_vec([1, 1, 1, ks.len()], ks.iter().map(|&k| k as f64 / 256.0).collect())
            .unwrap()
    }

    fn mask_tensor(bits: &[u8]) -> Tensor4 {
        Tensor4::from_vec([1, 1, 1, bits.len()], bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn confusion_counts_the_worked_cases() {
        let ones = Tensor4::filled([1, 1, 4, 4], 1.0).unwrap();
        let zeros = Tensor4::zeros([1, 1, 4, 4]).unwrap();
        assert_eq!(confusion(&ones, &ones).unwrap(), counts(16, 0, 0, 0));
        assert_eq!(confusion(&ones, &zeros).unwrap(), counts(0, 0, 16, 0));
        assert_eq!(confusion(&zeros, &ones).unwrap(), counts(0, 0, 0, 16));
    }

    #[test]
    fn confusion_matches_a_per_pixel_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let bit = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let pred = Tensor4::from_vec([1, 1, 8, 8], (0..64).map(|_| bit(&mut rng)).collect()).unwrap();
        let gt = Tensor4::from_vec([1, 1, 8, 8], (0..64).map(|_| bit(&mut rng)).collect()).unwrap();
        let c = confusion(&pred, &gt).unwrap();
        let (mut tp, mut tn, mut fp, mut fne) = (0, 0, 0, 0);
        for y in 0..8 {
            for x in 0..8 {
                match (pred.at(0, 0, y, x) == 1.0, gt.at(0, 0, y, x) == 1.0) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    (true, false) => fp += 1,
                    (false, true) => fne += 1,
                }
            }
        }
        assert_eq!(c, counts(tp, tn, fp, fne));
        assert_eq!(c.total(), 64);
    }

    #[test]
    fn confusion_rejects_non_binary_input() {
        let soft = Tensor4::filled([1, 1, 2, 2], 0.5).unwrap();
        let hard = Tensor4::zeros([1, 1, 2, 2]).unwrap();
        assert!(matches!(confusion(&soft, &hard), Err(Error::NonBinary { .. })));
        assert!(matches!(confusion(&hard, &soft), Err(Error::NonBinary { .. })));
    }

    #[test]
    fn ratio_metrics_match_the_worked_example() {
        let m = metrics_from_counts(&counts(3, 5, 1, 1));
        assert_eq!(m.dsc, 0.75);
        assert_eq!(m.js, 0.6);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.sensitivity, 0.75);
        assert_eq!(m.specificity, 5.0 / 6.0);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn empty_ground_truth_predicted_empty_is_perfect() {
        let m = metrics_from_counts(&counts(0, 16, 0, 0));
        assert_eq!(m.dsc, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.js, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn metrics_agree_with_the_reference_formulas_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..1000 {
            // Mix tiny counts (degenerate cases) with large ones.
            let draw = |rng: &mut ChaCha8Rng| {
                if rng.gen_bool(0.3) { rng.gen_range(0..3u64) } else { rng.gen_range(0..1_000_000u64) }
            };
            let c = counts(draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let got = metrics_from_counts(&c);
            let want = reference_metrics(c.true_pos, c.true_neg, c.false_pos, c.false_neg);
            assert_eq!(got.dsc.to_bits(), want.dsc.to_bits(), "{c:?}");
            assert_eq!(got.js.to_bits(), want.js.to_bits(), "{c:?}");
            assert_eq!(got.precision.to_bits(), want.precision.to_bits(), "{c:?}");
            assert_eq!(got.recall.to_bits(), want.recall.to_bits(), "{c:?}");
            assert_eq!(got.sensitivity.to_bits(), want.sensitivity.to_bits(), "{c:?}");
            assert_eq!(got.specificity.to_bits(), want.specificity.to_bits(), "{c:?}");
            assert_eq!(got.accuracy.to_bits(), want.accuracy.to_bits(), "{c:?}");
        }
    }

    #[test]
    fn perfect_separation_scores_auc_one() {
        let probs = lattice_tensor(&[250, 240, 230, 10, 5, 0]);
        let gt = mask_tensor(&[1, 1, 1, 0, 0, 0]);
        assert_eq!(auc(&probs, &gt).unwrap(), AucOutcome { value: 1.0, degenerate: false });
    }

    #[test]
    fn uninformative_scores_auc_half() {
        let probs = lattice_tensor(&[128; 8]);
        let gt = mask_tensor(&[1, 0, 1, 0, 1, 0, 1, 0]);
        let out = auc(&probs, &gt).unwrap();
        assert!(!out.degenerate);
        assert!((out.value - 0.5).abs() < 1e-15, "auc = {}", out.value);
    }

    #[test]
    fn single_class_ground_truth_is_flagged_degenerate() {
        let probs = lattice_tensor(&[10, 20, 30]);
        assert_eq!(
            auc(&probs, &mask_tensor(&[1, 1, 1])).unwrap(),
            AucOutcome { value: 1.0, degenerate: true }
        );
        assert_eq!(
            auc(&probs, &mask_tensor(&[0, 0, 0])).unwrap(),
            AucOutcome { value: 1.0, degenerate: true }
        );
    }

    #[test]
    fn auc_rejects_probabilities_outside_unit_interval() {
        let bad = Tensor4::from_vec([1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
        let gt = mask_tensor(&[1, 0]);
        assert!(auc(&bad, &gt).is_err());
    }

    #[test]
    fn grid_auc_matches_pairwise_ranking_on_the_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let ks: Vec<u32> = (0..20).map(|_| rng.gen_range(0..=256)).collect();
            let bits: Vec<u8> = (0..20).map(|_| rng.gen_range(0..=1)).collect();
            let probs = lattice_tensor(&ks);
            let gt = mask_tensor(&bits);
            let got = auc(&probs, &gt).unwrap();
            let want = mann_whitney_auc(probs.data(), gt.data());
            match want {
                None => assert!(got.degenerate, "case {case}"),
                Some(w) => {
                    assert!(!got.degenerate, "case {case}");
                    assert!(
                        (got.value - w).abs() <= 1.0 / 256.0,
                        "case {case}: grid {} vs ranking {w}",
                        got.value
                    );
                    // On the lattice the two are the same rational.
                    assert!((got.value - w).abs() < 1e-12, "case {case}");
                }
            }
        }
    }

    #[test]
    fn auc_is_invariant_under_lattice_monotone_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let ks: Vec<u32> = (0..20).map(|_| rng.gen_range(0..=256)).collect();
            let bits: Vec<u8> = (0..20).map(|_| rng.gen_range(0..=1)).collect();
            // Strictly increasing map on the values that occur: send
            // the i-th smallest distinct score to the i-th smallest of
            // an equally sized random subset of the lattice. Order and
            // ties are preserved, so the area must not move.
            let mut present = ks.clone();
            present.sort_unstable();
            present.dedup();
            let mut pool: Vec<u32> = (0..=256).collect();
            pool.shuffle(&mut rng);
            let mut targets = pool[..present.len()].to_vec();
            targets.sort_unstable();
            let mapped: Vec<u32> = ks
                .iter()
                .map(|&k| targets[present.binary_search(&k).unwrap()])
                .collect();

            let a = auc(&lattice_tensor(&ks), &mask_tensor(&bits)).unwrap();
            let b = auc(&lattice_tensor(&mapped), &mask_tensor(&bits)).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.degenerate, b.degenerate);
        }
    }

    #[test]
    fn aggregate_handles_the_worked_cases() {
        let sample = |d: f64| SampleMetrics {
            dsc: d,
            js: d,
            precision: d,
            recall: d,
            sensitivity: d,
            specificity: d,
            accuracy: d,
            auc: d,
            auc_degenerate: false,
        };
        assert!(aggregate(&[]).is_err());

        let one = aggregate(&[sample(0.9)]).unwrap();
        assert_eq!(one.dsc.mean, 0.9);
        assert_eq!(one.dsc.std, 0.0);

        let two = aggregate(&[sample(0.9), sample(1.0)]).unwrap();
        assert!((two.dsc.mean - 0.95).abs() < 1e-12);
        assert!((two.dsc.std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn evaluate_sample_composes_counts_and_auc() {
        let probs = lattice_tensor(&[240, 230, 200, 180, 20]);
        let gt = mask_tensor(&[1, 1, 1, 0, 1]);
        let m = evaluate_sample(&probs, &gt, 0.5).unwrap();
        // Threshold 0.5: predictions 1,1,1,1,0 -> TP 3, FP 1, FN 1.
        assert_eq!(m.dsc, 0.75);
        assert!(!m.auc_degenerate);
        let want = mann_whitney_auc(probs.data(), gt.data()).unwrap();
        assert!((m.auc - want).abs() < 1e-12);
    }

    #[test]
    fn report_table_renders_markdown_and_round_tripping_csv() {
        let sample = SampleMetrics {
            dsc: 0.9017,
            js: 0.8205,
            precision: 0.87,
            recall: 0.91,
            sensitivity: 0.91,
            specificity: 0.99,
            accuracy: 0.97,
            auc: 0.95,
            auc_degenerate: false,
        };
        let row = |name: &str, params: Option<u64>| ReportRow {
            model: name.into(),
            params,
            metrics: aggregate(&[sample]).unwrap(),
        };
        let table =
            report_table(&[row("unet", Some(8197)), row("resunet", None), row("dense_r2unet", Some(9031))])
                .unwrap();

        let md_lines: Vec<&str> = table.markdown.lines().collect();
        assert_eq!(md_lines.len(), 2 + 3, "header + divider + three rows");
        assert_eq!(
            md_lines[0],
            "| Model | DSC | JS | Precision | Recall | Sensitivity | Specificity | Accuracy | AUC | Params |"
        );
        assert!(md_lines[2].starts_with("| unet | 0.902 ± 0.000 |"));
        assert!(md_lines[2].ends_with("| 8197 |"));

        let csv_lines: Vec<&str> = table.csv.lines().collect();
        assert_eq!(csv_lines.len(), 4);
        let header: Vec<&str> = csv_lines[0].split(',').collect();
        assert_eq!(header[0], "model");
        assert_eq!(header[1], "dsc_mean");
        assert_eq!(header[header.len() - 1], "params");
        let fields: Vec<&str> = csv_lines[1].split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap().to_bits(), 0.9017f64.to_bits());
        assert_eq!(fields.last().unwrap().parse::<u64>().unwrap(), 8197);
        // The params-less row still has the full column count.
        assert_eq!(csv_lines[2].split(',').count(), header.len());
    }

    proptest! {
        /// Every metric stays inside [0, 1] and recall == sensitivity,
        /// for arbitrary non-negative counts.
        #[test]
        fn metrics_stay_in_unit_interval(tp in 0u64..10_000, tn in 0u64..10_000,
                                          fp in 0u64..10_000, fne in 0u64..10_000) {
            let m = metrics_from_counts(&counts(tp, tn, fp, fne));
            for v in [m.dsc, m.js, m.precision, m.recall, m.sensitivity, m.specificity, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v), "{m:?}");
            }
            prop_assert_eq!(m.recall.to_bits(), m.sensitivity.to_bits());
            // Eq.-style identity between Jaccard and Dice.
            prop_assert!((m.js - m.dsc / (2.0 - m.dsc)).abs() < 1e-15);
        }

        /// Scaling all counts by the same positive integer leaves each
        /// ratio metric bitwise unchanged (small counts stay exact).
        #[test]
        fn metrics_are_scale_equivariant(tp in 0u64..1000, tn in 0u64..1000,
                                          fp in 0u64..1000, fne in 0u64..1000,
                                          k in 1u64..100) {
            let a = metrics_from_counts(&counts(tp, tn, fp, fne));
            let b = metrics_from_counts(&counts(tp * k, tn * k, fp * k, fne * k));
            prop_assert_eq!(a.dsc.to_bits(), b.dsc.to_bits());
            prop_assert_eq!(a.js.to_bits(), b.js.to_bits());
            prop_assert_eq!(a.precision.to_bits(), b.precision.to_bits());
            prop_assert_eq!(a.recall.to_bits(), b.recall.to_bits());
            prop_assert_eq!(a.specificity.to_bits(), b.specificity.to_bits());
            prop_assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        }
    }
}
