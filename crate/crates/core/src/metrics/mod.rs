//! Fixation-prediction metrics: AUC-Judd, shuffled AUC, NSS, CC and SIM,
//! the average-annotation (center-bias) map, and dataset evaluation.

mod report;

pub use report::{evaluate_dataset, evaluate_predictions, EvalConfig, FrameScores, MetricReport, Scores, SkipRecord};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{gaussian_splat, FixationMap, FixationRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    AucJudd,
    ShuffledAuc,
    Nss,
    Cc,
    Sim,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::AucJudd,
        Metric::ShuffledAuc,
        Metric::Nss,
        Metric::Cc,
        Metric::Sim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AucJudd => "AUC-J",
            Metric::ShuffledAuc => "s-AUC",
            Metric::Nss => "NSS",
            Metric::Cc => "CC",
            Metric::Sim => "SIM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

fn check_dims(y: &Tensor, dims: (usize, usize)) -> Result<()> {
    let ydims = y.map_dims()?;
    if ydims != dims {
        return Err(Error::Dimension(format!(
            "prediction is {ydims:?}, ground truth is {dims:?}"
        )));
    }
    Ok(())
}

/// Area under the ROC curve of `positives` against `negatives`.
///
/// The curve has a vertex at every distinct score; equal scores move the
/// curve diagonally, so a tied pair counts one half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty("ROC needs at least one positive and one negative".into()));
    }
    if positives.iter().chain(negatives).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    // twice the area in units of (1 positive × 1 negative)
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        let (tp_prev, fp_prev) = (tp, fp);
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp_prev) * (tp + tp_prev);
    }
    let pairs = positives.len() as f64 * negatives.len() as f64;
    Ok(area2 as f64 / (2.0 * pairs))
}

/// AUC with fixated cells as positives and every other cell as a negative.
pub fn auc_judd(y: &Tensor, p: &FixationMap) -> Result<f64> {
    check_dims(y, p.dims())?;
    let n = p.count();
    if n == 0 {
        return Err(Error::NoFixations);
    }
    if n == y.len() {
        return Err(Error::Degenerate("every cell is fixated"));
    }
    let (mut pos, mut neg) = (Vec::with_capacity(n), Vec::with_capacity(y.len() - n));
    for (i, &v) in y.data().iter().enumerate() {
        if p.is_fixated(i) {
            pos.push(v);
        } else {
            neg.push(v);
        }
    }
    roc_auc(&pos, &neg)
}

/// Negative cell indices drawn for each split of [`shuffled_auc`]:
/// `min(pool, wanted)` distinct pool cells per split.
pub fn shuffle_negatives(pool: &FixationMap, wanted: usize, splits: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let cells = pool.fixated_indices();
    if cells.is_empty() {
        return Err(Error::Empty("shuffled-AUC negative pool".into()));
    }
    if splits == 0 {
        return Err(Error::Config("shuffled AUC needs at least one split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = wanted.min(cells.len());
    Ok((0..splits)
        .map(|_| {
            index::sample(&mut rng, cells.len(), take)
                .into_iter()
                .map(|k| cells[k])
                .collect()
        })
        .collect())
}

/// Mean over `splits` resamplings of the AUC of fixated cells against
/// cells sampled from `pool` (fixations of other stimuli).
pub fn shuffled_auc(y: &Tensor, p: &FixationMap, pool: &FixationMap, splits: usize, seed: u64) -> Result<f64> {
    check_dims(y, p.dims())?;
    if pool.dims() != p.dims() {
        return Err(Error::Dimension(
            "negative pool differs in size from the fixation map".into(),
        ));
    }
    let fixated = p.fixated_indices();
    if fixated.is_empty() {
        return Err(Error::NoFixations);
    }
    let pos: Vec<f64> = fixated.iter().map(|&i| y.data()[i]).collect();
    let draws = shuffle_negatives(pool, fixated.len(), splits, seed)?;
    let mut total = 0.0;
    for cells in &draws {
        let neg: Vec<f64> = cells.iter().map(|&i| y.data()[i]).collect();
        total += roc_auc(&pos, &neg)?;
    }
    Ok(total / draws.len() as f64)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const MIN_STD: f64 = 1e-8;

/// Mean standardized prediction at fixated cells.
pub fn nss_metric(y: &Tensor, p: &FixationMap) -> Result<f64> {
    check_dims(y, p.dims())?;
    let fixated = p.fixated_indices();
    if fixated.is_empty() {
        return Err(Error::NoFixations);
    }
    let (mean, std) = mean_and_std(y.data());
    if !(std > MIN_STD) {
        return Err(Error::Degenerate("constant prediction"));
    }
    let total: f64 = fixated.iter().map(|&i| (y.data()[i] - mean) / std).sum();
    Ok(total / fixated.len() as f64)
}

/// Pearson correlation between prediction and ground-truth map.
pub fn cc_metric(y: &Tensor, q: &Tensor) -> Result<f64> {
    check_dims(y, q.map_dims()?)?;
    let (my, sy) = mean_and_std(y.data());
    let (mq, sq) = mean_and_std(q.data());
    if !(sy > MIN_STD) {
        return Err(Error::Degenerate("constant prediction"));
    }
    if !(sq > MIN_STD) {
        return Err(Error::Degenerate("constant ground-truth map"));
    }
    let cov = y
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - my) * (b - mq))
        .sum::<f64>()
        / y.len() as f64;
    Ok(cov / (sy * sq))
}

fn unit_sum(t: &Tensor, what: &'static str) -> Result<Vec<f64>> {
    if t.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Degenerate(what));
    }
    let total = t.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(what));
    }
    Ok(t.data().iter().map(|v| v / total).collect())
}

/// Histogram intersection of the two maps after rescaling each to unit sum.
pub fn sim_metric(y: &Tensor, q: &Tensor) -> Result<f64> {
    check_dims(y, q.map_dims()?)?;
    let a = unit_sum(y, "prediction is not a non-negative map with mass")?;
    let b = unit_sum(q, "ground truth is not a non-negative map with mass")?;
    Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum())
}

/// Average annotation map: all fixations accumulated (with multiplicity),
/// blurred with width `sigma`, scaled to a maximum of one.
pub fn center_bias_map(records: &[FixationRecord], height: usize, width: usize, sigma: f64) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::Empty("center-bias map needs at least one fixation".into()));
    }
    let mut counts = vec![0.0; height * width];
    for r in records {
        if r.x >= width || r.y >= height {
            return Err(Error::Dimension(format!(
                "fixation ({}, {}) outside the {width}x{height} map",
                r.x, r.y
            )));
        }
        counts[r.y * width + r.x] += 1.0;
    }
    let points = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(i, &c)| (i / width, i % width, c));
    let blurred = gaussian_splat(points, height, width, sigma)?;
    let peak = blurred.max();
    Ok(blurred.map(|v| v / peak))
}
