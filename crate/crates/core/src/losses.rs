//! Training objective `L = L_KL + α1·L_CC + α2·L_NSS`, recorded on a tape
//! so that gradients flow back into the prediction.
//!
//! Predictions may be `[h, w]` or `[h, w, 1]`; targets must have the same
//! spatial size. Standard deviations are population deviations.

use crate::data::FixationMap;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_cc: f64,
    pub alpha_nss: f64,
    /// Added to every cell before the KL normalization, and the smallest
    /// standard deviation accepted by CC and NSS.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_cc: 0.1,
            alpha_nss: 0.1,
            eps: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_cc >= 0.0 && self.alpha_nss >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with eps > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Flattens a prediction to `[n]` after checking it against `(h, w)`.
fn flat_prediction(tape: &mut Tape, y: Var, dims: (usize, usize)) -> Result<Var> {
    let ydims = tape.value(y).map_dims()?;
    if ydims != dims {
        return Err(Error::Dimension(format!(
            "prediction is {ydims:?} but the target is {dims:?}"
        )));
    }
    tape.reshape(y, &[dims.0 * dims.1])
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(y − mean(y)) / std(y)` on the tape, for a flat `y`.
fn standardize(tape: &mut Tape, y: Var, eps: f64, what: &'static str) -> Result<Var> {
    let (_, std) = mean_std(tape.value(y).data());
    if !(std > eps) {
        return Err(Error::Degenerate(what));
    }
    let n = tape.value(y).len();
    let mu = tape.mean(y);
    let mu = tape.expand(mu, &[n])?;
    let centered = tape.sub(y, mu)?;
    let sq = tape.hadamard(centered, centered)?;
    let var = tape.mean(sq);
    let sd = tape.sqrt(var);
    let sd = tape.expand(sd, &[n])?;
    tape.div(centered, sd)
}

/// `Σ Q̂ log(Q̂ / Ŷ)` where `Ŷ`, `Q̂` are `Y + ε`, `Q + ε` rescaled to unit sum.
pub fn kl_div(tape: &mut Tape, y: Var, q: &Tensor, eps: f64) -> Result<Var> {
    let dims = q.map_dims()?;
    if q.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Dimension(
            "ground-truth map must be finite and non-negative".into(),
        ));
    }
    if q.sum() <= 0.0 {
        return Err(Error::Degenerate("ground-truth map has no mass"));
    }
    let n = dims.0 * dims.1;
    let y = flat_prediction(tape, y, dims)?;

    let q_total: f64 = q.data().iter().map(|v| v + eps).sum();
    let q_hat: Vec<f64> = q.data().iter().map(|v| (v + eps) / q_total).collect();
    let q_entropy_term: f64 = q_hat.iter().map(|&p| p * p.ln()).sum();

    let shifted = tape.add_const(y, eps);
    let total = tape.sum(shifted);
    let total = tape.expand(total, &[n])?;
    let y_hat = tape.div(shifted, total)?;
    let log_y = tape.ln(y_hat);
    let q_hat = tape.constant(Tensor::new(&[n], q_hat)?);
    let cross = tape.hadamard(q_hat, log_y)?;
    let cross = tape.sum(cross);
    let neg = tape.scale(cross, -1.0);
    Ok(tape.add_const(neg, q_entropy_term))
}

/// `−cov(Y, Q) / (std(Y)·std(Q))`.
pub fn cc_loss(tape: &mut Tape, y: Var, q: &Tensor, eps: f64) -> Result<Var> {
    let dims = q.map_dims()?;
    let y = flat_prediction(tape, y, dims)?;
    let (q_mean, q_std) = mean_std(q.data());
    if !(q_std > eps) {
        return Err(Error::Degenerate("constant ground-truth map"));
    }
    let y_std = standardize(tape, y, eps, "constant prediction")?;
    let q_std = Tensor::new(
        &[dims.0 * dims.1],
        q.data().iter().map(|v| (v - q_mean) / q_std).collect(),
    )?;
    let q_std = tape.constant(q_std);
    let prod = tape.hadamard(y_std, q_std)?;
    let corr = tape.mean(prod);
    Ok(tape.scale(corr, -1.0))
}

/// `−(1/N) Σ P(x)·(Y(x) − μ(Y)) / std(Y)` over the `N` fixated cells.
pub fn nss_loss(tape: &mut Tape, y: Var, p: &FixationMap, eps: f64) -> Result<Var> {
    let dims = p.dims();
    let y = flat_prediction(tape, y, dims)?;
    let n_fix = p.count();
    if n_fix == 0 {
        return Err(Error::NoFixations);
    }
    let y_std = standardize(tape, y, eps, "constant prediction")?;
    let mask = tape.constant(p.tensor().reshape(&[dims.0 * dims.1])?);
    let hits = tape.hadamard(y_std, mask)?;
    let hits = tape.sum(hits);
    Ok(tape.scale(hits, -1.0 / n_fix as f64))
}

/// Handles to the weighted objective and its unweighted parts.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub kl: Var,
    pub cc: Var,
    /// `None` when the frame has no fixations.
    pub nss: Option<Var>,
}

/// `L_KL + α1·L_CC + α2·L_NSS`. A frame without fixations contributes no
/// NSS term; all other errors propagate.
pub fn combined_loss(tape: &mut Tape, y: Var, p: &FixationMap, q: &Tensor, weights: &LossWeights) -> Result<LossTerms> {
    weights.validate()?;
    if p.dims() != q.map_dims()? {
        return Err(Error::Dimension("fixation and saliency maps differ in size".into()));
    }
    let kl = kl_div(tape, y, q, weights.eps)?;
    let cc = cc_loss(tape, y, q, weights.eps)?;
    let nss = match nss_loss(tape, y, p, weights.eps) {
        Ok(v) => Some(v),
        Err(Error::NoFixations) => None,
        Err(e) => return Err(e),
    };
    let weighted_cc = tape.scale(cc, weights.alpha_cc);
    let mut total = tape.add(kl, weighted_cc)?;
    if let Some(nss) = nss {
        let weighted = tape.scale(nss, weights.alpha_nss);
        total = tape.add(total, weighted)?;
    }
    Ok(LossTerms { total, kl, cc, nss })
}

/// Per-frame values of a summed sequence loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub kl: f64,
    pub cc: f64,
    pub nss: f64,
    /// Frames whose NSS term was dropped for lack of fixations.
    pub frames_without_fixations: usize,
}

/// `Σ_t L(Y_t, P_t, Q_t)`.
pub fn video_loss(
    tape: &mut Tape,
    ys: &[Var],
    ps: &[FixationMap],
    qs: &[Tensor],
    weights: &LossWeights,
) -> Result<(Var, LossSummary)> {
    if ys.len() != ps.len() || ys.len() != qs.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: {} predictions, {} fixation maps, {} saliency maps",
            ys.len(),
            ps.len(),
            qs.len()
        )));
    }
    if ys.is_empty() {
        return Err(Error::Empty("loss sequence".into()));
    }
    let mut summary = LossSummary::default();
    let mut total: Option<Var> = None;
    for ((&y, p), q) in ys.iter().zip(ps).zip(qs) {
        let terms = combined_loss(tape, y, p, q, weights)?;
        summary.kl += tape.value(terms.kl).item();
        summary.cc += tape.value(terms.cc).item();
        match terms.nss {
            Some(v) => summary.nss += tape.value(v).item(),
            None => summary.frames_without_fixations += 1,
        }
        total = Some(match total {
            None => terms.total,
            Some(acc) => tape.add(acc, terms.total)?,
        });
    }
    let total = total.expect("non-empty sequence");
    summary.total = tape.value(total).item();
    Ok((total, summary))
}

/// The composite loss applied to an attention map against static targets.
pub fn image_loss(tape: &mut Tape, m: Var, p: &FixationMap, q: &Tensor, weights: &LossWeights) -> Result<LossTerms> {
    combined_loss(tape, m, p, q, weights)
}

/// Evaluates a loss on a constant prediction, returning its value.
pub fn evaluate(y: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let y = tape.constant(y.detached());
    let out = f(&mut tape, y)?;
    Ok(tape.value(out).item())
}
