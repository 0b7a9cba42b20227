use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Updates applied to this parameter; drives its bias correction.
    t: u64,
}

/// Adam moment accumulators for an ordered list of parameters.
///
/// A parameter without a gradient in some step keeps its moments and its
/// own step count, so masked groups resume exactly where they stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Calls to [`adam_step`] that updated at least one parameter.
    pub step: u64,
    moments: Vec<Moments>,
}

impl OptimState {
    pub fn new(sizes: &[usize]) -> Self {
        OptimState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: sizes
                .iter()
                .map(|&n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    t: 0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Updates applied so far to parameter `i`.
    pub fn param_steps(&self, i: usize) -> u64 {
        self.moments[i].t
    }
}

/// One bias-corrected Adam update. `grads[i] == None` leaves parameter `i`
/// and its moments untouched.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient aborts the step with all parameters intact.
pub fn adam_step(
    params: &mut [(&str, &mut Tensor)],
    grads: &[Option<&[f64]>],
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.moments.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, optimizer tracks {}",
            params.len(),
            grads.len(),
            state.moments.len()
        )));
    }
    for (((name, p), g), mom) in params.iter().zip(grads).zip(&state.moments) {
        if p.len() != mom.m.len() {
            return Err(Error::Dimension(format!(
                "{name}: {} values, optimizer state has {}",
                p.len(),
                mom.m.len()
            )));
        }
        if let Some(g) = g {
            if g.len() != p.len() {
                return Err(Error::Dimension(format!(
                    "{name}: gradient has {} values, parameter {}",
                    g.len(),
                    p.len()
                )));
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} at index {k}")));
            }
        }
    }

    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let mut touched = false;
    for (((_, p), g), mom) in params.iter_mut().zip(grads).zip(&mut state.moments) {
        let Some(g) = g else { continue };
        touched = true;
        mom.t += 1;
        let c1 = 1.0 - b1.powi(mom.t as i32);
        let c2 = 1.0 - b2.powi(mom.t as i32);
        for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.iter()).zip(&mut mom.m).zip(&mut mom.v) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    if touched {
        state.step += 1;
    }
    Ok(())
}
