//! Slow, direct reference implementations.
//!
//! Nothing here shares code with the library proper: each function is the
//! textbook formula written as plainly as possible, so that agreement
//! with the optimized paths is evidence rather than tautology.

use crate::data::FixationRecord;
use crate::tensor::Tensor;

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    match *t.shape() {
        [h, w, c] => (h, w, c),
        [h, w] => (h, w, 1),
        ref s => panic!("oracle expects a map or [H, W, C], got {s:?}"),
    }
}

/// Cross-correlation with zero padding, one output cell at a time.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (h, w, cin) = dims3(input);
    let [kh, kw, kc, cout] = *kernel.shape() else {
        panic!("kernel must be [kh, kw, cin, cout]")
    };
    assert_eq!(kc, cin);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let x = |r: i64, c: i64, ch: usize| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            input.data()[(r as usize * w + c as usize) * cin + ch]
        }
    };
    let k = |a: usize, b: usize, i: usize, o: usize| kernel.data()[((a * kw + b) * cin + i) * cout + o];
    let mut out = vec![0.0; oh * ow * cout];
    for r in 0..oh {
        for c in 0..ow {
            for o in 0..cout {
                let mut acc = bias.data()[o];
                for a in 0..kh {
                    for b in 0..kw {
                        for i in 0..cin {
                            let rr = (r * stride + a) as i64 - padding as i64;
                            let cc = (c * stride + b) as i64 - padding as i64;
                            acc += x(rr, cc, i) * k(a, b, i, o);
                        }
                    }
                }
                out[(r * ow + c) * cout + o] = acc;
            }
        }
    }
    Tensor::new(&[oh, ow, cout], out).unwrap()
}

pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (h, w, ch) = dims3(input);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::with_capacity(oh * ow * ch);
    for r in 0..oh {
        for c in 0..ow {
            for k in 0..ch {
                let mut best = f64::NEG_INFINITY;
                for a in 0..window {
                    for b in 0..window {
                        best = best.max(input.data()[((r * stride + a) * w + c * stride + b) * ch + k]);
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(&[oh, ow, ch], out).unwrap()
}

/// Bilinear resize that maps the corner cells of input and output onto
/// each other, computed with floating-point source coordinates.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w, ch) = dims3(input);
    let src = |i: usize, n_in: usize, n_out: usize| -> f64 {
        if n_out == 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let at = |r: usize, c: usize, k: usize| input.data()[(r * w + c) * ch + k];
    let mut out = Vec::with_capacity(out_h * out_w * ch);
    for i in 0..out_h {
        let y = src(i, h, out_h);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(h - 1);
        for j in 0..out_w {
            let x = src(j, w, out_w);
            let (x0, fx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(w - 1);
            for k in 0..ch {
                let top = at(y0, x0, k) * (1.0 - fx) + at(y0, x1, k) * fx;
                let bot = at(y1, x0, k) * (1.0 - fx) + at(y1, x1, k) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[out_h, out_w, ch], out).unwrap()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating every pair.
pub fn pair_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `Σ q' ln(q' / y')` where `z' = (z + ε) / Σ(z + ε)`.
pub fn kl(y: &[f64], q: &[f64], eps: f64) -> f64 {
    let sy: f64 = y.iter().map(|v| v + eps).sum();
    let sq: f64 = q.iter().map(|v| v + eps).sum();
    y.iter()
        .zip(q)
        .map(|(a, b)| {
            let (a, b) = ((a + eps) / sy, (b + eps) / sq);
            b * (b / a).ln()
        })
        .sum()
}

/// Pearson correlation with population moments.
pub fn cc(y: &[f64], q: &[f64]) -> f64 {
    let (my, sy) = moments(y);
    let (mq, sq) = moments(q);
    let n = y.len() as f64;
    y.iter().zip(q).map(|(a, b)| (a - my) * (b - mq)).sum::<f64>() / n / (sy * sq)
}

/// Mean standardized value at the `fixated` cells.
pub fn nss(y: &[f64], fixated: &[usize]) -> f64 {
    let (m, s) = moments(y);
    fixated.iter().map(|&i| (y[i] - m) / s).sum::<f64>() / fixated.len() as f64
}

/// `Σ min(y', q')` after scaling both to unit sum.
pub fn sim(y: &[f64], q: &[f64]) -> f64 {
    let (sy, sq): (f64, f64) = (y.iter().sum(), q.iter().sum());
    y.iter().zip(q).map(|(a, b)| (a / sy).min(b / sq)).sum()
}

/// Gaussian splats evaluated at every pixel for every point, keeping
/// contributions within `4σ`.
pub fn gaussian_density(points: &[(usize, usize)], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            for &(pr, pc) in points {
                let d = ((r as f64 - pr as f64).powi(2) + (c as f64 - pc as f64).powi(2)).sqrt();
                if d <= 4.0 * sigma {
                    out[r * width + c] += (-d * d / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    out
}

/// [`gaussian_density`] normalized to unit sum.
pub fn density_map(points: &[(usize, usize)], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let d = gaussian_density(points, height, width, sigma);
    let total: f64 = d.iter().sum();
    d.iter().map(|v| v / total).collect()
}

/// Every record splatted with multiplicity, then scaled to a maximum of one.
pub fn center_bias(records: &[FixationRecord], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let points: Vec<(usize, usize)> = records.iter().map(|r| (r.y, r.x)).collect();
    let d = gaussian_density(&points, height, width, sigma);
    let peak = d.iter().cloned().fold(0.0, f64::max);
    d.iter().map(|v| v / peak).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Single-unit peephole LSTM whose output gate reads the updated cell.
#[derive(Clone, Copy, Debug)]
pub struct ScalarLstm {
    pub wxi: f64,
    pub whi: f64,
    pub wci: f64,
    pub bi: f64,
    pub wxf: f64,
    pub whf: f64,
    pub wcf: f64,
    pub bf: f64,
    pub wxo: f64,
    pub who: f64,
    pub wco: f64,
    pub bo: f64,
    pub wxc: f64,
    pub whc: f64,
    pub bc: f64,
}

/// Values produced by one [`ScalarLstm::step`].
#[derive(Clone, Copy, Debug)]
pub struct ScalarStep {
    pub h: f64,
    pub c: f64,
    pub i: f64,
    pub f: f64,
    pub o: f64,
}

impl ScalarLstm {
    pub fn step(&self, x: f64, h: f64, c: f64) -> ScalarStep {
        let i = sigmoid(self.wxi * x + self.whi * h + self.wci * c + self.bi);
        let f = sigmoid(self.wxf * x + self.whf * h + self.wcf * c + self.bf);
        let c_new = f * c + i * (self.wxc * x + self.whc * h + self.bc).tanh();
        let o = sigmoid(self.wxo * x + self.who * h + self.wco * c_new + self.bo);
        ScalarStep {
            h: o * c_new.tanh(),
            c: c_new,
            i,
            f,
            o,
        }
    }
}

/// Central differences `(f(x + h·e_k) − f(x − h·e_k)) / 2h` for every `k`.
pub fn finite_difference(x: &Tensor, f: impl Fn(&Tensor) -> f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut plus = x.clone();
            plus.data_mut()[k] += h;
            let mut minus = x.clone();
            minus.data_mut()[k] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    diff / norm(&mut a.iter().cloned())
        .max(norm(&mut b.iter().cloned()))
        .max(floor)
}

/// `steps` Adam iterations on one scalar with `β1 = 0.9`, `β2 = 0.999`,
/// `ε = 1e-8`; returns every iterate after the start.
pub fn adam_scalar(w0: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(w);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(t as i32));
        let vhat = v / (1.0 - 0.999f64.powi(t as i32));
        w -= lr * mhat / (vhat.sqrt() + 1e-8);
        out.push(w);
    }
    out
}
