//! Forward kernels and their vector-Jacobian products.
//!
//! These work on plain [`Tensor`] values and know nothing about the tape;
//! [`super::Tape`] records calls to them and replays the `*_backward`
//! counterparts.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            // f64::max would drop NaN
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
        }
    }

    /// Derivative expressed through the forward output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be positive".into()));
    }
    let padded = len + 2 * padding;
    if k > padded {
        return Err(Error::Dimension(format!(
            "kernel extent {k} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let (h, w, cin) = input.hwc()?;
    let [kh, kw, kcin, cout] = *kernel.shape() else {
        return Err(Error::Dimension(format!(
            "kernel must be [k, k, Cin, Cout], got {:?}",
            kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "kernel expects {kcin} input channels but input has {cin}"
        )));
    }
    let oh = conv_out_len(h, kh, stride, padding)?;
    let ow = conv_out_len(w, kw, stride, padding)?;
    Ok(ConvGeometry {
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        oh,
        ow,
    })
}

/// Input coordinate touched by output `o` and kernel tap `k`, if inside the image.
#[inline]
fn tap(o: usize, k: usize, stride: usize, padding: usize, len: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(padding)?;
    (pos < len).then_some(pos)
}

/// 2-D cross-correlation over a zero-padded `[H, W, Cin]` input with a
/// `[k, k, Cin, Cout]` kernel and a `[Cout]` bias.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    if bias.len() != g.cout {
        return Err(Error::Dimension(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.cout
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            acc.copy_from_slice(bias.data());
            for ky in 0..g.kh {
                let Some(iy) = tap(oy, ky, stride, padding, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = tap(ox, kx, stride, padding, g.w) else {
                        continue;
                    };
                    let pixel = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let taps = &k[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &v) in pixel.iter().enumerate() {
                        // adding v * k for v == 0 leaves the sum unchanged
                        if v == 0.0 {
                            continue;
                        }
                        let row = &taps[ci * g.cout..][..g.cout];
                        for (a, &kv) in acc.iter_mut().zip(row) {
                            *a += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[g.oh, g.ow, g.cout], out)
}

/// Input (when requested), kernel and bias gradients.
pub type ConvGrads = (Option<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &[f64],
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    debug_assert_eq!(grad_out.len(), g.oh * g.ow * g.cout);
    let x = input.data();
    let k = kernel.data();
    let mut gx = want_input.then(|| vec![0.0; x.len()]);
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &grad_out[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (b, &v) in gb.iter_mut().zip(go) {
                *b += v;
            }
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ky in 0..g.kh {
                let Some(iy) = tap(oy, ky, stride, padding, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = tap(ox, kx, stride, padding, g.w) else {
                        continue;
                    };
                    let base = (iy * g.w + ix) * g.cin;
                    let tap_off = (ky * g.kw + kx) * g.cin * g.cout;
                    let pixel = &x[base..][..g.cin];
                    let gtaps = &mut gk[tap_off..][..g.cin * g.cout];
                    for (ci, &v) in pixel.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let row = &mut gtaps[ci * g.cout..][..g.cout];
                        for (a, &gv) in row.iter_mut().zip(go) {
                            *a += v * gv;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let taps = &k[tap_off..][..g.cin * g.cout];
                        let gpix = &mut gx[base..][..g.cin];
                        for (ci, gp) in gpix.iter_mut().enumerate() {
                            let row = &taps[ci * g.cout..][..g.cout];
                            let mut dot = 0.0;
                            for (&kv, &gv) in row.iter().zip(go) {
                                dot += kv * gv;
                            }
                            *gp += dot;
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gk, gb))
}

/// Max pooling over `window × window` patches of a `[H, W, C]` tensor.
///
/// Returns the pooled tensor and, per output element, the flat input
/// index that supplied the maximum (first occurrence in row-major window
/// order on ties). A NaN anywhere in a window wins.
pub fn max_pool2d_with_argmax(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = input.hwc()?;
    if window == 0 || stride == 0 {
        return Err(Error::Dimension("pool window and stride must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "pool window {window} exceeds spatial extent {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if best_idx == usize::MAX || x[idx] > best || (x[idx].is_nan() && !best.is_nan()) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(&[oh, ow, c], out)?, argmax))
}

pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    max_pool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

/// Source coordinates and weights for corner-aligned linear resampling of
/// an axis of length `src` to length `dst`.
fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            // exact rational position i * (src - 1) / (dst - 1)
            let num = i * (src - 1);
            let den = dst - 1;
            let lo = num / den;
            let rem = num % den;
            if rem == 0 {
                (lo, lo, 0.0)
            } else {
                (lo, lo + 1, rem as f64 / den as f64)
            }
        })
        .collect()
}

/// Corner-aligned bilinear resize of a `[H, W, C]` tensor.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension("resize target must be positive".into()));
    }
    let rows = linear_taps(h, out_h);
    let cols = linear_taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| x[(yy * w + xx) * c + ch];
                let top = if fx == 0.0 {
                    at(y0, x0)
                } else {
                    at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx
                };
                let v = if fy == 0.0 {
                    top
                } else {
                    let bottom = if fx == 0.0 {
                        at(y1, x0)
                    } else {
                        at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx
                    };
                    top * (1.0 - fy) + bottom * fy
                };
                out.push(v);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

fn resize_bilinear_backward(in_shape: (usize, usize, usize), out_h: usize, out_w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (h, w, c) = in_shape;
    let rows = linear_taps(h, out_h);
    let cols = linear_taps(w, out_w);
    let mut gx = vec![0.0; h * w * c];
    let mut o = 0;
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let g = grad_out[o];
                o += 1;
                let mut add = |yy: usize, xx: usize, wt: f64| gx[(yy * w + xx) * c + ch] += g * wt;
                add(y0, x0, (1.0 - fy) * (1.0 - fx));
                if fx != 0.0 {
                    add(y0, x1, (1.0 - fy) * fx);
                }
                if fy != 0.0 {
                    add(y1, x0, fy * (1.0 - fx));
                    if fx != 0.0 {
                        add(y1, x1, fy * fx);
                    }
                }
            }
        }
    }
    gx
}

/// Integer-factor corner-aligned bilinear upsampling. Factor 1 returns
/// an exact copy.
pub fn upsample_bilinear(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w, _) = input.hwc()?;
    match factor {
        0 => Err(Error::Dimension("upsample factor must be positive".into())),
        1 => Ok(input.detached()),
        f => resize_bilinear(input, h * f, w * f),
    }
}

pub(crate) fn upsample_bilinear_backward(input: &Tensor, factor: usize, grad_out: &[f64]) -> Vec<f64> {
    let (h, w, c) = input.hwc().expect("upsample input is [H, W, C]");
    if factor == 1 {
        return grad_out.to_vec();
    }
    resize_bilinear_backward((h, w, c), h * factor, w * factor, grad_out)
}

pub fn apply_activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

pub(crate) fn activation_backward(output: &Tensor, kind: Activation, grad_out: &[f64]) -> Vec<f64> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| g * kind.derivative_from_output(y))
        .collect()
}

/// How the second operand of [`hadamard`] is laid over the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum HadamardMode {
    Same,
    /// `b` is `[H, W, 1]` and multiplies every channel of `a`.
    ChannelMap {
        channels: usize,
    },
}

pub(crate) fn hadamard_mode(a: &Tensor, b: &Tensor) -> Result<HadamardMode> {
    if a.shape() == b.shape() {
        return Ok(HadamardMode::Same);
    }
    if let ([h, w, c], [bh, bw, 1]) = (a.shape(), b.shape()) {
        if h == bh && w == bw {
            return Ok(HadamardMode::ChannelMap { channels: *c });
        }
    }
    Err(Error::Dimension(format!(
        "cannot multiply shapes {:?} and {:?} elementwise",
        a.shape(),
        b.shape()
    )))
}

/// Elementwise product. `b` may also be a single-channel `[H, W, 1]` map
/// applied to every channel of an `[H, W, C]` tensor `a`.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = match hadamard_mode(a, b)? {
        HadamardMode::Same => a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        HadamardMode::ChannelMap { channels } => a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * b.data()[i / channels])
            .collect(),
    };
    Tensor::new(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_kernel_scales() {
        let out = conv2d(
            &Tensor::ones(&[3, 3, 1]),
            &t(&[1, 1, 1, 1], &[2.0]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.shape(), &[3, 3, 1]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_diagonal_kernel() {
        let out = conv2d(
            &t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]),
            &t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn conv_output_extent_with_stride_and_padding() {
        let out = conv2d(
            &Tensor::ones(&[7, 5, 2]),
            &Tensor::ones(&[3, 3, 2, 4]),
            &Tensor::zeros(&[4]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(out.shape(), &[4, 3, 4]);
        // top-left window sees 2x2 real pixels times 2 channels
        assert_eq!(out.get(&[0, 0, 0]), 8.0);
        assert_eq!(out.get(&[1, 1, 3]), 18.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let err = conv2d(
            &Tensor::ones(&[4, 4, 3]),
            &Tensor::ones(&[3, 3, 2, 1]),
            &Tensor::zeros(&[1]),
            1,
            0,
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
        let err = conv2d(
            &Tensor::ones(&[2, 2, 1]),
            &Tensor::ones(&[3, 3, 1, 1]),
            &Tensor::zeros(&[1]),
            1,
            0,
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn pool_takes_window_max() {
        let out = max_pool2d(&t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let c = max_pool2d(&Tensor::full(&[4, 6, 2], 1.5), 2, 2).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert!(c.data().iter().all(|&v| v == 1.5));
        assert!(max_pool2d(&Tensor::ones(&[1, 4, 1]), 2, 2).is_err());
    }

    #[test]
    fn pool_ties_pick_first_in_row_major_order() {
        let (_, arg) = max_pool2d_with_argmax(&Tensor::ones(&[2, 2, 1]), 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn upsample_identity_and_constant() {
        let x = Tensor::from_fn(&[3, 2, 2], |i| (i as f64).sin());
        assert_eq!(upsample_bilinear(&x, 1).unwrap(), x);
        let c = upsample_bilinear(&Tensor::full(&[3, 3, 2], 0.3), 4).unwrap();
        assert_eq!(c.shape(), &[12, 12, 2]);
        assert!(c.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn upsample_corner_aligned_values() {
        let x = t(&[2, 2, 1], &[0.0, 1.0, 2.0, 3.0]);
        let y = upsample_bilinear(&x, 2).unwrap();
        // corners are preserved under corner alignment
        assert_eq!(y.get(&[0, 0, 0]), 0.0);
        assert_eq!(y.get(&[0, 3, 0]), 1.0);
        assert_eq!(y.get(&[3, 0, 0]), 2.0);
        assert_eq!(y.get(&[3, 3, 0]), 3.0);
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        for x in [-800.0, -3.0, 0.25, 40.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
            assert!(sigmoid(x).is_finite());
        }
    }

    #[test]
    fn hadamard_broadcasts_single_channel_map() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let m = t(&[2, 2, 1], &[0.0, 1.0, 2.0, 3.0]);
        let out = hadamard(&a, &m).unwrap();
        assert_eq!(out.get(&[0, 0, 2]), 0.0);
        assert_eq!(out.get(&[0, 1, 1]), 4.0);
        assert_eq!(out.get(&[1, 1, 2]), 33.0);
        assert!(hadamard(&a, &Tensor::ones(&[2, 2, 2])).is_err());
        assert!(hadamard(&a, &Tensor::ones(&[3, 2, 1])).is_err());
    }
}
