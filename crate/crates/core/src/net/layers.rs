use super::params::{AttentionParams, ConvLayer, ConvLstmParams, EncoderParams};
use super::{EncoderConfig, ATTENTION_POOL};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn conv_same(tape: &mut Tape, x: Var, layer: &ConvLayer<Var>) -> Result<Var> {
    let k = tape.value(layer.kernel).shape()[0];
    tape.conv2d(x, layer.kernel, layer.bias, 1, k / 2)
}

/// Frame `[S, S, C]` to features `[S/8, S/8, Cf]`.
pub fn encode(tape: &mut Tape, frame: Var, params: &EncoderParams<Var>, config: &EncoderConfig) -> Result<Var> {
    let (h, w, _) = tape.value(frame).hwc()?;
    config.output_shape(h)?;
    if h != w {
        return Err(Error::Config(format!("frames must be square, got {h}x{w}")));
    }
    let mut x = frame;
    for (b, layer) in params.blocks.iter().enumerate() {
        let z = conv_same(tape, x, layer)?;
        x = tape.relu(z);
        if b < config.pooled_blocks {
            x = tape.max_pool2d(x, 2, 2)?;
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// Sigmoid map at 1/4 of the feature resolution.
    pub coarse: Var,
    /// `coarse` upsampled ×4 to the feature resolution, `[h, w, 1]`.
    pub map: Var,
}

pub fn attention_forward(tape: &mut Tape, x: Var, params: &AttentionParams<Var>) -> Result<AttentionOutput> {
    let (h, w, _) = tape.value(x).hwc()?;
    if h % ATTENTION_POOL != 0 || w % ATTENTION_POOL != 0 {
        return Err(Error::Config(format!(
            "feature map {h}x{w} is not divisible by the attention pooling {ATTENTION_POOL}"
        )));
    }
    let z = conv_same(tape, x, &params.conv1)?;
    let a = tape.relu(z);
    let a = tape.max_pool2d(a, 2, 2)?;
    let z = conv_same(tape, a, &params.conv2)?;
    let a = tape.relu(z);
    let a = tape.max_pool2d(a, 2, 2)?;
    let z = conv_same(tape, a, &params.out)?;
    let coarse = tape.sigmoid(z);
    let map = tape.upsample_bilinear(coarse, ATTENTION_POOL)?;
    Ok(AttentionOutput { coarse, map })
}

/// `(1 + M) ∘ X` when `residual`, else `M ∘ X`, per channel.
pub fn enhance(tape: &mut Tape, x: Var, m: Var, residual: bool) -> Result<Var> {
    let (h, w, _) = tape.value(x).hwc()?;
    if tape.value(m).shape() != [h, w, 1] {
        return Err(Error::Dimension(format!(
            "attention map {:?} does not match features {:?}",
            tape.value(m).shape(),
            tape.value(x).shape()
        )));
    }
    let gate = if residual { tape.add_const(m, 1.0) } else { m };
    tape.hadamard(x, gate)
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmStep {
    pub state: LstmState,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
}

/// Peephole convLSTM update:
///
/// ```text
/// i = σ(Wxi∗X + Whi∗H' + Wci∘C' + bi)
/// f = σ(Wxf∗X + Whf∗H' + Wcf∘C' + bf)
/// C = f∘C' + i∘tanh(Wxc∗X + Whc∗H' + bc)
/// o = σ(Wxo∗X + Who∗H' + Wco∘C + bo)
/// H = o∘tanh(C)
/// ```
///
/// where `H'`, `C'` are the previous state. The output gate peeks at the
/// updated cell `C`.
pub fn convlstm_step(tape: &mut Tape, xhat: Var, state: LstmState, p: &ConvLstmParams<Var>) -> Result<LstmStep> {
    let (sh, sw, hid) = tape.value(state.h).hwc()?;
    if tape.value(state.c).shape() != [sh, sw, hid] {
        return Err(Error::Dimension("hidden and cell state shapes differ".into()));
    }
    let (xh, xw, _) = tape.value(xhat).hwc()?;
    if (xh, xw) != (sh, sw) {
        return Err(Error::Dimension(format!(
            "features are {xh}x{xw} but the state is {sh}x{sw}"
        )));
    }
    let no_bias = tape.constant(Tensor::zeros(&[hid]));

    let pre = |tape: &mut Tape, wx: Var, wh: Var, b: Var| -> Result<Var> {
        let from_x = tape.conv2d(xhat, wx, b, 1, 1)?;
        let from_h = tape.conv2d(state.h, wh, no_bias, 1, 1)?;
        tape.add(from_x, from_h)
    };

    let zi = pre(tape, p.wx_i, p.wh_i, p.b_i)?;
    let peep = tape.hadamard(p.wc_i, state.c)?;
    let zi = tape.add(zi, peep)?;
    let i = tape.sigmoid(zi);

    let zf = pre(tape, p.wx_f, p.wh_f, p.b_f)?;
    let peep = tape.hadamard(p.wc_f, state.c)?;
    let zf = tape.add(zf, peep)?;
    let f = tape.sigmoid(zf);

    let zc = pre(tape, p.wx_c, p.wh_c, p.b_c)?;
    let candidate = tape.tanh(zc);
    let keep = tape.hadamard(f, state.c)?;
    let write = tape.hadamard(i, candidate)?;
    let c = tape.add(keep, write)?;

    let zo = pre(tape, p.wx_o, p.wh_o, p.b_o)?;
    let peep = tape.hadamard(p.wc_o, c)?;
    let zo = tape.add(zo, peep)?;
    let o = tape.sigmoid(zo);

    let squashed = tape.tanh(c);
    let h = tape.hadamard(o, squashed)?;
    Ok(LstmStep {
        state: LstmState { h, c },
        input_gate: i,
        forget_gate: f,
        output_gate: o,
    })
}

/// Hidden state to a `[h, w, 1]` map in `[0, 1]`.
pub fn readout(tape: &mut Tape, h: Var, p: &ConvLayer<Var>) -> Result<Var> {
    let z = tape.conv2d(h, p.kernel, p.bias, 1, 0)?;
    Ok(tape.sigmoid(z))
}
