//! The attentive CNN-convLSTM saliency model.
//!
//! Per frame: a convolutional encoder produces features `X` at 1/8 of the
//! input resolution; an attention branch (convs, two poolings, sigmoid,
//! ×4 bilinear upsampling) produces a single-channel map `M ∈ [0,1]`;
//! features are enhanced as `(1 + M) ∘ X` (or `M ∘ X`); a peephole
//! convLSTM threads `(H, C)` across frames; a 1×1 convolution plus
//! sigmoid reads out the saliency map `Y`.

mod layers;
pub mod params;

pub use layers::{attention_forward, convlstm_step, encode, enhance, readout, AttentionOutput, LstmState, LstmStep};
pub use params::{ConvLayer, ConvLstmParams, ModelParams, ParamGroup};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Pooling factor inside the attention branch (two 2×2 poolings).
pub const ATTENTION_POOL: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Output channels of each conv3×3+relu block.
    pub widths: Vec<usize>,
    /// Blocks 1..=pooled_blocks are followed by a 2×2 max-pool.
    pub pooled_blocks: usize,
    pub input_side: usize,
    pub in_channels: usize,
}

impl EncoderConfig {
    /// Five blocks of widths 16/32/64/64/64 on 96×96 RGB, pooling after
    /// the first three: 12×12×64 features.
    pub fn desk() -> Self {
        EncoderConfig {
            widths: vec![16, 32, 64, 64, 64],
            pooled_blocks: 3,
            input_side: 96,
            in_channels: 3,
        }
    }

    /// VGG-16 conv1–conv5 widths on 224×224 input: 28×28×512 features.
    pub fn full_scale() -> Self {
        EncoderConfig {
            widths: vec![64, 128, 256, 512, 512],
            pooled_blocks: 3,
            input_side: 224,
            in_channels: 3,
        }
    }

    pub fn downsampling(&self) -> usize {
        1 << self.pooled_blocks
    }

    pub fn feature_side(&self) -> usize {
        self.input_side / self.downsampling()
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("encoder has at least one block")
    }

    /// Output shape of [`encode`] for a square input of side `side`.
    pub fn output_shape(&self, side: usize) -> Result<[usize; 3]> {
        let down = self.downsampling();
        if side == 0 || !side.is_multiple_of(down) {
            return Err(Error::Config(format!(
                "input side {side} is not divisible by the encoder downsampling {down}"
            )));
        }
        Ok([side / down, side / down, self.feature_channels()])
    }

    /// Receptive field (in input pixels) of one feature cell.
    pub fn receptive_field(&self) -> usize {
        let mut layers = Vec::new();
        for b in 0..self.widths.len() {
            layers.push((3, 1));
            if b < self.pooled_blocks {
                layers.push((2, 2));
            }
        }
        receptive_field(&layers)
    }
}

/// Receptive field of a chain of `(kernel, stride)` layers.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    let (mut rf, mut jump) = (1, 1);
    for &(k, s) in layers {
        rf += (k - 1) * jump;
        jump *= s;
    }
    rf
}

/// How the attention map is applied to the encoder features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// `X̂ = (1 + M) ∘ X`
    Residual,
    /// `X̂ = M ∘ X`
    Selector,
    /// No attention branch: `X̂ = X`.
    Off,
}

impl AttentionMode {
    fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Residual => "residual",
            AttentionMode::Selector => "selector",
            AttentionMode::Off => "off",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "residual" => Ok(AttentionMode::Residual),
            "selector" => Ok(AttentionMode::Selector),
            "off" => Ok(AttentionMode::Off),
            other => Err(format!("unknown attention mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    /// Channels of the two hidden attention convs.
    pub attention_width: usize,
    pub attention_mode: AttentionMode,
    /// Hidden/cell channels of the convLSTM.
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            encoder: EncoderConfig::desk(),
            attention_width: 32,
            attention_mode: AttentionMode::Residual,
            hidden: 16,
        }
    }
}

impl NetConfig {
    /// A very small network on 32×32 input (4×4 features), used for
    /// finite-difference checks.
    pub fn tiny() -> Self {
        NetConfig {
            encoder: EncoderConfig {
                widths: vec![2, 3, 2, 2, 2],
                pooled_blocks: 3,
                input_side: 32,
                in_channels: 3,
            },
            attention_width: 2,
            attention_mode: AttentionMode::Residual,
            hidden: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        if enc.widths.is_empty() || enc.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be non-empty and positive".into()));
        }
        if enc.pooled_blocks > enc.widths.len() {
            return Err(Error::Config("more pooled blocks than encoder blocks".into()));
        }
        if enc.in_channels == 0 || self.attention_width == 0 || self.hidden == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let [side, _, _] = enc.output_shape(enc.input_side)?;
        if self.attention_mode != AttentionMode::Off && side % ATTENTION_POOL != 0 {
            return Err(Error::Config(format!(
                "feature side {side} is not divisible by the attention pooling {ATTENTION_POOL}"
            )));
        }
        Ok(())
    }

    /// Receptive field of one cell of the attention branch's coarse map.
    pub fn attention_receptive_field(&self) -> usize {
        let mut layers = Vec::new();
        let enc = &self.encoder;
        for b in 0..enc.widths.len() {
            layers.push((3, 1));
            if b < enc.pooled_blocks {
                layers.push((2, 2));
            }
        }
        layers.extend([(3, 1), (2, 2), (3, 1), (2, 2), (3, 1)]);
        receptive_field(&layers)
    }

    /// `key = value` lines, one per field.
    pub fn to_conf(&self) -> String {
        let widths: Vec<String> = self.encoder.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "encoder.widths = {}\nencoder.pooled_blocks = {}\nencoder.input_side = {}\n\
             encoder.in_channels = {}\nattention.width = {}\nattention.mode = {}\nlstm.hidden = {}\n",
            widths.join(","),
            self.encoder.pooled_blocks,
            self.encoder.input_side,
            self.encoder.in_channels,
            self.attention_width,
            self.attention_mode.as_str(),
            self.hidden,
        )
    }

    /// Parses [`Self::to_conf`] output. Missing keys keep their defaults;
    /// errors carry a 1-based line number.
    pub fn from_conf(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut cfg = NetConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| (i + 1, msg);
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "encoder.widths" => {
                    cfg.encoder.widths = value
                        .split(',')
                        .map(|w| num(w.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
                "encoder.pooled_blocks" => cfg.encoder.pooled_blocks = num(value)?,
                "encoder.input_side" => cfg.encoder.input_side = num(value)?,
                "encoder.in_channels" => cfg.encoder.in_channels = num(value)?,
                "attention.width" => cfg.attention_width = num(value)?,
                "attention.mode" => cfg.attention_mode = value.parse().map_err(err)?,
                "lstm.hidden" => cfg.hidden = num(value)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate().map_err(|e| (0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn state_shape(&self) -> [usize; 3] {
        let side = self.encoder.feature_side();
        [side, side, self.hidden]
    }
}

/// Tape handles for one processed frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameOutput {
    /// Saliency map `[h, w, 1]`.
    pub saliency: Var,
    /// Upsampled attention map `[h, w, 1]`, absent when attention is off.
    pub attention: Option<Var>,
    pub state: LstmState,
}

/// Runs one frame through encoder, attention, enhancement, convLSTM and
/// readout.
pub fn frame_step(
    tape: &mut Tape,
    config: &NetConfig,
    params: &ModelParams<Var>,
    frame: Var,
    state: LstmState,
) -> Result<FrameOutput> {
    let x = encode(tape, frame, &params.encoder, &config.encoder)?;
    let (xhat, attention) = match config.attention_mode {
        AttentionMode::Off => (x, None),
        mode => {
            let m = attention_forward(tape, x, &params.attention)?.map;
            (enhance(tape, x, m, mode == AttentionMode::Residual)?, Some(m))
        }
    };
    let step = convlstm_step(tape, xhat, state, &params.lstm)?;
    let saliency = readout(tape, step.state.h, &params.readout)?;
    Ok(FrameOutput {
        saliency,
        attention,
        state: step.state,
    })
}

/// Zero initial convLSTM state recorded as constants.
pub fn zero_state(tape: &mut Tape, config: &NetConfig) -> LstmState {
    let shape = config.state_shape();
    LstmState {
        h: tape.constant(Tensor::zeros(&shape)),
        c: tape.constant(Tensor::zeros(&shape)),
    }
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub saliency: Vec<Var>,
    pub attention: Vec<Var>,
    pub final_state: LstmState,
}

/// Unrolls the model over `frames` from a zero state.
pub fn forward_sequence(
    tape: &mut Tape,
    config: &NetConfig,
    params: &ModelParams<Var>,
    frames: &[Var],
) -> Result<SequenceOutput> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence".into()));
    }
    let mut state = zero_state(tape, config);
    let mut saliency = Vec::with_capacity(frames.len());
    let mut attention = Vec::with_capacity(frames.len());
    for &frame in frames {
        let out = frame_step(tape, config, params, frame, state)?;
        saliency.push(out.saliency);
        attention.extend(out.attention);
        state = out.state;
    }
    Ok(SequenceOutput {
        saliency,
        attention,
        final_state: state,
    })
}

/// Inference-time predictions for a sequence.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[T, h, w]` saliency maps.
    pub saliency: Tensor,
    /// `[T, h, w]` attention maps, absent when attention is off.
    pub attention: Option<Tensor>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.saliency.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Saliency map `[h, w]` of frame `t`.
    pub fn frame(&self, t: usize) -> Tensor {
        slice_frame(&self.saliency, t)
    }

    /// Attention map `[h, w]` of frame `t`.
    pub fn attention_frame(&self, t: usize) -> Option<Tensor> {
        self.attention.as_ref().map(|a| slice_frame(a, t))
    }
}

fn slice_frame(stack: &Tensor, t: usize) -> Tensor {
    let (h, w) = (stack.shape()[1], stack.shape()[2]);
    Tensor::new(&[h, w], stack.data()[t * h * w..(t + 1) * h * w].to_vec()).expect("frame of a stack")
}

/// A configured model with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyNet {
    pub config: NetConfig,
    pub params: ModelParams<Tensor>,
}

impl SaliencyNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(SaliencyNet { config, params })
    }

    /// Runs frames `[S, S, C]` one at a time, carrying the convLSTM state
    /// between per-frame tapes.
    pub fn predict(&self, frames: &[Tensor]) -> Result<Prediction> {
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence".into()));
        }
        let [side, _, _] = self.config.state_shape();
        let mut h = Tensor::zeros(&self.config.state_shape());
        let mut c = h.clone();
        let mut saliency = Vec::with_capacity(frames.len() * side * side);
        let mut attention = Vec::new();
        for frame in frames {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, |_| false);
            let state = LstmState {
                h: tape.constant(h),
                c: tape.constant(c),
            };
            let f = tape.constant(frame.detached());
            let out = frame_step(&mut tape, &self.config, &p, f, state)?;
            saliency.extend_from_slice(tape.value(out.saliency).data());
            if let Some(m) = out.attention {
                attention.extend_from_slice(tape.value(m).data());
            }
            h = tape.value(out.state.h).detached();
            c = tape.value(out.state.c).detached();
        }
        let t = frames.len();
        let attention = if attention.is_empty() {
            None
        } else {
            Some(Tensor::new(&[t, side, side], attention)?)
        };
        Ok(Prediction {
            saliency: Tensor::new(&[t, side, side], saliency)?,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_full_scale_feature_shapes() {
        assert_eq!(EncoderConfig::desk().output_shape(96).unwrap(), [12, 12, 64]);
        assert_eq!(EncoderConfig::full_scale().output_shape(224).unwrap(), [28, 28, 512]);
        assert!(matches!(EncoderConfig::desk().output_shape(100), Err(Error::Config(_))));
    }

    #[test]
    fn attention_sees_more_than_the_encoder() {
        for cfg in [NetConfig::default(), NetConfig::tiny()] {
            assert!(cfg.attention_receptive_field() > cfg.encoder.receptive_field());
        }
        // VGG-16 through conv5_3 without pool4/pool5
        assert_eq!(receptive_field(&[(3, 1); 2]), 5);
    }

    #[test]
    fn conf_roundtrip() {
        let mut cfg = NetConfig::tiny();
        cfg.attention_mode = AttentionMode::Off;
        assert_eq!(NetConfig::from_conf(&cfg.to_conf()).unwrap(), cfg);
        assert_eq!(NetConfig::from_conf("lstm.hidden = x").unwrap_err().0, 1);
        assert!(NetConfig::from_conf("\n\nbogus = 1").unwrap_err().0 == 3);
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let mut cfg = NetConfig::default();
        cfg.encoder.input_side = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = NetConfig::default();
        cfg.encoder.input_side = 80; // 10×10 features, not divisible by 4
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.attention_mode = AttentionMode::Off;
        assert!(cfg.validate().is_ok());
    }
}
