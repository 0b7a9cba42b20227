//! Named model parameters, their initialization, and checkpoint files.
//!
//! The parameter structs are generic over the leaf type so that the same
//! layout carries owned [`Tensor`]s between steps and tape [`Var`]s
//! during a forward pass.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::{stns, Tape, Tensor, Var};

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Attention,
    ConvLstm,
    Readout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub blocks: Vec<ConvLayer<T>>,
}

/// Attention branch: two 3×3 conv+relu stages, each followed by 2×2
/// pooling, then a 3×3 conv to one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub out: ConvLayer<T>,
}

/// Gate weights of the peephole convLSTM.
///
/// `wx_*` act on the enhanced features, `wh_*` on the previous hidden
/// state (both 3×3 convolutions), `wc_*` are elementwise peephole maps on
/// the cell state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams<T> {
    pub wx_i: T,
    pub wh_i: T,
    pub wc_i: T,
    pub b_i: T,
    pub wx_f: T,
    pub wh_f: T,
    pub wc_f: T,
    pub b_f: T,
    pub wx_o: T,
    pub wh_o: T,
    pub wc_o: T,
    pub b_o: T,
    pub wx_c: T,
    pub wh_c: T,
    pub b_c: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub attention: AttentionParams<T>,
    pub lstm: ConvLstmParams<T>,
    /// 1×1 convolution from the hidden state to one channel.
    pub readout: ConvLayer<T>,
}

macro_rules! lstm_fields {
    ($m:ident) => {
        $m!(wx_i, wh_i, wc_i, b_i, wx_f, wh_f, wc_f, b_f, wx_o, wh_o, wc_o, b_o, wx_c, wh_c, b_c)
    };
}

impl<T> ConvLstmParams<T> {
    fn entries(&self) -> Vec<(&'static str, &T)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((stringify!($f), &self.$f)),*] };
        }
        lstm_fields!(list)
    }

    fn entries_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((stringify!($f), &mut self.$f)),*] };
        }
        lstm_fields!(list)
    }

    fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> ConvLstmParams<U> {
        macro_rules! build {
            ($($f:ident),*) => {
                ConvLstmParams { $($f: f(concat!("lstm.", stringify!($f)), &self.$f)),* }
            };
        }
        lstm_fields!(build)
    }
}

impl<T> ConvLayer<T> {
    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> ConvLayer<U> {
        ConvLayer {
            kernel: f(&format!("{prefix}.kernel"), &self.kernel),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

impl<T> ModelParams<T> {
    /// Every parameter with its stable name and group, in checkpoint order.
    pub fn entries(&self) -> Vec<(String, ParamGroup, &T)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.blocks.iter().enumerate() {
            out.push((format!("encoder.block{}.kernel", i + 1), ParamGroup::Encoder, &b.kernel));
            out.push((format!("encoder.block{}.bias", i + 1), ParamGroup::Encoder, &b.bias));
        }
        let a = &self.attention;
        for (name, layer) in [("conv1", &a.conv1), ("conv2", &a.conv2), ("out", &a.out)] {
            out.push((format!("attention.{name}.kernel"), ParamGroup::Attention, &layer.kernel));
            out.push((format!("attention.{name}.bias"), ParamGroup::Attention, &layer.bias));
        }
        for (name, t) in self.lstm.entries() {
            out.push((format!("lstm.{name}"), ParamGroup::ConvLstm, t));
        }
        out.push(("readout.kernel".into(), ParamGroup::Readout, &self.readout.kernel));
        out.push(("readout.bias".into(), ParamGroup::Readout, &self.readout.bias));
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, ParamGroup, &mut T)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.blocks.iter_mut().enumerate() {
            out.push((
                format!("encoder.block{}.kernel", i + 1),
                ParamGroup::Encoder,
                &mut b.kernel,
            ));
            out.push((format!("encoder.block{}.bias", i + 1), ParamGroup::Encoder, &mut b.bias));
        }
        let a = &mut self.attention;
        for (name, layer) in [("conv1", &mut a.conv1), ("conv2", &mut a.conv2), ("out", &mut a.out)] {
            out.push((
                format!("attention.{name}.kernel"),
                ParamGroup::Attention,
                &mut layer.kernel,
            ));
            out.push((format!("attention.{name}.bias"), ParamGroup::Attention, &mut layer.bias));
        }
        for (name, t) in self.lstm.entries_mut() {
            out.push((format!("lstm.{name}"), ParamGroup::ConvLstm, t));
        }
        out.push(("readout.kernel".into(), ParamGroup::Readout, &mut self.readout.kernel));
        out.push(("readout.bias".into(), ParamGroup::Readout, &mut self.readout.bias));
        out
    }

    /// Structure-preserving map; `f` sees the same names as [`Self::entries`].
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        let blocks = self
            .encoder
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.map(&format!("encoder.block{}", i + 1), &mut f))
            .collect();
        ModelParams {
            encoder: EncoderParams { blocks },
            attention: AttentionParams {
                conv1: self.attention.conv1.map("attention.conv1", &mut f),
                conv2: self.attention.conv2.map("attention.conv2", &mut f),
                out: self.attention.out.map("attention.out", &mut f),
            },
            lstm: self.lstm.map(&mut f),
            readout: self.readout.map("readout", &mut f),
        }
    }
}

pub fn group_of(name: &str) -> ParamGroup {
    match name.split('.').next() {
        Some("encoder") => ParamGroup::Encoder,
        Some("attention") => ParamGroup::Attention,
        Some("lstm") => ParamGroup::ConvLstm,
        _ => ParamGroup::Readout,
    }
}

impl ModelParams<Tensor> {
    /// Fan-in scaled normal kernels, zero biases and peephole maps, and a
    /// forget-gate bias of one.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |k: usize, cin: usize, cout: usize| -> ConvLayer<Tensor> {
            let std = (2.0 / (k * k * cin) as f64).sqrt();
            let kernel = Tensor::from_fn(&[k, k, cin, cout], |_| std * rng.sample::<f64, _>(StandardNormal));
            ConvLayer {
                kernel,
                bias: Tensor::zeros(&[cout]),
            }
        };

        let enc = &config.encoder;
        let mut cin = enc.in_channels;
        let mut blocks = Vec::with_capacity(enc.widths.len());
        for &w in &enc.widths {
            blocks.push(conv(3, cin, w));
            cin = w;
        }
        let feat = enc.feature_channels();
        let aw = config.attention_width;
        let attention = AttentionParams {
            conv1: conv(3, feat, aw),
            conv2: conv(3, aw, aw),
            out: conv(3, aw, 1),
        };

        let hid = config.hidden;
        let side = enc.feature_side();
        let mut gate = |cin: usize| conv(3, cin, hid).kernel;
        let (wx_i, wh_i) = (gate(feat), gate(hid));
        let (wx_f, wh_f) = (gate(feat), gate(hid));
        let (wx_o, wh_o) = (gate(feat), gate(hid));
        let (wx_c, wh_c) = (gate(feat), gate(hid));
        let peep = || Tensor::zeros(&[side, side, hid]);
        let lstm = ConvLstmParams {
            wx_i,
            wh_i,
            wc_i: peep(),
            b_i: Tensor::zeros(&[hid]),
            wx_f,
            wh_f,
            wc_f: peep(),
            b_f: Tensor::ones(&[hid]),
            wx_o,
            wh_o,
            wc_o: peep(),
            b_o: Tensor::zeros(&[hid]),
            wx_c,
            wh_c,
            b_c: Tensor::zeros(&[hid]),
        };
        let readout = conv(1, hid, 1);

        let mut params = ModelParams {
            encoder: EncoderParams { blocks },
            attention,
            lstm,
            readout,
        };
        for (_, _, t) in params.entries_mut() {
            t.set_requires_grad(true);
        }
        Ok(params)
    }

    /// Records every parameter on `tape`; parameters whose group is
    /// rejected by `trainable` become constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> ModelParams<Var> {
        self.map(|name, t| {
            if trainable(group_of(name)) {
                tape.param(t)
            } else {
                tape.constant(t.detached())
            }
        })
    }

    pub fn zero_grad(&mut self) {
        for (_, _, t) in self.entries_mut() {
            t.zero_grad();
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &NetConfig) -> Result<()> {
        let expected = ModelParams::init(config, 0)?;
        let mine = self.entries();
        let theirs = expected.entries();
        if mine.len() != theirs.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, configuration needs {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name, _, a), (ename, _, b)) in mine.iter().zip(&theirs) {
            if name != ename || a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, configuration needs {ename} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Writes one `STNS` file per parameter plus `manifest.txt` listing
    /// `name<TAB>shape<TAB>file` in checkpoint order, and `net.conf`.
    pub fn save(&self, config: &NetConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (name, _, t) in self.entries() {
            let file = format!("{name}.stns");
            stns::write(dir.join(&file), t)?;
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(manifest, "{name}\t{}\t{file}", shape.join("x")).unwrap();
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("net.conf");
        fs::write(&path, config.to_conf()).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint written by [`Self::save`] and validates it
    /// against its own configuration.
    pub fn load(dir: impl AsRef<Path>) -> Result<(NetConfig, Self)> {
        let dir = dir.as_ref();
        let conf_path = dir.join("net.conf");
        let text = fs::read_to_string(&conf_path).map_err(|e| Error::io(&conf_path, e))?;
        let config = NetConfig::from_conf(&text).map_err(|(line, msg)| Error::format(&conf_path, line, msg))?;

        let manifest_path = dir.join("manifest.txt");
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut files = std::collections::HashMap::new();
        for (i, line) in manifest.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let [name, _shape, file] = cols[..] else {
                return Err(Error::format(&manifest_path, i + 1, "expected name, shape, file"));
            };
            files.insert(name.to_string(), file.to_string());
        }

        let template = ModelParams::init(&config, 0)?;
        let mut failure = None;
        let params = template.map(|name, _| {
            let loaded = match files.get(name) {
                Some(file) => stns::read(dir.join(file)),
                None => Err(Error::format(&manifest_path, 0, format!("missing parameter {name}"))),
            };
            match loaded {
                Ok(t) => t.with_grad(),
                Err(e) => {
                    failure.get_or_insert(e);
                    Tensor::scalar(0.0)
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        params.check_shapes(&config)?;
        Ok((config, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let p = ModelParams::init(&NetConfig::tiny(), 1).unwrap();
        let names: Vec<String> = p.entries().into_iter().map(|(n, _, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "encoder.block1.kernel");
        assert!(names.contains(&"lstm.wc_o".to_string()));
        let mapped = p.map(|n, _| n.to_string());
        let mapped_names: Vec<String> = mapped.entries().into_iter().map(|(_, _, n)| n.clone()).collect();
        assert_eq!(mapped_names, names);
    }

    #[test]
    fn init_is_seeded_and_sets_forget_bias() {
        let cfg = NetConfig::tiny();
        let a = ModelParams::init(&cfg, 3).unwrap();
        let b = ModelParams::init(&cfg, 3).unwrap();
        let c = ModelParams::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.lstm.b_f.data().iter().all(|&v| v == 1.0));
        assert!(a.lstm.b_i.data().iter().all(|&v| v == 0.0));
        assert!(a.entries().iter().all(|(_, _, t)| t.requires_grad()));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = NetConfig::tiny();
        let p = ModelParams::init(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(&cfg, dir.path()).unwrap();
        let (cfg2, q) = ModelParams::load(dir.path()).unwrap();
        assert_eq!(cfg, cfg2);
        for ((n, _, a), (_, _, b)) in p.entries().iter().zip(q.entries()) {
            assert_eq!(a.shape(), b.shape(), "{n}");
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.starts_with("encoder.block1.kernel\t3x3x3x"));
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let cfg = NetConfig::tiny();
        let mut p = ModelParams::init(&cfg, 9).unwrap();
        p.readout.bias = Tensor::zeros(&[2]);
        assert!(matches!(p.check_shapes(&cfg), Err(Error::Config(_))));
    }
}
