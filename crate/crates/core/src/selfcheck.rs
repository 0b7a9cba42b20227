//! Property suites that compare the library against [`crate::oracle`].
//!
//! Every instance is generated from `ChaCha8Rng::seed_from_u64(seed + k)`
//! and failures name the suite, seed and instance index so they can be
//! replayed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{densify, FixationMap};
use crate::error::Result;
use crate::losses::{cc_loss, combined_loss, evaluate, kl_div, nss_loss, LossWeights};
use crate::metrics::{auc_judd, cc_metric, nss_metric, shuffle_negatives, shuffled_auc, sim_metric};
use crate::net::{
    attention_forward, convlstm_step, enhance, forward_sequence, AttentionMode, ConvLstmParams, LstmState, ModelParams,
    NetConfig,
};
use crate::oracle;
use crate::tensor::{ops, Tape, Tensor, Var};
use crate::trainer::{adam_step, OptimState, TrainConfig};

/// Outcome of one property suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
    /// Largest deviation observed, in the suite's own measure.
    pub worst: f64,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport {
            name,
            cases: 0,
            failures: Vec::new(),
            worst: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }

    /// Records one case; `deviation` above `tol` (or NaN) is a failure.
    fn check(&mut self, what: impl FnOnce() -> String, deviation: f64, tol: f64) {
        self.cases += 1;
        if deviation.is_nan() || deviation > self.worst {
            self.worst = if deviation.is_nan() { f64::NAN } else { deviation };
        }
        if !(deviation <= tol) {
            self.failures
                .push(format!("{}: deviation {deviation:e} > {tol:e}", what()));
        }
    }

    fn require(&mut self, what: impl FnOnce() -> String, ok: bool) {
        self.cases += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn error(&mut self, what: String, e: crate::Error) {
        self.cases += 1;
        self.failures.push(format!("{what}: {e}"));
    }

    pub fn summary(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        format!(
            "{status} {:<22} cases={:<5} worst={:.3e} failures={}",
            self.name,
            self.cases,
            self.worst,
            self.failures.len()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheckConfig {
    pub seed: u64,
    pub gradient_instances: usize,
    pub lstm_instances: usize,
    pub attention_instances: usize,
    pub metric_instances: usize,
    pub density_instances: usize,
    /// ε handed to the KL implementation; the oracle always uses 1e-8.
    pub kl_eps: f64,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        SelfCheckConfig {
            seed: 0,
            gradient_instances: 50,
            lstm_instances: 100,
            attention_instances: 100,
            metric_instances: 200,
            density_instances: 20,
            kl_eps: 1e-8,
        }
    }
}

pub fn run_all(cfg: &SelfCheckConfig) -> Vec<SuiteReport> {
    vec![
        gradient_suite(cfg.seed, cfg.gradient_instances),
        lstm_suite(cfg.seed, cfg.lstm_instances),
        attention_suite(cfg.seed, cfg.attention_instances),
        loss_suite(cfg.seed, cfg.kl_eps),
        metric_suite(cfg.seed, cfg.metric_instances),
        optimizer_suite(),
        density_suite(cfg.seed, cfg.density_instances),
    ]
}

fn rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, with random signs.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values at least 0.05 apart in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, order.iter().map(|&k| k as f64 * 0.05 - 1.0).collect()).unwrap()
}

fn random_fixations(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FixationMap {
    let n = h * w;
    let count = rng.gen_range(1..n.max(2));
    let cells: Vec<(usize, usize)> = (0..count).map(|_| (rng.gen_range(0..h), rng.gen_range(0..w))).collect();
    let mut p = FixationMap::from_cells(h, w, cells).unwrap();
    if p.count() == n {
        p = FixationMap::from_cells(h, w, [(0, 0)]).unwrap();
    }
    p
}

fn projection(shape: &[usize]) -> Tensor {
    // fixed, non-degenerate weights so every output cell matters
    Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.3)
}

type Loss<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Scalar `Σ R ∘ f(inputs)` for a fixed projection `R`.
fn projected(tape: &mut Tape, inputs: &[Var], f: &Loss<'_>) -> Result<Var> {
    let out = f(tape, inputs)?;
    let r = tape.constant(projection(tape.value(out).shape()));
    let prod = tape.hadamard(out, r)?;
    Ok(tape.sum(prod))
}

/// Per-input relative error between reverse-mode and central-difference
/// gradients of `Σ R ∘ f(inputs)`.
pub fn gradient_errors(inputs: &[Tensor], f: &Loss<'_>, h: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = projected(&mut tape, &vars, f)?;
    let grads = tape.backward(loss)?;

    let value = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = projected(&mut tape, &vars, f).expect("perturbed evaluation");
        tape.value(loss).item()
    };
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, v) in vars.iter().enumerate() {
        let auto = grads
            .get(*v)
            .map_or_else(|| vec![0.0; inputs[k].len()], <[f64]>::to_vec);
        let numeric = oracle::finite_difference(
            &inputs[k],
            |x| {
                let mut xs = inputs.to_vec();
                xs[k] = x.clone();
                value(&xs)
            },
            h,
        );
        errors.push(oracle::relative_error(&auto, &numeric, 1e-6));
    }
    Ok(errors)
}

/// Names of the differentiable operations exercised by [`gradient_case`].
pub const GRADIENT_CASES: [&str; 25] = [
    "conv2d/stride1/pad1",
    "conv2d/stride2/pad0",
    "max_pool2d",
    "upsample_bilinear/x2",
    "upsample_bilinear/x4",
    "sigmoid",
    "tanh",
    "relu",
    "hadamard",
    "hadamard/channel-map",
    "add",
    "sub",
    "div",
    "add_const",
    "scale",
    "ln",
    "sqrt",
    "sum",
    "mean",
    "expand",
    "reshape",
    "kl_div",
    "cc_loss",
    "nss_loss",
    "model/2-frame",
];

/// Inputs and function of instance `k`, which exercises
/// `GRADIENT_CASES[k % GRADIENT_CASES.len()]`.
pub fn gradient_case(seed: u64, k: usize) -> (&'static str, Vec<Tensor>, Box<Loss<'static>>) {
    let mut r = rng(seed, k);
    let name = GRADIENT_CASES[k % GRADIENT_CASES.len()];
    let u = |r: &mut ChaCha8Rng, s: &[usize]| uniform(r, s, -1.0, 1.0);
    let eps = 1e-8;
    let (inputs, f): (Vec<Tensor>, Box<Loss<'static>>) = match name {
        "conv2d/stride1/pad1" => (
            vec![u(&mut r, &[5, 4, 2]), u(&mut r, &[3, 3, 2, 3]), u(&mut r, &[3])],
            Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 1)),
        ),
        "conv2d/stride2/pad0" => (
            vec![u(&mut r, &[7, 7, 2]), u(&mut r, &[3, 3, 2, 2]), u(&mut r, &[2])],
            Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2, 0)),
        ),
        "max_pool2d" => (
            vec![distinct(&mut r, &[6, 4, 2])],
            Box::new(|t, v| t.max_pool2d(v[0], 2, 2)),
        ),
        "upsample_bilinear/x2" => (
            vec![u(&mut r, &[3, 3, 2])],
            Box::new(|t, v| t.upsample_bilinear(v[0], 2)),
        ),
        "upsample_bilinear/x4" => (
            vec![u(&mut r, &[2, 3, 1])],
            Box::new(|t, v| t.upsample_bilinear(v[0], 4)),
        ),
        "sigmoid" => (
            vec![uniform(&mut r, &[4, 3], -4.0, 4.0)],
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        "tanh" => (
            vec![uniform(&mut r, &[4, 3], -3.0, 3.0)],
            Box::new(|t, v| Ok(t.tanh(v[0]))),
        ),
        "relu" => (
            vec![signed_away_from_zero(&mut r, &[4, 3])],
            Box::new(|t, v| Ok(t.relu(v[0]))),
        ),
        "hadamard" => (
            vec![u(&mut r, &[3, 3, 2]), u(&mut r, &[3, 3, 2])],
            Box::new(|t, v| t.hadamard(v[0], v[1])),
        ),
        "hadamard/channel-map" => (
            vec![u(&mut r, &[3, 4, 3]), u(&mut r, &[3, 4, 1])],
            Box::new(|t, v| t.hadamard(v[0], v[1])),
        ),
        "add" => (
            vec![u(&mut r, &[5]), u(&mut r, &[5])],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        "sub" => (
            vec![u(&mut r, &[5]), u(&mut r, &[5])],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        "div" => (
            vec![u(&mut r, &[5]), uniform(&mut r, &[5], 0.5, 2.0)],
            Box::new(|t, v| t.div(v[0], v[1])),
        ),
        "add_const" => {
            let c = r.gen_range(-2.0..2.0);
            (vec![u(&mut r, &[2, 3])], Box::new(move |t, v| Ok(t.add_const(v[0], c))))
        }
        "scale" => {
            let c = r.gen_range(-2.0..2.0);
            (vec![u(&mut r, &[2, 3])], Box::new(move |t, v| Ok(t.scale(v[0], c))))
        }
        "ln" => (vec![uniform(&mut r, &[6], 0.5, 2.0)], Box::new(|t, v| Ok(t.ln(v[0])))),
        "sqrt" => (vec![uniform(&mut r, &[6], 0.5, 2.0)], Box::new(|t, v| Ok(t.sqrt(v[0])))),
        "sum" => (vec![u(&mut r, &[3, 2])], Box::new(|t, v| Ok(t.sum(v[0])))),
        "mean" => (vec![u(&mut r, &[3, 2])], Box::new(|t, v| Ok(t.mean(v[0])))),
        "expand" => (vec![u(&mut r, &[1])], Box::new(|t, v| t.expand(v[0], &[3, 4]))),
        "reshape" => (vec![u(&mut r, &[2, 3, 2])], Box::new(|t, v| t.reshape(v[0], &[4, 3]))),
        "kl_div" => {
            let q = uniform(&mut r, &[4, 5], 0.0, 1.0);
            (
                vec![uniform(&mut r, &[4, 5], 0.05, 1.0)],
                Box::new(move |t, v| kl_div(t, v[0], &q, eps)),
            )
        }
        "cc_loss" => {
            let q = uniform(&mut r, &[4, 5], 0.0, 1.0);
            (
                vec![u(&mut r, &[4, 5])],
                Box::new(move |t, v| cc_loss(t, v[0], &q, eps)),
            )
        }
        "nss_loss" => {
            let p = random_fixations(&mut r, 4, 5);
            (
                vec![u(&mut r, &[4, 5])],
                Box::new(move |t, v| nss_loss(t, v[0], &p, eps)),
            )
        }
        _ => model_case(&mut r),
    };
    (name, inputs, f)
}

/// Tiny model over two frames: the inputs are every parameter tensor and
/// the loss is the composite objective summed over both frames.
fn model_case(r: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Loss<'static>>) {
    let config = NetConfig::tiny();
    let mut params = ModelParams::init(&config, r.gen()).unwrap();
    // non-zero peepholes and biases so that every path carries gradient
    for (name, _, t) in params.entries_mut() {
        if name.contains(".wc_") || name.ends_with("bias") || name.contains(".b_") {
            *t = uniform(r, t.shape(), -0.5, 0.5);
        }
    }
    let side = config.encoder.input_side;
    let frames: Vec<Tensor> = (0..2).map(|_| uniform(r, &[side, side, 3], 0.0, 1.0)).collect();
    let [s, _, _] = config.state_shape();
    let targets: Vec<(FixationMap, Tensor)> = (0..2)
        .map(|_| (random_fixations(r, s, s), uniform(r, &[s, s], 0.0, 1.0)))
        .collect();
    let inputs: Vec<Tensor> = params.entries().into_iter().map(|(_, _, t)| t.clone()).collect();
    let f = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let mut next = v.iter();
        let bound = params.map(|_, _| *next.next().expect("one var per parameter"));
        let fv: Vec<Var> = frames.iter().map(|f| t.constant(f.clone())).collect();
        let out = forward_sequence(t, &config, &bound, &fv)?;
        let mut total: Option<Var> = None;
        for (&y, (p, q)) in out.saliency.iter().zip(&targets) {
            let term = combined_loss(t, y, p, q, &LossWeights::default())?.total;
            total = Some(match total {
                None => term,
                Some(a) => t.add(a, term)?,
            });
        }
        Ok(total.expect("two frames"))
    };
    (inputs, Box::new(f))
}

/// Reverse-mode against central differences (`h = 1e-5`), relative error
/// per input tensor below `1e-4`.
pub fn gradient_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("gradients");
    for k in 0..instances {
        let (name, inputs, f) = gradient_case(seed, k);
        match gradient_errors(&inputs, &*f, 1e-5) {
            Ok(errs) => {
                let worst = errs.iter().cloned().fold(0.0, f64::max);
                rep.check(|| format!("{name} seed={seed} instance={k}"), worst, 1e-4);
            }
            Err(e) => rep.error(format!("{name} seed={seed} instance={k}"), e),
        }
    }
    rep
}

fn random_scalar_lstm(r: &mut ChaCha8Rng) -> oracle::ScalarLstm {
    let mut w = || r.gen_range(-2.0..2.0);
    oracle::ScalarLstm {
        wxi: w(),
        whi: w(),
        wci: w(),
        bi: w(),
        wxf: w(),
        whf: w(),
        wcf: w(),
        bf: w(),
        wxo: w(),
        who: w(),
        wco: w(),
        bo: w(),
        wxc: w(),
        whc: w(),
        bc: w(),
    }
}

/// A 3×3 single-channel kernel with `centre` in the middle and unrelated
/// values elsewhere, which a 1×1 input with unit padding never reaches.
fn centred_kernel(r: &mut ChaCha8Rng, centre: f64) -> Tensor {
    let mut k = uniform(r, &[3, 3, 1, 1], -5.0, 5.0);
    k.data_mut()[4] = centre;
    k
}

/// The convLSTM at 1×1 resolution with one channel against the scalar
/// peephole LSTM, over five steps; gate ranges checked on every step.
pub fn lstm_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("convlstm-scalar-oracle");
    for k in 0..instances {
        let mut r = rng(seed, k);
        let s = random_scalar_lstm(&mut r);
        let one = |v: f64| Tensor::new(&[1, 1, 1], vec![v]).unwrap();
        let bias = |v: f64| Tensor::new(&[1], vec![v]).unwrap();
        let tensors = ConvLstmParams {
            wx_i: centred_kernel(&mut r, s.wxi),
            wh_i: centred_kernel(&mut r, s.whi),
            wc_i: one(s.wci),
            b_i: bias(s.bi),
            wx_f: centred_kernel(&mut r, s.wxf),
            wh_f: centred_kernel(&mut r, s.whf),
            wc_f: one(s.wcf),
            b_f: bias(s.bf),
            wx_o: centred_kernel(&mut r, s.wxo),
            wh_o: centred_kernel(&mut r, s.who),
            wc_o: one(s.wco),
            b_o: bias(s.bo),
            wx_c: centred_kernel(&mut r, s.wxc),
            wh_c: centred_kernel(&mut r, s.whc),
            b_c: bias(s.bc),
        };
        let mut tape = Tape::new();
        macro_rules! bind {
            ($($f:ident),*) => { ConvLstmParams { $($f: tape.constant(tensors.$f.clone())),* } };
        }
        let p = bind!(wx_i, wh_i, wc_i, b_i, wx_f, wh_f, wc_f, b_f, wx_o, wh_o, wc_o, b_o, wx_c, wh_c, b_c);
        let mut state = LstmState {
            h: tape.constant(one(0.0)),
            c: tape.constant(one(0.0)),
        };
        let (mut h, mut c) = (0.0, 0.0);
        let mut worst: f64 = 0.0;
        let mut gates_ok = true;
        for t in 0..5 {
            let x = r.gen_range(-2.0..2.0);
            let xv = tape.constant(one(x));
            let step = match convlstm_step(&mut tape, xv, state, &p) {
                Ok(s) => s,
                Err(e) => {
                    rep.error(format!("seed={seed} instance={k} step={t}"), e);
                    break;
                }
            };
            let want = s.step(x, h, c);
            let got = |v: Var| tape.value(v).data()[0];
            let (gi, gf, go) = (got(step.input_gate), got(step.forget_gate), got(step.output_gate));
            for (a, b) in [
                (got(step.state.h), want.h),
                (got(step.state.c), want.c),
                (gi, want.i),
                (gf, want.f),
                (go, want.o),
            ] {
                worst = worst.max((a - b).abs());
            }
            let open = |g: f64| g > 0.0 && g < 1.0;
            gates_ok &= open(gi) && open(gf) && open(go) && got(step.state.h).abs() < 1.0;
            (h, c) = (want.h, want.c);
            state = step.state;
        }
        rep.check(|| format!("seed={seed} instance={k}"), worst, 1e-10);
        rep.require(|| format!("gate range seed={seed} instance={k}"), gates_ok);
    }
    rep
}

/// Residual enhancement with a zero map is the identity, maps lie in
/// `[0, 1]`, and a 28×28 feature map gives a 7×7 coarse map.
pub fn attention_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("attention-contracts");
    let config = NetConfig::default();
    let [side, _, _] = config.state_shape();
    let channels = config.encoder.feature_channels();
    for k in 0..instances {
        let mut r = rng(seed, k);
        let mut tape = Tape::new();
        let x = uniform(&mut r, &[side, side, channels], -3.0, 3.0);
        let xv = tape.constant(x.clone());
        let zero = tape.constant(Tensor::zeros(&[side, side, 1]));
        match enhance(&mut tape, xv, zero, true) {
            Ok(out) => {
                let same = tape
                    .value(out)
                    .data()
                    .iter()
                    .zip(x.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                rep.require(|| format!("identity seed={seed} instance={k}"), same);
            }
            Err(e) => rep.error(format!("identity seed={seed} instance={k}"), e),
        }

        let mut params = ModelParams::init(&config, r.gen()).unwrap();
        let spread = r.gen_range(0.1..10.0);
        for t in [
            &mut params.attention.conv1.kernel,
            &mut params.attention.out.kernel,
            &mut params.attention.out.bias,
        ] {
            *t = t.map(|v| v * spread);
        }
        let bound = params.bind(&mut tape, |_| false);
        let xs = tape.constant(uniform(&mut r, &[side, side, channels], 0.0, 5.0));
        match attention_forward(&mut tape, xs, &bound.attention) {
            Ok(a) => {
                let m = tape.value(a.map);
                let inside = m.shape() == [side, side, 1] && m.data().iter().all(|v| (0.0..=1.0).contains(v));
                rep.require(|| format!("range seed={seed} instance={k}"), inside);
            }
            Err(e) => rep.error(format!("range seed={seed} instance={k}"), e),
        }
    }

    let full = NetConfig {
        encoder: crate::net::EncoderConfig::full_scale(),
        attention_mode: AttentionMode::Residual,
        ..NetConfig::default()
    };
    let mut tape = Tape::new();
    let params = ModelParams::init(&full, seed).unwrap();
    let bound = params.bind(&mut tape, |_| false);
    let x = tape.constant(uniform(&mut rng(seed, instances), &[28, 28, 512], 0.0, 1.0));
    match attention_forward(&mut tape, x, &bound.attention) {
        Ok(a) => rep.require(
            || format!("28x28 features gave {:?} coarse", tape.value(a.coarse).shape()),
            tape.value(a.coarse).shape() == [7, 7, 1] && tape.value(a.map).shape() == [28, 28, 1],
        ),
        Err(e) => rep.error("full-scale geometry".into(), e),
    }
    rep
}

/// Closed-form values of the objective and KL against the direct formula
/// on maps with empty cells.
pub fn loss_suite(seed: u64, kl_eps: f64) -> SuiteReport {
    let mut rep = SuiteReport::new("loss-closed-forms");
    let eps = 1e-8;
    let closed = |rep: &mut SuiteReport, what: String, got: Result<f64>, want: f64| match got {
        Ok(v) => rep.check(|| what, (v - want).abs(), 1e-6),
        Err(e) => rep.error(what, e),
    };
    for k in 0..20 {
        let mut r = rng(seed, k);
        let (h, w) = (r.gen_range(2..9), r.gen_range(2..9));
        let q = uniform(&mut r, &[h, w], 0.0, 1.0);
        let q = q.map(|v| v / q.sum());
        closed(
            &mut rep,
            format!("KL(Q,Q) instance={k}"),
            evaluate(&q, |t, y| kl_div(t, y, &q, kl_eps)),
            0.0,
        );
        let lifted = q.map(|v| 2.0 * v + 1.0);
        closed(
            &mut rep,
            format!("CC(2Q+1,Q) instance={k}"),
            evaluate(&lifted, |t, y| cc_loss(t, y, &q, eps)),
            -1.0,
        );

        let y = uniform(&mut r, &[h, w], 0.0, 1.0);
        let p = random_fixations(&mut r, h, w);
        let (a, b) = (r.gen_range(0.1..10.0), r.gen_range(-5.0..5.0));
        let base = evaluate(&y, |t, v| nss_loss(t, v, &p, eps));
        let moved = evaluate(&y.map(|v| a * v + b), |t, v| nss_loss(t, v, &p, eps));
        match (base, moved) {
            (Ok(x), m) => closed(&mut rep, format!("NSS affine instance={k}"), m, x),
            (Err(e), _) => rep.error(format!("NSS affine instance={k}"), e),
        }

        let weights = LossWeights {
            eps: kl_eps,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        let yv = tape.constant(y.clone());
        match combined_loss(&mut tape, yv, &p, &q, &weights) {
            Ok(terms) => {
                let v = |x: Var| tape.value(x).item();
                let want = v(terms.kl) + 0.1 * v(terms.cc) + 0.1 * terms.nss.map_or(0.0, v);
                rep.check(
                    || format!("weighting instance={k}"),
                    (v(terms.total) - want).abs(),
                    1e-6,
                );
            }
            Err(e) => rep.error(format!("weighting instance={k}"), e),
        }

        let mut sparse_q = uniform(&mut r, &[h, w], 0.0, 1.0);
        let mut sparse_y = uniform(&mut r, &[h, w], 0.0, 1.0);
        sparse_q.data_mut()[0] = 0.0;
        sparse_y.data_mut()[h * w - 1] = 0.0;
        let got = evaluate(&sparse_y, |t, v| kl_div(t, v, &sparse_q, kl_eps));
        let want = oracle::kl(sparse_y.data(), sparse_q.data(), eps);
        match got {
            Ok(v) => rep.check(
                || format!("KL oracle (eps {eps:e}) seed={seed} instance={k}"),
                (v - want).abs(),
                1e-9,
            ),
            Err(e) => rep.error(format!("KL oracle instance={k}"), e),
        }
    }
    rep
}

/// Every metric against its direct formula on small random instances,
/// with quantized predictions so that ties occur.
pub fn metric_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("metric-oracles");
    for k in 0..instances {
        let mut r = rng(seed, k);
        let (h, w) = (r.gen_range(2..=16), r.gen_range(2..=16));
        let levels: f64 = if r.gen_bool(0.5) { 4.0 } else { 1e6 };
        let y = Tensor::from_fn(&[h, w], |_| (r.gen_range(0.0..1.0) * levels).floor() / levels + 1e-3);
        let q = uniform(&mut r, &[h, w], 0.0, 1.0);
        let p = random_fixations(&mut r, h, w);
        let pool = random_fixations(&mut r, h, w);
        let fix = p.fixated_indices();
        let (pos, neg): (Vec<f64>, Vec<f64>) = {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (i, &v) in y.data().iter().enumerate() {
                if p.is_fixated(i) {
                    pos.push(v)
                } else {
                    neg.push(v)
                }
            }
            (pos, neg)
        };
        let tag = |m: &str| format!("{m} seed={seed} instance={k}");
        let mut compare = |m: &str, got: Result<f64>, want: f64| match got {
            Ok(v) => rep.check(|| tag(m), (v - want).abs(), 1e-9),
            Err(e) => rep.error(tag(m), e),
        };
        compare("AUC-J", auc_judd(&y, &p), oracle::pair_auc(&pos, &neg));
        compare("NSS", nss_metric(&y, &p), oracle::nss(y.data(), &fix));
        compare("CC", cc_metric(&y, &q), oracle::cc(y.data(), q.data()));
        compare("SIM", sim_metric(&y, &q), oracle::sim(y.data(), q.data()));

        let splits = r.gen_range(1..6);
        let split_seed: u64 = r.gen();
        let want = shuffle_negatives(&pool, fix.len(), splits, split_seed).map(|draws| {
            draws
                .iter()
                .map(|cells| {
                    let neg: Vec<f64> = cells.iter().map(|&i| y.data()[i]).collect();
                    oracle::pair_auc(&pos, &neg)
                })
                .sum::<f64>()
                / splits as f64
        });
        match want {
            Ok(want) => compare("s-AUC", shuffled_auc(&y, &p, &pool, splits, split_seed), want),
            Err(e) => rep.error(tag("s-AUC"), e),
        }
    }
    rep
}

/// Adam against the hand-iterated scalar recursion and the step-decay
/// schedule against its table.
pub fn optimizer_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("optimizer");
    for lr in [0.1, 1e-3] {
        let want = oracle::adam_scalar(1.0, |w| 2.0 * w, 3, lr);
        let mut w = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut st = OptimState::new(&[1]);
        let mut worst: f64 = 0.0;
        for expected in &want {
            let g = [2.0 * w.item()];
            if let Err(e) = adam_step(&mut [("w", &mut w)], &[Some(&g)], &mut st, lr) {
                rep.error(format!("adam lr={lr}"), e);
                break;
            }
            worst = worst.max((w.item() - expected).abs());
        }
        rep.check(|| format!("adam on w^2 lr={lr}"), worst, 1e-10);
    }
    let cfg = TrainConfig::default();
    for epoch in 0..10 {
        let want = 1e-4 / 10f64.powi((epoch / 2) as i32);
        rep.check(
            || format!("lr epoch {epoch}"),
            (cfg.lr(epoch) - want).abs() / want,
            1e-12,
        );
    }
    rep
}

/// Densified maps and the bilinear resize against dense direct versions.
pub fn density_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("density-and-resize");
    for k in 0..instances {
        let mut r = rng(seed, k);
        let (h, w) = (r.gen_range(4..24), r.gen_range(4..24));
        let p = random_fixations(&mut r, h, w);
        let sigma = r.gen_range(0.5..4.0);
        let points: Vec<(usize, usize)> = p.fixated_indices().iter().map(|&i| (i / w, i % w)).collect();
        let want = oracle::density_map(&points, h, w, sigma);
        match densify(&p, sigma) {
            Ok(q) => {
                let dev = q
                    .tensor()
                    .data()
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                rep.check(|| format!("densify seed={seed} instance={k}"), dev, 1e-12);
            }
            Err(e) => rep.error(format!("densify seed={seed} instance={k}"), e),
        }

        let (xh, xw) = (r.gen_range(1..6), r.gen_range(1..6));
        let x = uniform(&mut r, &[xh, xw, 2], -1.0, 1.0);
        let (oh, ow) = (r.gen_range(1..20), r.gen_range(1..20));
        match ops::resize_bilinear(&x, oh, ow) {
            Ok(got) => {
                let want = oracle::resize_bilinear(&x, oh, ow);
                let dev = got
                    .data()
                    .iter()
                    .zip(want.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                rep.check(|| format!("resize seed={seed} instance={k}"), dev, 1e-12);
            }
            Err(e) => rep.error(format!("resize seed={seed} instance={k}"), e),
        }

        let input = uniform(&mut r, &[5, 6, 2], -1.0, 1.0);
        let kernel = uniform(&mut r, &[3, 3, 2, 2], -1.0, 1.0);
        let bias = uniform(&mut r, &[2], -1.0, 1.0);
        let stride = r.gen_range(1..3);
        match ops::conv2d(&input, &kernel, &bias, stride, 1) {
            Ok(got) => {
                let want = oracle::conv2d(&input, &kernel, &bias, stride, 1);
                let dev = got
                    .data()
                    .iter()
                    .zip(want.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                rep.check(|| format!("conv2d seed={seed} instance={k}"), dev, 1e-12);
            }
            Err(e) => rep.error(format!("conv2d seed={seed} instance={k}"), e),
        }
    }
    rep
}
