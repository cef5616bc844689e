//! Built-in release gate: oracle, gradient, adaptor and renderer checks that
//! need nothing but the binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfl_core::data::{encode_pgm, render_sample, CorpusSpec};
use rfl_core::layers::{
    AttnDecoder, BiLstm, Builder, Conv2d, Ctx, Linear, Norm, ParallelAttention,
};
use rfl_core::losses::ctc::min_frames;
use rfl_core::losses::{
    ace_loss, attn_ce_loss, char_counts, count_loss, ctc_bruteforce, ctc_loss, ClassBalance,
    CountMode,
};
use rfl_core::model::{
    AdaptorMode, DecoderKind, FeModule, Fusion, Model, ModelConfig, NormVariant,
};
use rfl_tensor::gradcheck::{check_inputs, check_params, GradReport};
use rfl_tensor::{
    ConvGeometry, Fill, NormMode, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};

/// Negative log-likelihood of `label` under per-frame log-probabilities laid
/// out `[frames, classes]`.
pub type CtcNll =
    fn(log_probs: &[f64], frames: usize, classes: usize, label: &[usize], blank: usize) -> f64;

const GOLDEN_A: &[u8] = include_bytes!("../../core/tests/data/a_clean.pgm");
const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const CTC_TOL: f64 = 1e-9;

/// The training loss evaluated through the tape.
pub fn tape_ctc(
    log_probs: &[f64],
    frames: usize,
    classes: usize,
    label: &[usize],
    blank: usize,
) -> f64 {
    let mut tape = Tape::new();
    let lp = Tensor::new(&[1, frames, classes], log_probs.to_vec())
        .map(|t| tape.constant(t))
        .expect("valid shape");
    ctc_loss(&mut tape, lp, &[label.to_vec()], blank)
        .and_then(|out| Ok(tape.value(out.loss)?.item().unwrap_or(f64::NAN)))
        .unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: &'static str,
    pub checks: Vec<Check>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    fn record(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn ok(&self) -> bool {
        self.passed() == self.checks.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Selftest {
    pub ctc: CtcNll,
}

impl Default for Selftest {
    fn default() -> Self {
        Self { ctc: tape_ctc }
    }
}

impl Selftest {
    pub fn run(&self) -> Vec<Suite> {
        vec![
            self.ctc_suite(),
            gradient_suite(),
            fusion_suite(),
            render_suite(),
        ]
    }

    /// Fifty random instances (up to 5 frames, 4 classes, labels up to 3)
    /// against exhaustive path enumeration.
    pub fn ctc_suite(&self) -> Suite {
        let mut suite = Suite::new("ctc oracle");
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut done = 0;
        while done < 50 {
            let frames = rng.random_range(1..=5);
            let len = rng.random_range(1..=3);
            let label: Vec<usize> = (0..len).map(|_| rng.random_range(1..4)).collect();
            if min_frames(&label) > frames {
                continue;
            }
            let logits: Vec<f64> = (0..frames * 4)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let log_probs: Vec<f64> = logits
                .chunks(4)
                .flat_map(|row| {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                    row.iter().map(move |x| x - lse)
                })
                .collect();
            let probs: Vec<f64> = log_probs.iter().map(|x| x.exp()).collect();
            let got = (self.ctc)(&log_probs, frames, 4, &label, 0);
            let want = ctc_bruteforce(&probs, frames, 4, &label, 0).map(|p| -p.ln());
            let (passed, detail) = match want {
                Ok(want) => (
                    (got - want).abs() < CTC_TOL,
                    format!("{got:.12} vs {want:.12}"),
                ),
                Err(e) => (false, e.to_string()),
            };
            suite.record(
                format!("instance {done} (t={frames}, label {label:?})"),
                passed,
                detail,
            );
            done += 1;
        }
        suite
    }
}

fn as_tensor_error(e: rfl_core::Error) -> TensorError {
    TensorError::Invalid {
        op: "selftest",
        msg: e.to_string(),
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::create(
        shape,
        Fill::Uniform {
            low: -1.0,
            high: 1.0,
            seed,
        },
    )
    .expect("valid shape")
}

fn grad_result(suite: &mut Suite, name: &str, report: rfl_tensor::Result<GradReport>) {
    match report {
        Ok(r) => suite.record(
            name,
            r.max_rel_error < GRAD_TOL,
            format!(
                "max rel error {:.2e} over {} coords",
                r.max_rel_error, r.coords
            ),
        ),
        Err(e) => suite.record(name, false, e.to_string()),
    }
}

/// `limit` coordinates spread evenly over the trainable tensors.
fn probe_coords(store: &ParamStore, limit: usize) -> Vec<(ParamId, usize)> {
    let tensors: Vec<(ParamId, usize)> = store
        .entries()
        .filter(|(_, e)| e.trainable())
        .map(|(id, e)| (id, e.tensor.numel()))
        .collect();
    (0..limit)
        .map(|k| {
            let (id, n) = tensors[k * tensors.len() / limit];
            (id, (k * 7919 + 3) % n)
        })
        .collect()
}

/// Sum with distinct weights so every output coordinate matters.
fn weighted(tape: &mut Tape, y: Var) -> rfl_tensor::Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

fn layer_check(
    store: &mut ParamStore,
    f: impl Fn(&mut Ctx<'_>) -> rfl_core::Result<Var>,
) -> rfl_tensor::Result<GradReport> {
    let coords = probe_coords(store, 20);
    check_params(
        |tape, store| {
            let mut ctx = Ctx::new(tape, store, true);
            f(&mut ctx).map_err(as_tensor_error)
        },
        store,
        &coords,
        STEP,
    )
}

fn layer_checks(suite: &mut Suite) -> rfl_core::Result<()> {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 1);
    let conv = Conv2d::new(
        &mut b.scope("conv"),
        2,
        3,
        (3, 3),
        ConvGeometry::new((1, 1), (1, 1)),
        true,
    )?;
    let norms = [NormMode::Batch, NormMode::Layer, NormMode::Instance]
        .iter()
        .enumerate()
        .map(|(i, &m)| Norm::new(&mut b.scope(&format!("norm{i}")), 3, m))
        .collect::<rfl_core::Result<Vec<_>>>()?;
    let linear = Linear::new(&mut b.scope("linear"), 3, 4, true)?;
    let x = random(&[2, 2, 4, 5], 2);
    let r = layer_check(&mut store, |ctx| {
        let x = ctx.constant(x.clone());
        let mut y = conv.forward(ctx, x)?;
        for n in &norms {
            y = ctx.tape.tanh(y)?;
            y = n.forward(ctx, y)?;
        }
        let pixels = ctx.tape.permute(y, &[0, 2, 3, 1])?;
        let pixels = ctx.tape.reshape(pixels, &[40, 3])?;
        let out = linear.forward(ctx, pixels)?;
        Ok(weighted(ctx.tape, out)?)
    });
    grad_result(suite, "conv, batch/layer/instance norm, linear", r);

    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 2);
    let bilstm = BiLstm::new(&mut b.scope("bilstm"), 3, 4)?;
    let decoder = AttnDecoder::new(&mut b.scope("decoder"), 8, 5, 3, 4)?;
    let seq = random(&[2, 4, 3], 3);
    let targets = vec![vec![1, 2, 0], vec![3, 0]];
    let r = layer_check(&mut store, |ctx| {
        let x = ctx.constant(seq.clone());
        let enc = bilstm.run(ctx, x)?;
        let logits = decoder.teacher_forced(ctx, enc, &targets, 0)?;
        attn_ce_loss(ctx.tape, logits, &targets)
    });
    grad_result(suite, "bilstm and recurrent attention", r);

    let mut store = ParamStore::new();
    let parallel = ParallelAttention::new(&mut Builder::new(&mut store, 3), 4, 6, 3, 5)?;
    let seq = random(&[2, 6, 4], 4);
    let r = layer_check(&mut store, |ctx| {
        let x = ctx.constant(seq.clone());
        let (logits, _) = parallel.forward(ctx, x)?;
        attn_ce_loss(ctx.tape, logits, &[vec![1, 4, 0], vec![2, 0]])
    });
    grad_result(suite, "parallel attention", r);

    for mode in [NormMode::Batch, NormMode::Layer, NormMode::Instance] {
        let mut store = ParamStore::new();
        let fe = FeModule::new(&mut Builder::new(&mut store, 4), 4, mode)?;
        let u = random(&[3, 4, 1, 5], 5);
        let r = layer_check(&mut store, |ctx| {
            let x = ctx.constant(u.clone());
            let g = fe.gate(ctx, x)?;
            let r = fe.reinforce(ctx, x)?;
            let y = ctx.tape.add(g, r)?;
            Ok(weighted(ctx.tape, y)?)
        });
        grad_result(suite, &format!("feature enhancement, {mode:?} norm"), r);
    }
    Ok(())
}

fn joint_check(cfg: &ModelConfig) -> rfl_tensor::Result<GradReport> {
    let mut model = Model::build(cfg, 9).map_err(as_tensor_error)?;
    let images = random(&[3, 1, cfg.height, cfg.width], 10);
    let texts = ["ab", "c", "bca"].map(String::from);
    let coords = probe_coords(model.store(), 20);
    let frozen = model.clone();
    check_params(
        |tape, store| {
            let mut ctx = Ctx::new(tape, store, true);
            let x = ctx.constant(images.clone());
            frozen
                .loss(&mut ctx, x, &texts, None)
                .map(|t| t.total)
                .map_err(as_tensor_error)
        },
        model.store_mut(),
        &coords,
        STEP,
    )
}

/// Central differences through every loss and the full two-branch model.
pub fn gradient_suite() -> Suite {
    let mut suite = Suite::new("gradients");
    if let Err(e) = layer_checks(&mut suite) {
        suite.record("layer setup", false, e.to_string());
    }
    let base = ModelConfig {
        height: 16,
        width: 24,
        channels: 8,
        hidden: 6,
        embed: 3,
        adaptor: AdaptorMode::Bidirectional,
        alphabet: "abc".into(),
        max_len: 3,
        lambda: 0.7,
        ..Default::default()
    };
    let variants = [
        (
            DecoderKind::Ctc,
            Fusion::Mul,
            NormVariant::Batch,
            CountMode::Regression,
        ),
        (
            DecoderKind::ParalAttn,
            Fusion::Mul,
            NormVariant::Batch,
            CountMode::Regression,
        ),
        (
            DecoderKind::BilstmAttn,
            Fusion::Mul,
            NormVariant::Batch,
            CountMode::Regression,
        ),
        (
            DecoderKind::Ctc,
            Fusion::Concat,
            NormVariant::Layer,
            CountMode::Regression,
        ),
        (
            DecoderKind::ParalAttn,
            Fusion::Add,
            NormVariant::Instance,
            CountMode::Classification,
        ),
    ];
    for (decoder, fusion, norm, count_mode) in variants {
        let cfg = ModelConfig {
            decoder,
            fusion_c2r: fusion,
            fusion_r2c: fusion,
            norm,
            count_mode,
            ..base.clone()
        };
        grad_result(
            &mut suite,
            &format!("joint loss {decoder}, {fusion} fusion, {norm} norm"),
            joint_check(&cfg),
        );
    }

    let logits = random(&[2, 5, 4], 21);
    grad_result(
        &mut suite,
        "ctc loss",
        check_inputs(
            |t, v| {
                let lp = t.log_softmax(v[0], 2)?;
                let out = ctc_loss(t, lp, &[vec![1, 2], vec![3, 3]], 0).map_err(as_tensor_error)?;
                Ok(out.loss)
            },
            std::slice::from_ref(&logits),
            STEP,
        ),
    );
    grad_result(
        &mut suite,
        "aggregation cross-entropy",
        check_inputs(
            |t, v| {
                let p = t.softmax(v[0], 2)?;
                let counts = [char_counts(&[1, 2], 4, 0, 5), char_counts(&[3], 4, 0, 5)];
                ace_loss(t, p, &counts).map_err(as_tensor_error)
            },
            std::slice::from_ref(&logits),
            STEP,
        ),
    );
    let balance = ClassBalance::from_lengths(&[1, 2, 2, 3, 3, 3], 4).expect("valid lengths");
    let regression = Tensor::from_f64(&[3], &[0.7, 2.4, 3.1]).expect("valid shape");
    let classes = random(&[3, 5], 22);
    for (name, input, mode) in [
        ("count regression", regression, CountMode::Regression),
        ("count classification", classes, CountMode::Classification),
    ] {
        for bal in [None, Some(&balance)] {
            grad_result(
                &mut suite,
                &format!("{name}{}", if bal.is_some() { " balanced" } else { "" }),
                check_inputs(
                    |t, v| count_loss(t, v[0], &[1, 2, 3], mode, 4, bal).map_err(as_tensor_error),
                    std::slice::from_ref(&input),
                    STEP,
                ),
            );
        }
    }
    suite
}

fn values(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).map(|t| t.to_f64_vec()).unwrap_or_default()
}

/// Exchange with default weights on constant inputs; returns `(v_cnt, v_rcg)`.
fn exchange(
    cfg: &ModelConfig,
    u_cnt: &Tensor,
    u_rcg: &Tensor,
) -> rfl_core::Result<(Vec<f64>, Vec<f64>)> {
    let mut store = ParamStore::new();
    let adaptor =
        rfl_core::model::Adaptor::new(&mut Builder::new(&mut store, 4).scope("adaptor"), cfg)?;
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store, true);
    let c = ctx.constant(u_cnt.clone());
    let r = ctx.constant(u_rcg.clone());
    let (vc, vr) = adaptor.exchange(&mut ctx, c, r)?;
    Ok((values(ctx.tape, vc), values(ctx.tape, vr)))
}

fn fusion_checks(suite: &mut Suite) -> rfl_core::Result<()> {
    let shape = [2, 8, 1, 5];
    let u = Tensor::create(
        &shape,
        Fill::Uniform {
            low: -3.0,
            high: 3.0,
            seed: 31,
        },
    )?;
    let cfg = |adaptor, fe, c2r, r2c| ModelConfig {
        channels: 8,
        adaptor,
        fe,
        fusion_c2r: c2r,
        fusion_r2c: r2c,
        norm: NormVariant::Instance,
        ..Default::default()
    };

    for mode in [NormMode::Batch, NormMode::Layer, NormMode::Instance] {
        let mut store = ParamStore::new();
        let fe = FeModule::new(&mut Builder::new(&mut store, 5).scope("fe"), 8, mode)?;
        let gate_of = |store: &ParamStore| -> rfl_core::Result<Vec<f64>> {
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, store, true);
            let x = ctx.constant(u.clone());
            let g = fe.gate(&mut ctx, x)?;
            Ok(values(ctx.tape, g))
        };
        let g = gate_of(&store)?;
        suite.record(
            format!("gate in (0, 1), {mode:?} norm"),
            g.iter().all(|&v| v > 0.0 && v < 1.0),
            format!(
                "range [{:.4}, {:.4}]",
                g.iter().cloned().fold(1.0, f64::min),
                g.iter().cloned().fold(0.0, f64::max)
            ),
        );
        let w = store.find("fe.conv.weight").expect("fe conv weight");
        store
            .get_mut(w)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        let g = gate_of(&store)?;
        suite.record(
            format!("zero-weight gate is 0.5, {mode:?} norm"),
            g.iter().all(|&v| v == 0.5),
            String::new(),
        );
    }

    let zero = Tensor::zeros(&shape)?;
    let (vc, _) = exchange(
        &cfg(AdaptorMode::Bidirectional, true, Fusion::Mul, Fusion::Add),
        &u,
        &zero,
    )?;
    suite.record(
        "add with zero partner is identity",
        vc == u.to_f64_vec(),
        String::new(),
    );

    let ones = Tensor::ones(&shape)?;
    let (_, vr) = exchange(
        &cfg(AdaptorMode::UniC2r, false, Fusion::Mul, Fusion::Add),
        &ones,
        &u,
    )?;
    suite.record(
        "mul with unit gate is identity",
        vr == u.to_f64_vec(),
        String::new(),
    );

    let none = ModelConfig {
        height: 16,
        width: 24,
        channels: 8,
        hidden: 6,
        alphabet: "abc".into(),
        max_len: 3,
        adaptor: AdaptorMode::None,
        ..Default::default()
    };
    let joint = ModelConfig {
        adaptor: AdaptorMode::Jt,
        ..none.clone()
    };
    let (a, b) = (Model::build(&none, 3)?, Model::build(&joint, 3)?);
    let same_params = a.store().len() == b.store().len()
        && a.store()
            .entries()
            .zip(b.store().entries())
            .all(|((_, x), (_, y))| x.tensor == y.tensor);
    let forward = |m: &Model| -> rfl_core::Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, m.store(), false);
        let x = ctx.constant(random(&[2, 1, 16, 24], 41));
        let out = m.forward(&mut ctx, x, None)?;
        let f = &out.features;
        let same = |a: Option<Var>, b: Option<Var>, tape: &Tape| {
            a.map(|v| values(tape, v)) == b.map(|v| values(tape, v))
        };
        let bitwise_pass = same(f.v_cnt, f.u_cnt, ctx.tape) && same(f.v_rcg, f.u_rcg, ctx.tape);
        let count = out.count.map(|v| values(ctx.tape, v)).unwrap_or_default();
        let rcg = out.rcg.map(|v| values(ctx.tape, v)).unwrap_or_default();
        Ok((if bitwise_pass { vec![1.0] } else { vec![0.0] }, count, rcg))
    };
    let (fa, fb) = (forward(&a)?, forward(&b)?);
    suite.record(
        "adaptor none equals the adaptor-free build",
        same_params && fa == fb && fa.0 == [1.0],
        format!("same parameters: {same_params}"),
    );
    Ok(())
}

/// Gate range, the neutral gate and the exact fusion identities.
pub fn fusion_suite() -> Suite {
    let mut suite = Suite::new("adaptor identities");
    if let Err(e) = fusion_checks(&mut suite) {
        suite.record("build", false, e.to_string());
    }
    suite
}

/// A clean one-glyph render against the stored golden image, and repeat
/// renders from the same stream.
pub fn render_suite() -> Suite {
    let mut suite = Suite::new("renderer");
    let clean = CorpusSpec {
        noise: 0.0,
        gap_jitter: 0,
        shift_jitter: 0,
        vertical_jitter: 0,
        invert_prob: 0.0,
        ..Default::default()
    };
    match render_sample(&clean, "a", &mut ChaCha8Rng::seed_from_u64(0)) {
        Ok(s) => suite.record(
            "clean `a` matches golden",
            encode_pgm(s.width, s.height, &s.pixels) == GOLDEN_A,
            String::new(),
        ),
        Err(e) => suite.record("clean `a` matches golden", false, e.to_string()),
    }
    let noisy = CorpusSpec::default();
    let draw = || render_sample(&noisy, "jihgfed", &mut ChaCha8Rng::seed_from_u64(77)).ok();
    let (first, second) = (draw(), draw());
    suite.record(
        "render is repeatable",
        first.is_some() && first == second,
        String::new(),
    );
    suite
}
