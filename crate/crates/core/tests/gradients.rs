use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfl_core::layers::{
    AttnDecoder, BiLstm, Builder, Conv2d, Ctx, Linear, Norm, ParallelAttention,
};
use rfl_core::losses::{ace_loss, attn_ce_loss, count_loss, ctc_loss, ClassBalance, CountMode};
use rfl_core::model::{
    AdaptorMode, DecoderKind, FeModule, Fusion, Model, ModelConfig, NormVariant,
};
use rfl_core::Result;
use rfl_tensor::gradcheck::{check_inputs, check_params};
use rfl_tensor::{ConvGeometry, NormMode, ParamId, ParamStore, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
    )
    .unwrap()
}

/// `limit` probe coordinates spread evenly over the trainable tensors.
fn coords(store: &ParamStore, limit: usize) -> Vec<(ParamId, usize)> {
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

fn weighted(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum_all(p)?)
}

fn assert_params(name: &str, store: &mut ParamStore, f: impl Fn(&mut Ctx<'_>) -> Result<Var>) {
    let coords = coords(store, 20);
    let report = check_params(
        |tape, store| {
            let mut ctx = Ctx::new(tape, store, true);
            f(&mut ctx).map_err(|e| rfl_tensor::TensorError::Invalid {
                op: "test",
                msg: e.to_string(),
            })
        },
        store,
        &coords,
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < TOL, "{name}: {report:?}");
    println!(
        "{name}: max rel error {:.2e} over {} coords",
        report.max_rel_error, report.coords
    );
}

#[test]
fn conv_linear_and_norm_layers() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 1);
    let conv = Conv2d::new(
        &mut b.scope("conv"),
        2,
        3,
        (3, 3),
        ConvGeometry::new((1, 1), (1, 1)),
        true,
    )
    .unwrap();
    let norms: Vec<Norm> = [NormMode::Batch, NormMode::Layer, NormMode::Instance]
        .iter()
        .enumerate()
        .map(|(i, &m)| Norm::new(&mut b.scope(&format!("norm{i}")), 3, m).unwrap())
        .collect();
    let linear = Linear::new(&mut b.scope("linear"), 3, 4, true).unwrap();
    let x = random(&[2, 2, 4, 5], 2, 1.0);
    assert_params("conv+norms+linear", &mut store, |ctx| {
        let x = ctx.constant(x.clone());
        let mut y = conv.forward(ctx, x)?;
        for n in &norms {
            y = ctx.tape.tanh(y)?;
            y = n.forward(ctx, y)?;
        }
        let pixels = ctx.tape.permute(y, &[0, 2, 3, 1])?;
        let pixels = ctx.tape.reshape(pixels, &[40, 3])?;
        let out = linear.forward(ctx, pixels)?;
        weighted(ctx.tape, out)
    });
}

#[test]
fn recurrent_layers() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 2);
    let bilstm = BiLstm::new(&mut b.scope("bilstm"), 3, 4).unwrap();
    let decoder = AttnDecoder::new(&mut b.scope("decoder"), 8, 5, 3, 4).unwrap();
    let seq = random(&[2, 4, 3], 3, 1.0);
    let targets = vec![vec![1, 2, 0], vec![3, 0]];
    assert_params("bilstm+attention", &mut store, |ctx| {
        let x = ctx.constant(seq.clone());
        let enc = bilstm.run(ctx, x)?;
        let logits = decoder.teacher_forced(ctx, enc, &targets, 0)?;
        attn_ce_loss(ctx.tape, logits, &targets)
    });
}

#[test]
fn parallel_attention() {
    let mut store = ParamStore::new();
    let p = ParallelAttention::new(&mut Builder::new(&mut store, 3), 4, 6, 3, 5).unwrap();
    let seq = random(&[2, 6, 4], 4, 1.0);
    assert_params("parallel attention", &mut store, |ctx| {
        let x = ctx.constant(seq.clone());
        let (logits, _) = p.forward(ctx, x)?;
        attn_ce_loss(ctx.tape, logits, &[vec![1, 4, 0], vec![2, 0]])
    });
}

#[test]
fn feature_enhancement_and_fusions() {
    for mode in [NormMode::Batch, NormMode::Layer, NormMode::Instance] {
        let mut store = ParamStore::new();
        let fe = FeModule::new(&mut Builder::new(&mut store, 4), 4, mode).unwrap();
        let u = random(&[3, 4, 1, 5], 5, 1.5);
        assert_params("fe gate and reinforce", &mut store, |ctx| {
            let x = ctx.constant(u.clone());
            let g = fe.gate(ctx, x)?;
            let r = fe.reinforce(ctx, x)?;
            let y = ctx.tape.add(g, r)?;
            weighted(ctx.tape, y)
        });
    }
}

#[test]
fn losses_against_inputs() {
    let labels = vec![vec![1, 2], vec![3, 3]];
    let r = check_inputs(
        |t, v| {
            let lp = t.log_softmax(v[0], 2)?;
            ctc_loss(t, lp, &labels, 0).map(|o| o.loss).map_err(|e| {
                rfl_tensor::TensorError::Invalid {
                    op: "ctc",
                    msg: e.to_string(),
                }
            })
        },
        &[random(&[2, 6, 4], 6, 2.0)],
        H,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "ctc: {r:?}");

    let counts = [3usize, 5, 5, 1];
    let balance = ClassBalance::from_lengths(&[3, 5, 5, 1, 2], 6).unwrap();
    for (mode, shape) in [
        (CountMode::Regression, vec![4]),
        (CountMode::Classification, vec![4, 7]),
    ] {
        for bal in [None, Some(&balance)] {
            let r = check_inputs(
                |t, v| {
                    count_loss(t, v[0], &counts, mode, 6, bal).map_err(|e| {
                        rfl_tensor::TensorError::Invalid {
                            op: "count",
                            msg: e.to_string(),
                        }
                    })
                },
                &[random(&shape, 7, 3.0)],
                H,
            )
            .unwrap();
            assert!(r.max_rel_error < TOL, "count {mode:?}: {r:?}");
        }
    }

    let r = check_inputs(
        |t, v| {
            let p = t.softmax(v[0], 2)?;
            ace_loss(t, p, &[vec![3, 1, 1, 0], vec![1, 2, 0, 2]]).map_err(|e| {
                rfl_tensor::TensorError::Invalid {
                    op: "ace",
                    msg: e.to_string(),
                }
            })
        },
        &[random(&[2, 5, 4], 8, 1.0)],
        H,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "ace: {r:?}");
}

fn small_model(decoder: DecoderKind, fusion: Fusion, norm: NormVariant) -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 24,
        channels: 8,
        hidden: 6,
        embed: 3,
        decoder,
        adaptor: AdaptorMode::Bidirectional,
        fusion_c2r: fusion,
        fusion_r2c: fusion,
        norm,
        alphabet: "abc".into(),
        max_len: 3,
        lambda: 0.7,
        ..Default::default()
    }
}

fn assert_joint_loss(cfg: &ModelConfig) {
    let mut model = Model::build(cfg, 9).unwrap();
    let images = random(&[3, 1, cfg.height, cfg.width], 10, 0.5);
    let texts = vec!["ab".to_string(), "c".to_string(), "bca".to_string()];
    let coords = coords(model.store(), 20);
    let m = model.clone();
    let report = check_params(
        |tape, store| {
            let mut ctx = Ctx::new(tape, store, true);
            let x = ctx.constant(images.clone());
            m.loss(&mut ctx, x, &texts, None)
                .map(|t| t.total)
                .map_err(|e| rfl_tensor::TensorError::Invalid {
                    op: "model",
                    msg: e.to_string(),
                })
        },
        model.store_mut(),
        &coords,
        H,
    )
    .unwrap();
    println!(
        "joint loss {} / {}: max rel error {:.2e} over {} coords",
        cfg.decoder, cfg.fusion_c2r, report.max_rel_error, report.coords
    );
    assert!(
        report.max_rel_error < TOL,
        "{} {}: {report:?}",
        cfg.decoder,
        cfg.fusion_c2r
    );
    assert_eq!(report.coords, 20);
}

#[test]
fn full_bidirectional_joint_loss() {
    for decoder in [
        DecoderKind::Ctc,
        DecoderKind::ParalAttn,
        DecoderKind::BilstmAttn,
    ] {
        assert_joint_loss(&small_model(decoder, Fusion::Mul, NormVariant::Batch));
    }
    assert_joint_loss(&small_model(
        DecoderKind::Ctc,
        Fusion::Concat,
        NormVariant::Layer,
    ));
    let mut classify = small_model(DecoderKind::ParalAttn, Fusion::Add, NormVariant::Instance);
    classify.count_mode = CountMode::Classification;
    assert_joint_loss(&classify);
}
