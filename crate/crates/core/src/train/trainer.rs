use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfl_tensor::{Tape, Tensor, TensorError};

use super::optim::AdaDelta;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::layers::{apply_stats, apply_stats_with, Ctx};
use crate::losses::ClassBalance;
use crate::model::Model;
use crate::seed;

pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Batches used to re-estimate batch-norm running statistics after each
    /// epoch; 0 keeps the moving averages from training.
    pub norm_refresh: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            lr: 1.0,
            seed: 0,
            norm_refresh: 20,
        }
    }
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub cnt: Option<f64>,
    pub rcg: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub loss_cnt: Option<f64>,
    pub loss_rcg: Option<f64>,
    pub skipped: usize,
}

pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,steps,loss,loss_cnt,loss_rcg,skipped\n");
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.10}"));
    for e in curve {
        writeln!(
            out,
            "{},{},{:.10},{},{},{}",
            e.epoch,
            e.steps,
            e.loss,
            opt(e.loss_cnt),
            opt(e.loss_rcg),
            e.skipped
        )
        .expect("writing to a String");
    }
    out
}

fn diverged(epoch: usize, step: usize, detail: String) -> Error {
    Error::Divergence {
        epoch,
        step,
        detail,
    }
}

/// Forward, backward and one AdaDelta update on a single batch. Batch
/// normalization running statistics are updated afterwards.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdaDelta,
    images: &Tensor,
    texts: &[String],
    balance: Option<&ClassBalance>,
) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let (loss, terms, stats) = {
        let mut ctx = Ctx::new(&mut tape, model.store(), true);
        let x = ctx.constant(images.clone());
        let terms = model.loss(&mut ctx, x, texts, balance)?;
        let value = |v| -> Result<f64> { Ok(ctx.tape.value(v)?.item().unwrap_or(f64::NAN)) };
        let loss = StepLoss {
            total: value(terms.total)?,
            cnt: terms.cnt.map(value).transpose()?,
            rcg: terms.rcg.map(value).transpose()?,
            skipped: terms.skipped,
        };
        (loss, terms, ctx.take_stats())
    };
    if !loss.total.is_finite() {
        return Err(TensorError::NonFinite { op: "loss" }.into());
    }
    let grads = tape.backward(terms.total)?;
    let store = model.store_mut();
    store.zero_grads();
    store.accumulate(&grads)?;
    opt.step(store)?;
    apply_stats(store, &stats);
    Ok(loss)
}

/// Replaces batch-norm running statistics of trainable layers with the plain
/// average over up to `batches` batches drawn from `order`.
pub fn refresh_norm_stats(
    model: &mut Model,
    corpus: &Corpus,
    order: &[usize],
    batch_size: usize,
    batches: usize,
) -> Result<()> {
    for (k, chunk) in order.chunks(batch_size).take(batches).enumerate() {
        let (images, _) = corpus.batch(chunk)?;
        let mut tape = Tape::new();
        let stats = {
            let mut ctx = Ctx::new(&mut tape, model.store(), true);
            let x = ctx.constant(images);
            model.features(&mut ctx, x)?;
            ctx.take_stats()
        };
        apply_stats_with(model.store_mut(), &stats, 1.0 / (k + 1) as f64);
    }
    Ok(())
}

/// Minibatch training with a per-epoch shuffle. With `out_dir`, the curve and
/// a checkpoint are rewritten after every epoch.
pub fn train(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<EpochStats>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("training corpus is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let balance = ClassBalance::from_lengths(&corpus.lengths(), model.config().max_len)?;
    let balance = model.config().class_balance.then_some(&balance);
    let mut opt = AdaDelta::new(model.store(), cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let (mut sum, mut sum_cnt, mut sum_rcg, mut skipped, mut steps) = (0.0, 0.0, 0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            global_step += 1;
            let (images, texts) = corpus.batch(chunk)?;
            let step =
                train_step(model, &mut opt, &images, &texts, balance).map_err(|e| match e {
                    Error::Tensor(TensorError::NonFinite { op }) => {
                        diverged(epoch, global_step, format!("non-finite value in `{op}`"))
                    }
                    other => other,
                })?;
            sum += step.total;
            sum_cnt += step.cnt.unwrap_or(0.0);
            sum_rcg += step.rcg.unwrap_or(0.0);
            skipped += step.skipped;
            steps += 1;
            log::debug!("epoch {epoch} step {global_step}: loss {:.6}", step.total);
        }
        refresh_norm_stats(model, corpus, &order, cfg.batch_size, cfg.norm_refresh)?;
        let n = steps as f64;
        let stats = EpochStats {
            epoch,
            steps,
            loss: sum / n,
            loss_cnt: model.config().tasks.has_cnt().then_some(sum_cnt / n),
            loss_rcg: model.config().tasks.has_rcg().then_some(sum_rcg / n),
            skipped,
        };
        log::info!("epoch {epoch}/{}: loss {:.6}", cfg.epochs, stats.loss);
        curve.push(stats);
        if let Some(dir) = out_dir {
            let path = dir.join(CURVE_FILE);
            fs::write(&path, curve_csv(&curve)).map_err(|e| Error::io(&path, e))?;
            model.save(&dir.join(CHECKPOINT_FILE))?;
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_samples, CorpusSpec};
    use crate::model::{AdaptorMode, ModelConfig};

    fn tiny_model(adaptor: AdaptorMode, lambda: f64) -> Model {
        Model::build(
            &ModelConfig {
                channels: 8,
                hidden: 8,
                embed: 4,
                adaptor,
                lambda,
                alphabet: "abc".into(),
                max_len: 4,
                ..Default::default()
            },
            1,
        )
        .unwrap()
    }

    fn tiny_corpus(count: usize) -> Corpus {
        generate_samples(&CorpusSpec {
            alphabet: "abc".into(),
            max_len: 4,
            count,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_runs_give_identical_curves_and_weights() {
        let corpus = tiny_corpus(8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let mut a = tiny_model(AdaptorMode::Bidirectional, 1.0);
        let mut b = tiny_model(AdaptorMode::Bidirectional, 1.0);
        assert_eq!(
            train(&mut a, &corpus, &cfg, None).unwrap(),
            train(&mut b, &corpus, &cfg, None).unwrap()
        );
        for ((_, x), (_, y)) in a.store().entries().zip(b.store().entries()) {
            assert_eq!(x.tensor.data(), y.tensor.data());
        }
    }

    #[test]
    fn zero_lambda_still_logs_recognition_loss() {
        let corpus = tiny_corpus(4);
        let mut m = tiny_model(AdaptorMode::Jt, 0.0);
        let mut opt = AdaDelta::new(m.store(), 1.0);
        let (x, t) = corpus.batch(&[0, 1, 2, 3]).unwrap();
        let s = train_step(&mut m, &mut opt, &x, &t, None).unwrap();
        assert!(s.rcg.unwrap() > 0.0);
        assert_eq!(s.total, s.cnt.unwrap());
    }

    #[test]
    fn frozen_branch_stays_bit_identical() {
        let corpus = tiny_corpus(8);
        let mut m = tiny_model(AdaptorMode::Bidirectional, 1.0);
        m.set_branch_frozen(crate::model::Branch::Cnt, true);
        let before: Vec<_> = m
            .store()
            .entries()
            .filter(|(_, e)| e.name.starts_with("cnt."))
            .map(|(_, e)| e.tensor.data().to_vec())
            .collect();
        train(
            &mut m,
            &corpus,
            &TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let after: Vec<_> = m
            .store()
            .entries()
            .filter(|(_, e)| e.name.starts_with("cnt."))
            .map(|(_, e)| e.tensor.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn refresh_sets_running_stats_to_batch_average() {
        let corpus = tiny_corpus(8);
        let mut m = tiny_model(AdaptorMode::None, 1.0);
        let order: Vec<usize> = (0..8).collect();
        refresh_norm_stats(&mut m, &corpus, &order, 4, 2).unwrap();
        let mut expected: Vec<(rfl_tensor::ParamId, Vec<f64>)> = Vec::new();
        for chunk in order.chunks(4) {
            let (images, _) = corpus.batch(chunk).unwrap();
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, m.store(), true);
            let x = ctx.constant(images);
            m.features(&mut ctx, x).unwrap();
            let means: Vec<_> = ctx
                .take_stats()
                .into_iter()
                .map(|u| (u.mean, u.stats.mean))
                .collect();
            if expected.is_empty() {
                expected = means;
            } else {
                for ((_, e), (_, m)) in expected.iter_mut().zip(means) {
                    e.iter_mut().zip(m).for_each(|(a, b)| *a = (*a + b) / 2.0);
                }
            }
        }
        assert!(!expected.is_empty());
        for (id, e) in &expected {
            for (a, b) in m.store().get(*id).data().iter().zip(e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn writes_curve_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_model(AdaptorMode::None, 1.0);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        train(&mut m, &tiny_corpus(8), &cfg, Some(dir.path())).unwrap();
        let curve = fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
        assert_eq!(curve.lines().count(), 3);
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
    }

    #[test]
    fn empty_corpus_is_refused() {
        let mut m = tiny_model(AdaptorMode::None, 1.0);
        let err = train(&mut m, &Corpus::default(), &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }
}
