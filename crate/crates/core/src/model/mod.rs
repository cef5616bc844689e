//! The two-branch counting/recognition network.

mod adaptor;
mod backbone;
mod config;
mod heads;

use std::path::Path;

use rfl_tensor::{Tensor, TensorError, Var};

use crate::error::{Error, Result};
use crate::layers::{checkpoint, Builder, Ctx};
use crate::losses::{
    attn_ce_loss, count_loss, ctc_loss, joint_loss, ClassBalance, CountMode, LabelCoding,
};

pub use adaptor::{Adaptor, Exchange, FeModule};
pub use backbone::{build_stages, run_stages, stage_widths, Stage};
pub use config::{
    count_mode_str, AdaptorMode, BackboneKind, DecoderKind, Fusion, ModelConfig, NormVariant,
    Tasks, BACKBONE_STAGES, MAX_CHANNELS,
};
pub use heads::{ctc_greedy, round_count, to_sequence, CountHead, RcgHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Cnt,
    Rcg,
}

impl Branch {
    fn prefix(self) -> &'static str {
        match self {
            Branch::Cnt => "cnt.",
            Branch::Rcg => "rcg.",
        }
    }
}

#[derive(Debug, Clone)]
struct CntBranch {
    stages: Vec<Stage>,
    head: CountHead,
}

#[derive(Debug, Clone)]
struct RcgBranch {
    stages: Vec<Stage>,
    head: RcgHead,
}

/// Branch features before (`u`) and after (`v`) the exchange.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub u_cnt: Option<Var>,
    pub u_rcg: Option<Var>,
    pub v_cnt: Option<Var>,
    pub v_rcg: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: Features,
    /// Regression outputs `[b]` or count logits `[b, max_len + 1]`.
    pub count: Option<Var>,
    /// Recognition logits; see [`RcgHead::logits`].
    pub rcg: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub cnt: Option<Var>,
    pub rcg: Option<Var>,
    /// Samples left out of the CTC mean as infeasible.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub text: Option<String>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    coding: LabelCoding,
    store: rfl_tensor::ParamStore,
    stem: Vec<Stage>,
    /// Private stem of a branch loaded from a single-task checkpoint.
    fixed_stem: Option<(Branch, Vec<Stage>)>,
    cnt: Option<CntBranch>,
    rcg: Option<RcgBranch>,
    adaptor: Adaptor,
    frozen: [bool; 2],
}

fn slot(b: Branch) -> usize {
    match b {
        Branch::Cnt => 0,
        Branch::Rcg => 1,
    }
}

impl Model {
    /// Builds the network with every initial value derived from `seed` and the
    /// parameter name. Fixed modes also load and freeze their pretrained
    /// branch.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut model = Self::structure(cfg, seed)?;
        if let (Some(br), Some(path)) = (model.fixed_branch(), cfg.pretrained.as_deref()) {
            model.load_pretrained_branch(br, path)?;
            model.set_branch_frozen(br, true);
        }
        Ok(model)
    }

    /// Rebuilds a trained model from its configuration and checkpoint. The
    /// pretrained branch file of a fixed mode is not needed; the branch is
    /// frozen as it was during training.
    pub fn restore(cfg: &ModelConfig, checkpoint: &Path) -> Result<Self> {
        cfg.validate_structure()?;
        let mut model = Self::structure(cfg, 0)?;
        model.load_weights(checkpoint)?;
        if let Some(br) = model.fixed_branch() {
            model.set_branch_frozen(br, true);
        }
        Ok(model)
    }

    fn fixed_branch(&self) -> Option<Branch> {
        match self.cfg.adaptor {
            AdaptorMode::FixedCnt => Some(Branch::Cnt),
            AdaptorMode::FixedRcg => Some(Branch::Rcg),
            _ => None,
        }
    }

    fn structure(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let coding = LabelCoding::new(&cfg.alphabet, cfg.max_len)?;
        let mut store = rfl_tensor::ParamStore::new();
        let mut b = Builder::new(&mut store, seed);
        let split = cfg.shared_depth;
        let stem = build_stages(&mut b.scope("stem"), cfg, 0..split)?;
        let fixed_branch = match cfg.adaptor {
            AdaptorMode::FixedCnt => Some(Branch::Cnt),
            AdaptorMode::FixedRcg => Some(Branch::Rcg),
            _ => None,
        };
        let fixed_stem = match fixed_branch {
            Some(br) => Some((br, build_stages(&mut b.scope("fixed_stem"), cfg, 0..split)?)),
            None => None,
        };
        let cnt = if cfg.tasks.has_cnt() {
            let mut s = b.scope("cnt");
            Some(CntBranch {
                stages: build_stages(&mut s, cfg, split..BACKBONE_STAGES)?,
                head: CountHead::new(&mut s.scope("head"), cfg)?,
            })
        } else {
            None
        };
        let rcg = if cfg.tasks.has_rcg() {
            let mut s = b.scope("rcg");
            Some(RcgBranch {
                stages: build_stages(&mut s, cfg, split..BACKBONE_STAGES)?,
                head: RcgHead::new(&mut s.scope("head"), cfg, coding.classes())?,
            })
        } else {
            None
        };
        let adaptor = Adaptor::new(&mut b.scope("adaptor"), cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            coding,
            store,
            stem,
            fixed_stem,
            cnt,
            rcg,
            adaptor,
            frozen: [false; 2],
        })
    }

    fn load_pretrained_branch(&mut self, br: Branch, path: &Path) -> Result<()> {
        let tensors = checkpoint::load(path)?;
        let prefix = br.prefix();
        let copied = checkpoint::restore(&mut self.store, &tensors, |name| {
            if let Some(rest) = name.strip_prefix("stem.") {
                Some(format!("fixed_stem.{rest}"))
            } else if name.starts_with(prefix) {
                Some(name.to_string())
            } else {
                None
            }
        })?;
        let expected = self
            .store
            .entries()
            .filter(|(_, e)| e.name.starts_with("fixed_stem.") || e.name.starts_with(prefix))
            .count();
        if copied != expected {
            return Err(Error::Checkpoint(format!(
                "{}: restored {copied} of {expected} tensors for the `{}` branch",
                path.display(),
                prefix.trim_end_matches('.')
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn coding(&self) -> &LabelCoding {
        &self.coding
    }

    pub fn store(&self) -> &rfl_tensor::ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut rfl_tensor::ParamStore {
        &mut self.store
    }

    /// Number of scalar trainable values, frozen ones included.
    pub fn census(&self) -> usize {
        self.store.census()
    }

    pub fn is_frozen(&self, br: Branch) -> bool {
        self.frozen[slot(br)]
    }

    /// Freezes or thaws one branch: its stages, its head and a private stem.
    /// The shared stem is frozen exactly when every branch reading it is.
    pub fn set_branch_frozen(&mut self, br: Branch, frozen: bool) {
        self.frozen[slot(br)] = frozen;
        let private = matches!(self.fixed_stem, Some((b, _)) if b == br);
        let mut readers = Vec::new();
        if self.cnt.is_some() && !matches!(self.fixed_stem, Some((Branch::Cnt, _))) {
            readers.push(Branch::Cnt);
        }
        if self.rcg.is_some() && !matches!(self.fixed_stem, Some((Branch::Rcg, _))) {
            readers.push(Branch::Rcg);
        }
        let stem_frozen = !readers.is_empty() && readers.iter().all(|&b| self.frozen[slot(b)]);
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let name = &self.store.entry(id).name;
            if name.starts_with(br.prefix()) || (private && name.starts_with("fixed_stem.")) {
                self.store.set_frozen(id, frozen);
            } else if name.starts_with("stem.") {
                self.store.set_frozen(id, stem_frozen);
            }
        }
    }

    fn check_images(&self, ctx: &Ctx<'_>, images: Var) -> Result<usize> {
        let s = ctx.tape.shape(images)?;
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.height || s[3] != self.cfg.width {
            return Err(TensorError::Invalid {
                op: "model",
                msg: format!(
                    "images {s:?}, expected [b, 1, {}, {}]",
                    self.cfg.height, self.cfg.width
                ),
            }
            .into());
        }
        Ok(s[0])
    }

    pub fn features(&self, ctx: &mut Ctx<'_>, images: Var) -> Result<Features> {
        self.check_images(ctx, images)?;
        let shared = run_stages(ctx, &self.stem, images)?;
        let private = match &self.fixed_stem {
            Some((br, stages)) => Some((*br, run_stages(ctx, stages, images)?)),
            None => None,
        };
        let input_for = |br: Branch| match private {
            Some((b, x)) if b == br => x,
            _ => shared,
        };
        let u_cnt = match &self.cnt {
            Some(c) => Some(run_stages(ctx, &c.stages, input_for(Branch::Cnt))?),
            None => None,
        };
        let u_rcg = match &self.rcg {
            Some(r) => Some(run_stages(ctx, &r.stages, input_for(Branch::Rcg))?),
            None => None,
        };
        let (v_cnt, v_rcg) = match (u_cnt, u_rcg) {
            (Some(c), Some(r)) => {
                let (vc, vr) = self.adaptor.exchange(ctx, c, r)?;
                (Some(vc), Some(vr))
            }
            other => other,
        };
        Ok(Features {
            u_cnt,
            u_rcg,
            v_cnt,
            v_rcg,
        })
    }

    /// Full forward pass. `targets` are EOS-terminated label indices, needed
    /// only by the recurrent attention decoder.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        images: Var,
        targets: Option<&[Vec<usize>]>,
    ) -> Result<Forward> {
        let features = self.features(ctx, images)?;
        let count = match (&self.cnt, features.v_cnt) {
            (Some(c), Some(v)) => Some(c.head.forward(ctx, v)?),
            _ => None,
        };
        let rcg = match (&self.rcg, features.v_rcg) {
            (Some(r), Some(v)) => Some(r.head.logits(ctx, v, targets)?),
            _ => None,
        };
        Ok(Forward {
            features,
            count,
            rcg,
        })
    }

    /// Supervised objective `L_cnt + λ·L_rcg` for a batch of transcriptions.
    pub fn loss(
        &self,
        ctx: &mut Ctx<'_>,
        images: Var,
        texts: &[String],
        balance: Option<&ClassBalance>,
    ) -> Result<LossTerms> {
        let b = self.check_images(ctx, images)?;
        if texts.len() != b {
            return Err(Error::Config(format!(
                "{} transcriptions for {b} images",
                texts.len()
            )));
        }
        let labels: Vec<Vec<usize>> = texts
            .iter()
            .map(|t| self.coding.encode(t))
            .collect::<Result<_>>()?;
        let with_eos: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| l.iter().copied().chain([LabelCoding::EOS]).collect())
            .collect();
        let out = self.forward(ctx, images, Some(&with_eos))?;
        let mut skipped = 0;
        let cnt = match out.count {
            Some(pred) => {
                let counts: Vec<usize> = labels.iter().map(Vec::len).collect();
                let balance = if self.cfg.class_balance {
                    balance
                } else {
                    None
                };
                Some(count_loss(
                    ctx.tape,
                    pred,
                    &counts,
                    self.cfg.count_mode,
                    self.cfg.max_len,
                    balance,
                )?)
            }
            None => None,
        };
        let rcg = match out.rcg {
            Some(logits) => Some(match self.cfg.decoder {
                DecoderKind::Ctc => {
                    let lp = ctx.tape.log_softmax(logits, 2)?;
                    let o = ctc_loss(ctx.tape, lp, &labels, LabelCoding::BLANK)?;
                    skipped = o.skipped.len();
                    o.loss
                }
                DecoderKind::BilstmAttn | DecoderKind::ParalAttn => {
                    attn_ce_loss(ctx.tape, logits, &with_eos)?
                }
            }),
            None => None,
        };
        let total = match (cnt, rcg) {
            (Some(c), Some(r)) => joint_loss(ctx.tape, c, r, self.cfg.lambda)?,
            (Some(c), None) => c,
            (None, Some(r)) => r,
            (None, None) => unreachable!("a model has at least one branch"),
        };
        Ok(LossTerms {
            total,
            cnt,
            rcg,
            skipped,
        })
    }

    /// Inference on `[b, 1, h, w]` images with running normalization
    /// statistics and no gradient bookkeeping.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<Prediction>> {
        let mut tape = rfl_tensor::Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, false);
        let x = ctx.constant(images.clone());
        let b = self.check_images(&ctx, x)?;
        let features = self.features(&mut ctx, x)?;
        let mut out = vec![
            Prediction {
                text: None,
                count: None
            };
            b
        ];
        if let (Some(c), Some(v)) = (&self.cnt, features.v_cnt) {
            let y = c.head.forward(&mut ctx, v)?;
            let y = ctx.tape.value(y)?.data();
            let classes = self.cfg.count_classes();
            for (i, p) in out.iter_mut().enumerate() {
                p.count = Some(match self.cfg.count_mode {
                    CountMode::Regression => round_count(y[i], self.cfg.max_len),
                    CountMode::Classification => {
                        crate::layers::argmax(&y[i * classes..(i + 1) * classes])
                    }
                });
            }
        }
        if let (Some(r), Some(v)) = (&self.rcg, features.v_rcg) {
            for (p, seq) in out
                .iter_mut()
                .zip(r.head.decode(&mut ctx, v, self.cfg.max_len)?)
            {
                p.text = Some(self.coding.decode(&seq));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Loads every tensor of a checkpoint written by a model with the same
    /// configuration.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let tensors = checkpoint::load(path)?;
        let copied = checkpoint::restore(&mut self.store, &tensors, |n| Some(n.to_string()))?;
        if copied != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {copied} tensors for a model with {}",
                path.display(),
                self.store.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rfl_tensor::{Fill, Tape};

    use super::*;

    fn small(decoder: DecoderKind, adaptor: AdaptorMode) -> ModelConfig {
        ModelConfig {
            channels: 16,
            hidden: 16,
            embed: 8,
            decoder,
            adaptor,
            alphabet: "abc".into(),
            max_len: 6,
            ..Default::default()
        }
    }

    fn images(b: usize, seed: u64) -> Tensor {
        Tensor::create(
            &[b, 1, 32, 100],
            Fill::Uniform {
                low: 0.0,
                high: 1.0,
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn forward_shapes_per_decoder() {
        for (decoder, steps) in [
            (DecoderKind::Ctc, 26),
            (DecoderKind::ParalAttn, 7),
            (DecoderKind::BilstmAttn, 3),
        ] {
            let model = Model::build(&small(decoder, AdaptorMode::Bidirectional), 1).unwrap();
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, model.store(), true);
            let x = ctx.constant(images(2, 2));
            let targets = vec![vec![1, 2, 0], vec![3, 0]];
            let out = model.forward(&mut ctx, x, Some(&targets)).unwrap();
            assert_eq!(ctx.tape.shape(out.count.unwrap()).unwrap(), &[2]);
            assert_eq!(ctx.tape.shape(out.rcg.unwrap()).unwrap(), &[2, steps, 4]);
            let v = out.features.v_rcg.unwrap();
            assert_eq!(ctx.tape.shape(v).unwrap(), &[2, 16, 1, 26]);
        }
    }

    #[test]
    fn single_task_models_have_one_branch() {
        let mut cfg = small(DecoderKind::Ctc, AdaptorMode::None);
        cfg.tasks = Tasks::CntOnly;
        let model = Model::build(&cfg, 1).unwrap();
        assert_eq!(model.store().census_prefix("rcg."), 0);
        assert!(model.store().census_prefix("cnt.") > 0);
        let p = model.predict(&images(3, 1)).unwrap();
        assert!(p.iter().all(|p| p.text.is_none() && p.count.unwrap() <= 6));
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = Model::build(&small(DecoderKind::Ctc, AdaptorMode::None), 5).unwrap();
        let b = Model::build(&small(DecoderKind::Ctc, AdaptorMode::Bidirectional), 5).unwrap();
        for (_, e) in a.store().entries() {
            let other = b.store().get(b.store().find(&e.name).unwrap());
            assert_eq!(&e.tensor.data(), &other.data(), "{}", e.name);
        }
        let c = Model::build(&small(DecoderKind::Ctc, AdaptorMode::None), 6).unwrap();
        let w = a.store().find("stem.s1.conv1.conv.weight").unwrap();
        assert_ne!(a.store().get(w).data(), c.store().get(w).data());
    }

    #[test]
    fn freezing_rules_for_the_shared_stem() {
        let mut model =
            Model::build(&small(DecoderKind::Ctc, AdaptorMode::Bidirectional), 1).unwrap();
        let frozen = |m: &Model, prefix: &str| {
            m.store()
                .entries()
                .filter(|(_, e)| e.name.starts_with(prefix))
                .all(|(_, e)| e.frozen())
        };
        model.set_branch_frozen(Branch::Cnt, true);
        assert!(frozen(&model, "cnt."));
        assert!(!frozen(&model, "stem."));
        model.set_branch_frozen(Branch::Rcg, true);
        assert!(frozen(&model, "stem."));
        assert!(!frozen(&model, "adaptor."));
        model.set_branch_frozen(Branch::Cnt, false);
        assert!(!frozen(&model, "stem.") && !frozen(&model, "cnt."));
    }

    #[test]
    fn fixed_mode_loads_and_freezes_a_single_task_branch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnt.bin");
        let mut single = small(DecoderKind::Ctc, AdaptorMode::None);
        single.tasks = Tasks::CntOnly;
        let donor = Model::build(&single, 11).unwrap();
        donor.save(&path).unwrap();

        let mut cfg = small(DecoderKind::Ctc, AdaptorMode::FixedCnt);
        cfg.pretrained = Some(path.clone());
        let model = Model::build(&cfg, 3).unwrap();
        let name = "stem.s1.conv1.conv.weight";
        let donor_w = donor.store().get(donor.store().find(name).unwrap());
        let fixed_w = model
            .store()
            .get(model.store().find(&format!("fixed_{name}")).unwrap());
        assert_eq!(donor_w, &{
            let mut t = fixed_w.clone();
            t.set_requires_grad(donor_w.requires_grad());
            t
        });
        for (_, e) in model.store().entries() {
            let expect = e.name.starts_with("cnt.") || e.name.starts_with("fixed_stem.");
            assert_eq!(e.frozen(), expect, "{}", e.name);
        }
        assert!(model.adaptor.c2r.is_some() && model.adaptor.r2c.is_none());

        let trained = dir.path().join("fixed.bin");
        model.save(&trained).unwrap();
        std::fs::remove_file(&path).unwrap();
        let back = Model::restore(&cfg, &trained).unwrap();
        for ((_, x), (_, y)) in model.store().entries().zip(back.store().entries()) {
            assert_eq!(
                (x.tensor.data(), x.frozen()),
                (y.tensor.data(), y.frozen()),
                "{}",
                x.name
            );
        }

        let mut missing = cfg.clone();
        missing.pretrained = Some(dir.path().join("absent.bin"));
        assert!(Model::build(&missing, 3).is_err());
        let mut wrong = small(DecoderKind::Ctc, AdaptorMode::FixedCnt);
        wrong.pretrained = Some(trained);
        wrong.channels = 24;
        assert!(Model::build(&wrong, 3).is_err());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let a = Model::build(
            &small(DecoderKind::ParalAttn, AdaptorMode::Bidirectional),
            1,
        )
        .unwrap();
        a.save(&path).unwrap();
        let mut b = Model::build(
            &small(DecoderKind::ParalAttn, AdaptorMode::Bidirectional),
            2,
        )
        .unwrap();
        b.load_weights(&path).unwrap();
        let x = images(2, 9);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn loss_is_finite_for_every_decoder() {
        for decoder in [
            DecoderKind::Ctc,
            DecoderKind::ParalAttn,
            DecoderKind::BilstmAttn,
        ] {
            let model = Model::build(&small(decoder, AdaptorMode::Bidirectional), 1).unwrap();
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, model.store(), true);
            let x = ctx.constant(images(2, 2));
            let texts = vec!["abc".to_string(), "b".to_string()];
            let terms = model.loss(&mut ctx, x, &texts, None).unwrap();
            let total = ctx.tape.value(terms.total).unwrap().item().unwrap();
            let c = ctx.tape.value(terms.cnt.unwrap()).unwrap().item().unwrap();
            let r = ctx.tape.value(terms.rcg.unwrap()).unwrap().item().unwrap();
            assert!((total - (c + r)).abs() < 1e-12);
            assert!(ctx.tape.backward(terms.total).is_ok());
        }
    }
}
