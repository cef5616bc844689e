use rfl_tensor::{ConvGeometry, NormMode, Var};

use super::config::{Fusion, ModelConfig};
use crate::error::Result;
use crate::layers::{Builder, Conv2d, Ctx, Norm};

/// Feature-enhancement gate: `sigmoid(relu(norm(conv1x1(u))))`, values in
/// `[0.5, 1)`.
#[derive(Debug, Clone)]
pub struct FeModule {
    conv: Conv2d,
    norm: Norm,
}

impl FeModule {
    pub fn new(b: &mut Builder<'_>, channels: usize, mode: NormMode) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                &mut b.scope("conv"),
                channels,
                channels,
                (1, 1),
                ConvGeometry::default(),
                false,
            )?,
            norm: Norm::new(&mut b.scope("norm"), channels, mode)?,
        })
    }

    pub fn gate(&self, ctx: &mut Ctx<'_>, u: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, u)?;
        let y = self.norm.forward(ctx, y)?;
        let y = ctx.tape.relu(y)?;
        Ok(ctx.tape.sigmoid(y)?)
    }

    /// `u ⊙ gate(u)`.
    pub fn reinforce(&self, ctx: &mut Ctx<'_>, u: Var) -> Result<Var> {
        let g = self.gate(ctx, u)?;
        Ok(ctx.tape.mul(u, g)?)
    }
}

/// One direction of feature exchange: the source feature, optionally passed
/// through an FE module, is fused into the target feature.
#[derive(Debug, Clone)]
pub struct Exchange {
    fe: Option<FeModule>,
    fusion: Fusion,
    project: Option<Conv2d>,
}

impl Exchange {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig, fusion: Fusion) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            fe: if cfg.fe {
                Some(FeModule::new(&mut b.scope("fe"), c, cfg.norm.mode())?)
            } else {
                None
            },
            fusion,
            project: if fusion == Fusion::Concat {
                Some(Conv2d::new(
                    &mut b.scope("project"),
                    2 * c,
                    c,
                    (1, 1),
                    ConvGeometry::default(),
                    true,
                )?)
            } else {
                None
            },
        })
    }

    pub fn fe(&self) -> Option<&FeModule> {
        self.fe.as_ref()
    }

    fn fuse(&self, ctx: &mut Ctx<'_>, target: Var, source: Var) -> Result<Var> {
        Ok(match (self.fusion, &self.project) {
            (Fusion::Mul, _) => ctx.tape.mul(source, target)?,
            (Fusion::Add, _) => ctx.tape.add(target, source)?,
            (Fusion::Concat, Some(p)) => {
                let both = ctx.tape.concat(&[target, source], 1)?;
                p.forward(ctx, both)?
            }
            (Fusion::Concat, None) => unreachable!("concat fusion always has a projection"),
        })
    }
}

/// Counting-to-recognition and recognition-to-counting exchanges. Both read
/// the pre-exchange features, so the two directions are symmetric.
#[derive(Debug, Clone, Default)]
pub struct Adaptor {
    pub c2r: Option<Exchange>,
    pub r2c: Option<Exchange>,
}

impl Adaptor {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            c2r: if cfg.adaptor.has_c2r() {
                Some(Exchange::new(&mut b.scope("c2r"), cfg, cfg.fusion_c2r)?)
            } else {
                None
            },
            r2c: if cfg.adaptor.has_r2c() {
                Some(Exchange::new(&mut b.scope("r2c"), cfg, cfg.fusion_r2c)?)
            } else {
                None
            },
        })
    }

    /// Recognition feature after receiving counting information:
    /// `fuse(u_rcg, gate(u_cnt))`, or `fuse(u_rcg, u_cnt)` without FE.
    pub fn to_rcg(&self, ctx: &mut Ctx<'_>, u_cnt: Var, u_rcg: Var) -> Result<Var> {
        let Some(x) = &self.c2r else { return Ok(u_rcg) };
        let source = match &x.fe {
            Some(fe) => fe.gate(ctx, u_cnt)?,
            None => u_cnt,
        };
        x.fuse(ctx, u_rcg, source)
    }

    /// Counting feature after receiving recognition information:
    /// `fuse(u_cnt, u_rcg ⊙ gate(u_rcg))`, or `fuse(u_cnt, u_rcg)` without FE.
    pub fn to_cnt(&self, ctx: &mut Ctx<'_>, u_cnt: Var, u_rcg: Var) -> Result<Var> {
        let Some(x) = &self.r2c else { return Ok(u_cnt) };
        let source = match &x.fe {
            Some(fe) => fe.reinforce(ctx, u_rcg)?,
            None => u_rcg,
        };
        x.fuse(ctx, u_cnt, source)
    }

    /// Both exchanges from the same inputs.
    pub fn exchange(&self, ctx: &mut Ctx<'_>, u_cnt: Var, u_rcg: Var) -> Result<(Var, Var)> {
        let v_rcg = self.to_rcg(ctx, u_cnt, u_rcg)?;
        let v_cnt = self.to_cnt(ctx, u_cnt, u_rcg)?;
        Ok((v_cnt, v_rcg))
    }
}
