use rfl_tensor::{NormMode, ParamId, Var};

use super::{Builder, Ctx, StatUpdate};
use crate::error::Result;

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel affine normalization. Batch mode keeps running statistics and
/// switches to them in inference or when its parameters are frozen.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    running: Option<(ParamId, ParamId)>,
    mode: NormMode,
}

impl Norm {
    pub fn new(b: &mut Builder<'_>, channels: usize, mode: NormMode) -> Result<Self> {
        let gamma = b.constant("gamma", &[channels], 1.0)?;
        let beta = b.constant("beta", &[channels], 0.0)?;
        let running = if mode == NormMode::Batch {
            Some((
                b.buffer("running_mean", &[channels], 0.0)?,
                b.buffer("running_var", &[channels], 1.0)?,
            ))
        } else {
            None
        };
        Ok(Self {
            gamma,
            beta,
            running,
            mode,
        })
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let frozen = ctx.store().entry(self.gamma).frozen();
        match self.running {
            Some((mean, var)) if !ctx.train() || frozen => {
                let store = ctx.store();
                let (m, v) = (store.get(mean).data(), store.get(var).data());
                Ok(ctx.tape.norm_frozen(x, g, b, m, v, NORM_EPS)?)
            }
            running => {
                let (y, stats) = ctx.tape.norm(x, g, b, self.mode, NORM_EPS)?;
                if let (Some((mean, var)), Some(stats)) = (running, stats) {
                    ctx.record_stats(StatUpdate { mean, var, stats });
                }
                Ok(y)
            }
        }
    }
}
