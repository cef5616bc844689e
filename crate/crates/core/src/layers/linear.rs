use rfl_tensor::{ParamId, Var};

use super::{Builder, Ctx};
use crate::error::Result;

/// `y = x·W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, inputs: usize, outputs: usize, bias: bool) -> Result<Self> {
        let weight = b.he("weight", &[inputs, outputs], inputs)?;
        let bias = if bias {
            Some(b.constant("bias", &[1, outputs], 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// `x: [n, in] -> [n, out]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(id) => {
                let b = ctx.param(id);
                Ok(ctx.tape.add(y, b)?)
            }
            None => Ok(y),
        }
    }

    /// Applies the map to the last axis of a rank-3 input.
    pub fn forward_seq(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x)?.to_vec();
        let flat = ctx.tape.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = self.forward(ctx, flat)?;
        let out = ctx.tape.shape(y)?[1];
        Ok(ctx.tape.reshape(y, &[s[0], s[1], out])?)
    }
}
