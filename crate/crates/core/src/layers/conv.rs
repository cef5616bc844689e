use rfl_tensor::{ConvGeometry, ParamId, Var};

use super::{Builder, Ctx};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    /// He-initialized weight `[out, in, kh, kw]`; zero bias.
    pub fn new(
        b: &mut Builder<'_>,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        geometry: ConvGeometry,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let weight = b.he("weight", &[out_ch, in_ch, kernel.0, kernel.1], fan_in)?;
        let bias = if bias {
            Some(b.constant("bias", &[out_ch], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            geometry,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        Ok(ctx.tape.conv2d(x, w, b, self.geometry)?)
    }
}
