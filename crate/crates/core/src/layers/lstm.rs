use rfl_tensor::{ParamId, Tensor, TensorError, Var};

use super::{Builder, Ctx};
use crate::error::Result;

/// Hidden and cell state, each `[b, hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell with gate order input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(b: &mut Builder<'_>, inputs: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = b.uniform("w_input", &[inputs, 4 * hidden], bound)?;
        let w_hidden = b.uniform("w_hidden", &[hidden, 4 * hidden], bound)?;
        let mut bias_init = vec![0.0; 4 * hidden];
        bias_init[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let bias = b.values("bias", &[1, 4 * hidden], bias_init)?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            inputs,
            hidden,
        })
    }

    pub fn zero_state(&self, ctx: &mut Ctx<'_>, batch: usize) -> Result<LstmState> {
        let z = Tensor::zeros(&[batch, self.hidden])?;
        Ok(LstmState {
            h: ctx.constant(z.clone()),
            c: ctx.constant(z),
        })
    }

    /// Projects a whole sequence `[b, t, in]` through the input weights at
    /// once, giving `[b, t, 4h]`.
    pub fn project_inputs(&self, ctx: &mut Ctx<'_>, seq: Var) -> Result<Var> {
        let s = ctx.tape.shape(seq)?.to_vec();
        let flat = ctx.tape.reshape(seq, &[s[0] * s[1], s[2]])?;
        let w = ctx.param(self.w_input);
        let xw = ctx.tape.matmul(flat, w)?;
        Ok(ctx.tape.reshape(xw, &[s[0], s[1], 4 * self.hidden])?)
    }

    /// One step from already projected inputs `[b, 4h]`.
    pub fn step_projected(
        &self,
        ctx: &mut Ctx<'_>,
        xw: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let w = ctx.param(self.w_hidden);
        let bias = ctx.param(self.bias);
        let hw = ctx.tape.matmul(state.h, w)?;
        let z = ctx.tape.add(xw, hw)?;
        let z = ctx.tape.add(z, bias)?;
        let h = self.hidden;
        let t = &mut *ctx.tape;
        let i = t.slice(z, 1, 0, h)?;
        let f = t.slice(z, 1, h, h)?;
        let g = t.slice(z, 1, 2 * h, h)?;
        let o = t.slice(z, 1, 3 * h, h)?;
        let (i, f, g, o) = (t.sigmoid(i)?, t.sigmoid(f)?, t.tanh(g)?, t.sigmoid(o)?);
        let keep = t.mul(f, state.c)?;
        let write = t.mul(i, g)?;
        let c = t.add(keep, write)?;
        let tc = t.tanh(c)?;
        let h = t.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// One step from raw inputs `[b, in]`.
    pub fn step(&self, ctx: &mut Ctx<'_>, x: Var, state: LstmState) -> Result<LstmState> {
        let w = ctx.param(self.w_input);
        let xw = ctx.tape.matmul(x, w)?;
        self.step_projected(ctx, xw, state)
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per step.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(b: &mut Builder<'_>, inputs: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::new(&mut b.scope("fwd"), inputs, hidden)?,
            backward: LstmCell::new(&mut b.scope("bwd"), inputs, hidden)?,
        })
    }

    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `[b, t, in] -> [b, t, 2h]`.
    pub fn run(&self, ctx: &mut Ctx<'_>, seq: Var) -> Result<Var> {
        let s = ctx.tape.shape(seq)?.to_vec();
        if s.len() != 3 || s[1] == 0 || s[2] != self.forward.inputs {
            return Err(TensorError::Invalid {
                op: "bilstm",
                msg: format!("expected [b, t>0, {}], got {s:?}", self.forward.inputs),
            }
            .into());
        }
        let (batch, steps) = (s[0], s[1]);
        let fwd = self.direction(ctx, &self.forward, seq, batch, steps, false)?;
        let bwd = self.direction(ctx, &self.backward, seq, batch, steps, true)?;
        Ok(ctx.tape.concat(&[fwd, bwd], 2)?)
    }

    fn direction(
        &self,
        ctx: &mut Ctx<'_>,
        cell: &LstmCell,
        seq: Var,
        batch: usize,
        steps: usize,
        reverse: bool,
    ) -> Result<Var> {
        let xw = cell.project_inputs(ctx, seq)?;
        let mut state = cell.zero_state(ctx, batch)?;
        let mut outs = vec![None; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let x = ctx.tape.slice(xw, 1, t, 1)?;
            let x = ctx.tape.reshape(x, &[batch, 4 * cell.hidden])?;
            state = cell.step_projected(ctx, x, state)?;
            outs[t] = Some(ctx.tape.reshape(state.h, &[batch, 1, cell.hidden])?);
        }
        let outs: Vec<Var> = outs
            .into_iter()
            .map(|v| v.expect("every step visited"))
            .collect();
        Ok(ctx.tape.concat(&outs, 1)?)
    }
}
