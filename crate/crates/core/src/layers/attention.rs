use rfl_tensor::{ParamId, Tensor, TensorError, Var};

use super::{Builder, Ctx, Linear, LstmCell, LstmState};
use crate::error::Result;

/// Encoder sequence with its attention projection precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub seq: Var,
    proj: Var,
    batch: usize,
    steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnState {
    pub lstm: LstmState,
}

/// Recurrent decoder with additive attention over encoder positions.
#[derive(Debug, Clone)]
pub struct AttnDecoder {
    enc_proj: Linear,
    state_proj: Linear,
    score: ParamId,
    embedding: ParamId,
    cell: LstmCell,
    out: Linear,
    classes: usize,
    width: usize,
}

impl AttnDecoder {
    pub fn new(
        b: &mut Builder<'_>,
        width: usize,
        hidden: usize,
        embed: usize,
        classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            enc_proj: Linear::new(&mut b.scope("enc_proj"), width, hidden, true)?,
            state_proj: Linear::new(&mut b.scope("state_proj"), hidden, hidden, false)?,
            score: b.he("score", &[hidden, 1], hidden)?,
            embedding: b.uniform("embedding", &[classes, embed], 1.0)?,
            cell: LstmCell::new(&mut b.scope("cell"), width + embed, hidden)?,
            out: Linear::new(&mut b.scope("out"), hidden + width, classes, true)?,
            classes,
            width,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn encode(&self, ctx: &mut Ctx<'_>, seq: Var) -> Result<Encoded> {
        let s = ctx.tape.shape(seq)?.to_vec();
        if s.len() != 3 || s[1] == 0 || s[2] != self.width {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!("expected [b, t>0, {}], got {s:?}", self.width),
            }
            .into());
        }
        let proj = self.enc_proj.forward_seq(ctx, seq)?;
        Ok(Encoded {
            seq,
            proj,
            batch: s[0],
            steps: s[1],
        })
    }

    pub fn initial_state(&self, ctx: &mut Ctx<'_>, batch: usize) -> Result<AttnState> {
        Ok(AttnState {
            lstm: self.cell.zero_state(ctx, batch)?,
        })
    }

    /// One decoding step. Returns logits `[b, classes]`, the next state and
    /// attention weights `[b, t]`.
    pub fn step(
        &self,
        ctx: &mut Ctx<'_>,
        enc: &Encoded,
        state: AttnState,
        prev: &[usize],
    ) -> Result<(Var, AttnState, Var)> {
        let (b, t) = (enc.batch, enc.steps);
        if prev.len() != b {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!("{} previous symbols for batch {b}", prev.len()),
            }
            .into());
        }
        let mut onehot = vec![0.0; b * self.classes];
        for (i, &p) in prev.iter().enumerate() {
            if p >= self.classes {
                return Err(TensorError::Invalid {
                    op: "attention",
                    msg: format!("symbol {p} outside {} classes", self.classes),
                }
                .into());
            }
            onehot[i * self.classes + p] = 1.0;
        }
        let hidden = self.cell.hidden;
        let q = self.state_proj.forward(ctx, state.lstm.h)?;
        let q = ctx.tape.reshape(q, &[b, 1, hidden])?;
        let e = ctx.tape.add(enc.proj, q)?;
        let e = ctx.tape.tanh(e)?;
        let e = ctx.tape.reshape(e, &[b * t, hidden])?;
        let v = ctx.param(self.score);
        let scores = ctx.tape.matmul(e, v)?;
        let scores = ctx.tape.reshape(scores, &[b, t])?;
        let weights = ctx.tape.softmax(scores, 1)?;

        let w3 = ctx.tape.reshape(weights, &[b, 1, t])?;
        let context = ctx.tape.bmm(w3, enc.seq)?;
        let context = ctx.tape.reshape(context, &[b, self.width])?;

        let onehot = ctx.constant(Tensor::new(&[b, self.classes], onehot)?);
        let table = ctx.param(self.embedding);
        let emb = ctx.tape.matmul(onehot, table)?;
        let x = ctx.tape.concat(&[context, emb], 1)?;
        let lstm = self.cell.step(ctx, x, state.lstm)?;
        let feat = ctx.tape.concat(&[lstm.h, context], 1)?;
        let logits = self.out.forward(ctx, feat)?;
        Ok((logits, AttnState { lstm }, weights))
    }

    /// Teacher-forced decoding. `targets` already end with EOS; the first input
    /// symbol is `go`. Returns logits `[b, max_len, classes]`.
    pub fn teacher_forced(
        &self,
        ctx: &mut Ctx<'_>,
        seq: Var,
        targets: &[Vec<usize>],
        go: usize,
    ) -> Result<Var> {
        let enc = self.encode(ctx, seq)?;
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: "empty target batch".into(),
            }
            .into());
        }
        let mut state = self.initial_state(ctx, enc.batch)?;
        let mut prev = vec![go; enc.batch];
        let mut logits = Vec::with_capacity(steps);
        for s in 0..steps {
            let (l, next, _) = self.step(ctx, &enc, state, &prev)?;
            state = next;
            logits.push(ctx.tape.reshape(l, &[enc.batch, 1, self.classes])?);
            for (p, t) in prev.iter_mut().zip(targets) {
                *p = t.get(s).copied().unwrap_or(go);
            }
        }
        Ok(ctx.tape.concat(&logits, 1)?)
    }

    /// Greedy decoding until every sequence has emitted `eos` or `max_len`
    /// symbols. Returned sequences exclude EOS.
    pub fn greedy(
        &self,
        ctx: &mut Ctx<'_>,
        seq: Var,
        go: usize,
        eos: usize,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let enc = self.encode(ctx, seq)?;
        let mut state = self.initial_state(ctx, enc.batch)?;
        let mut prev = vec![go; enc.batch];
        let mut out = vec![Vec::new(); enc.batch];
        let mut done = vec![false; enc.batch];
        for _ in 0..=max_len {
            let (l, next, _) = self.step(ctx, &enc, state, &prev)?;
            state = next;
            let l = ctx.tape.value(l)?.data();
            for i in 0..enc.batch {
                let row = &l[i * self.classes..(i + 1) * self.classes];
                let k = argmax(row);
                prev[i] = k;
                if done[i] {
                    continue;
                }
                if k == eos || out[i].len() == max_len {
                    done[i] = true;
                } else {
                    out[i].push(k);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

/// Fixed number of learned linear attention maps over encoder positions,
/// each followed by a shared classifier.
#[derive(Debug, Clone)]
pub struct ParallelAttention {
    reduce: Linear,
    maps: Linear,
    classifier: Linear,
    frames: usize,
    steps: usize,
    classes: usize,
}

/// Channels kept per frame before the sequence-wide map.
pub const MAP_CHANNELS: usize = 8;

impl ParallelAttention {
    pub fn new(
        b: &mut Builder<'_>,
        width: usize,
        frames: usize,
        steps: usize,
        classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            reduce: Linear::new(&mut b.scope("reduce"), width, MAP_CHANNELS, false)?,
            maps: Linear::new(
                &mut b.scope("maps"),
                frames * MAP_CHANNELS,
                steps * frames,
                true,
            )?,
            classifier: Linear::new(&mut b.scope("classifier"), width, classes, true)?,
            frames,
            steps,
            classes,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `[b, t, e] -> ([b, steps, classes], attention [b, steps, t])`. Each
    /// step's scores are a linear function of the whole sequence.
    pub fn forward(&self, ctx: &mut Ctx<'_>, seq: Var) -> Result<(Var, Var)> {
        let s = ctx.tape.shape(seq)?.to_vec();
        let (b, t, e) = (s[0], s[1], s[2]);
        if t != self.frames {
            return Err(TensorError::Invalid {
                op: "parallel attention",
                msg: format!("expected {} frames, got {t}", self.frames),
            }
            .into());
        }
        let reduced = self.reduce.forward_seq(ctx, seq)?;
        let flat = ctx.tape.reshape(reduced, &[b, t * MAP_CHANNELS])?;
        let scores = self.maps.forward(ctx, flat)?;
        let scores = ctx.tape.reshape(scores, &[b, self.steps, t])?;
        let weights = ctx.tape.softmax(scores, 2)?;
        let glimpses = ctx.tape.bmm(weights, seq)?;
        let flat = ctx.tape.reshape(glimpses, &[b * self.steps, e])?;
        let logits = self.classifier.forward(ctx, flat)?;
        let logits = ctx.tape.reshape(logits, &[b, self.steps, self.classes])?;
        Ok((logits, weights))
    }
}

/// First index of the largest value.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
