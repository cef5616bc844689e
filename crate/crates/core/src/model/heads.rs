use rfl_tensor::{ReduceOp, TensorError, Var};

use super::config::{DecoderKind, ModelConfig};
use crate::error::Result;
use crate::layers::{AttnDecoder, BiLstm, Builder, Ctx, Linear, ParallelAttention};
use crate::losses::{CountMode, LabelCoding};

/// `[b, c, 1, w] -> [b, w, c]`.
pub fn to_sequence(ctx: &mut Ctx<'_>, v: Var) -> Result<Var> {
    let s = ctx.tape.shape(v)?.to_vec();
    if s.len() != 4 || s[2] != 1 {
        return Err(TensorError::Invalid {
            op: "to_sequence",
            msg: format!("expected [b, c, 1, w], got {s:?}"),
        }
        .into());
    }
    let flat = ctx.tape.reshape(v, &[s[0], s[1], s[3]])?;
    Ok(ctx.tape.permute(flat, &[0, 2, 1])?)
}

/// Global average pooling then a linear map.
#[derive(Debug, Clone)]
pub struct CountHead {
    linear: Linear,
    mode: CountMode,
}

impl CountHead {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let outputs = match cfg.count_mode {
            CountMode::Regression => 1,
            CountMode::Classification => cfg.count_classes(),
        };
        Ok(Self {
            linear: Linear::new(&mut b.scope("linear"), cfg.channels, outputs, true)?,
            mode: cfg.count_mode,
        })
    }

    /// `[b] ` regression outputs or `[b, max_len + 1]` logits.
    pub fn forward(&self, ctx: &mut Ctx<'_>, v: Var) -> Result<Var> {
        let b = ctx.tape.shape(v)?[0];
        let pooled = ctx.tape.reduce(ReduceOp::Mean, v, &[2, 3])?;
        let y = self.linear.forward(ctx, pooled)?;
        Ok(match self.mode {
            CountMode::Regression => ctx.tape.reshape(y, &[b])?,
            CountMode::Classification => y,
        })
    }
}

/// Rounds half away from zero and clips to `[0, max_count]`.
pub fn round_count(x: f64, max_count: usize) -> usize {
    x.round().clamp(0.0, max_count as f64) as usize
}

#[derive(Debug, Clone)]
pub enum RcgHead {
    Ctc(Linear),
    Attn {
        encoder: BiLstm,
        decoder: AttnDecoder,
    },
    Parallel(ParallelAttention),
}

impl RcgHead {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig, classes: usize) -> Result<Self> {
        Ok(match cfg.decoder {
            DecoderKind::Ctc => RcgHead::Ctc(Linear::new(
                &mut b.scope("linear"),
                cfg.channels,
                classes,
                true,
            )?),
            DecoderKind::BilstmAttn => {
                let encoder = BiLstm::new(&mut b.scope("bilstm"), cfg.channels, cfg.hidden)?;
                let decoder = AttnDecoder::new(
                    &mut b.scope("decoder"),
                    encoder.output_size(),
                    cfg.hidden,
                    cfg.embed,
                    classes,
                )?;
                RcgHead::Attn { encoder, decoder }
            }
            DecoderKind::ParalAttn => RcgHead::Parallel(ParallelAttention::new(
                &mut b.scope("parallel"),
                cfg.channels,
                cfg.frames(),
                cfg.max_len + 1,
                classes,
            )?),
        })
    }

    /// Training logits. CTC: `[b, frames, classes]`; attention decoders:
    /// `[b, steps, classes]`. The recurrent decoder needs EOS-terminated
    /// targets for teacher forcing.
    pub fn logits(&self, ctx: &mut Ctx<'_>, v: Var, targets: Option<&[Vec<usize>]>) -> Result<Var> {
        let seq = to_sequence(ctx, v)?;
        match self {
            RcgHead::Ctc(linear) => linear.forward_seq(ctx, seq),
            RcgHead::Attn { encoder, decoder } => {
                let targets = targets.ok_or_else(|| TensorError::Invalid {
                    op: "attention",
                    msg: "teacher forcing needs targets".into(),
                })?;
                let enc = encoder.run(ctx, seq)?;
                decoder.teacher_forced(ctx, enc, targets, LabelCoding::EOS)
            }
            RcgHead::Parallel(p) => Ok(p.forward(ctx, seq)?.0),
        }
    }

    /// Greedy label indices per sample.
    pub fn decode(&self, ctx: &mut Ctx<'_>, v: Var, max_len: usize) -> Result<Vec<Vec<usize>>> {
        match self {
            RcgHead::Attn { encoder, decoder } => {
                let seq = to_sequence(ctx, v)?;
                let enc = encoder.run(ctx, seq)?;
                decoder.greedy(ctx, enc, LabelCoding::EOS, LabelCoding::EOS, max_len)
            }
            RcgHead::Ctc(_) => {
                let logits = self.logits(ctx, v, None)?;
                let t = ctx.tape.value(logits)?;
                let (b, frames, classes) = (t.shape()[0], t.shape()[1], t.shape()[2]);
                Ok((0..b)
                    .map(|i| {
                        ctc_greedy(
                            &t.data()[i * frames * classes..(i + 1) * frames * classes],
                            classes,
                            LabelCoding::BLANK,
                        )
                    })
                    .collect())
            }
            RcgHead::Parallel(_) => {
                let logits = self.logits(ctx, v, None)?;
                let t = ctx.tape.value(logits)?;
                let (b, steps, classes) = (t.shape()[0], t.shape()[1], t.shape()[2]);
                Ok((0..b)
                    .map(|i| {
                        let rows = &t.data()[i * steps * classes..(i + 1) * steps * classes];
                        rows.chunks(classes)
                            .map(crate::layers::argmax)
                            .take_while(|&k| k != LabelCoding::EOS)
                            .take(max_len)
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

/// Best path: per-frame argmax, merge repeats, drop blanks.
pub fn ctc_greedy(scores: &[f64], classes: usize, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in scores.chunks(classes) {
        let k = crate::layers::argmax(row);
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero_and_clipped() {
        assert_eq!(round_count(2.5, 26), 3);
        assert_eq!(round_count(2.4999, 26), 2);
        assert_eq!(round_count(-0.5, 26), 0);
        assert_eq!(round_count(-3.0, 26), 0);
        assert_eq!(round_count(40.2, 26), 26);
    }

    #[test]
    fn ctc_greedy_merges_repeats_across_frames() {
        let onehot = |ks: &[usize]| -> Vec<f64> {
            ks.iter()
                .flat_map(|&k| (0..3).map(move |c| if c == k { 1.0 } else { 0.0 }))
                .collect()
        };
        assert_eq!(
            ctc_greedy(&onehot(&[1, 1, 0, 1, 2, 2, 0]), 3, 0),
            vec![1, 1, 2]
        );
        assert_eq!(ctc_greedy(&onehot(&[0, 0]), 3, 0), Vec::<usize>::new());
    }
}
