use rfl_tensor::{BackwardCtx, Tape, Tensor, TensorError, Var};

use crate::error::Result;

/// Mean cross-entropy over every target position of every sample.
/// `logits: [b, steps, classes]`; each target (EOS included) must fit in
/// `steps`. Positions past a target's end are ignored.
pub fn attn_ce_loss(tape: &mut Tape, logits: Var, targets: &[Vec<usize>]) -> Result<Var> {
    let t = tape.value(logits)?;
    let shape = t.shape().to_vec();
    if shape.len() != 3 || shape[0] != targets.len() {
        return Err(TensorError::Invalid {
            op: "attn_ce",
            msg: format!("logits {shape:?} for {} targets", targets.len()),
        }
        .into());
    }
    let (steps, classes) = (shape[1], shape[2]);
    let count: usize = targets.iter().map(Vec::len).sum();
    for tgt in targets {
        if tgt.len() > steps {
            return Err(TensorError::Invalid {
                op: "attn_ce",
                msg: format!("target of {} symbols for {steps} steps", tgt.len()),
            }
            .into());
        }
        if let Some(&bad) = tgt.iter().find(|&&c| c >= classes) {
            return Err(TensorError::Invalid {
                op: "attn_ce",
                msg: format!("target index {bad} outside {classes} classes"),
            }
            .into());
        }
    }
    if count == 0 {
        return Err(TensorError::Invalid {
            op: "attn_ce",
            msg: "no target positions".into(),
        }
        .into());
    }
    let data = t.data();
    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    for (i, tgt) in targets.iter().enumerate() {
        for (s, &y) in tgt.iter().enumerate() {
            let off = (i * steps + s) * classes;
            let row = &data[off..off + classes];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            let lz = z.ln() + m;
            total += lz - row[y];
            for c in 0..classes {
                grad[off + c] = (row[c] - lz).exp();
            }
            grad[off + y] -= 1.0;
        }
    }
    let scale = 1.0 / count as f64;
    Ok(tape.push_op(
        "attn_ce",
        &[logits],
        Tensor::scalar(total * scale),
        Box::new(move |ctx: &BackwardCtx<'_, f64>| {
            let up = ctx.grad()[0] * scale;
            vec![Some(grad.iter().map(|g| g * up).collect())]
        }),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(logits: &[f64], shape: &[usize], targets: &[Vec<usize>]) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_f64(shape, logits).unwrap());
        let l = attn_ce_loss(&mut tape, v, targets).unwrap();
        tape.value(l).unwrap().item().unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = loss_of(&[0.0; 10], &[1, 2, 5], &[vec![3, 0]]);
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let l = loss_of(&[0.0, 60.0, 0.0], &[1, 1, 3], &[vec![1]]);
        assert!(l < 1e-20);
    }

    #[test]
    fn padding_steps_are_ignored() {
        let base = loss_of(&[0.0, 2.0, 0.0, 9.0, -9.0, 3.0], &[1, 2, 3], &[vec![1]]);
        let other = loss_of(&[0.0, 2.0, 0.0, -4.0, 1.0, 0.0], &[1, 2, 3], &[vec![1]]);
        assert_eq!(base, other);
    }

    #[test]
    fn rejects_bad_targets() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::zeros(&[1, 2, 3]).unwrap());
        assert!(attn_ce_loss(&mut tape, v, &[vec![3]]).is_err());
        assert!(attn_ce_loss(&mut tape, v, &[vec![1, 1, 0]]).is_err());
    }
}
