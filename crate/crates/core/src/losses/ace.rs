use rfl_tensor::{ReduceOp, Tape, Tensor, TensorError, Var};

use crate::error::Result;

/// Occurrences of each class in `label`; the blank entry receives the
/// remaining `frames − len` positions.
pub fn char_counts(label: &[usize], classes: usize, blank: usize, frames: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &c in label {
        counts[c] += 1;
    }
    counts[blank] = frames.saturating_sub(label.len());
    counts
}

/// Aggregation cross-entropy: `−Σ_k (N_k / T) ln(Σ_t p_tk / T)` averaged over
/// the batch. `probs: [b, T, classes]`; `counts[i]` holds per-class
/// occurrences including the blank filler, summing to `T`.
pub fn ace_loss(tape: &mut Tape, probs: Var, counts: &[Vec<usize>]) -> Result<Var> {
    let shape = tape.shape(probs)?.to_vec();
    if shape.len() != 3 || shape[0] != counts.len() {
        return Err(TensorError::Invalid {
            op: "ace",
            msg: format!("probabilities {shape:?} for {} count vectors", counts.len()),
        }
        .into());
    }
    let (b, frames, classes) = (shape[0], shape[1], shape[2]);
    let mut target = Vec::with_capacity(b * classes);
    for c in counts {
        let total: usize = c.iter().sum();
        if c.len() != classes || total > frames {
            return Err(TensorError::Invalid {
                op: "ace",
                msg: format!("counts {c:?} do not fit {frames} frames of {classes} classes"),
            }
            .into());
        }
        target.extend(c.iter().map(|&n| n as f64 / frames as f64));
    }
    let mean = tape.reduce(ReduceOp::Mean, probs, &[1])?;
    let log_mean = tape.log(mean)?;
    let target = tape.constant(Tensor::new(&[b, classes], target)?);
    let prod = tape.mul(log_mean, target)?;
    let s = tape.sum_all(prod)?;
    Ok(tape.scale(s, -1.0 / b as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ace(probs: &[f64], shape: &[usize], counts: &[Vec<usize>]) -> f64 {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_f64(shape, probs).unwrap());
        let l = ace_loss(&mut tape, p, counts).unwrap();
        tape.value(l).unwrap().item().unwrap()
    }

    #[test]
    fn perfect_single_frame() {
        let l = ace(
            &[1e-300, 1.0, 1e-300],
            &[1, 1, 3],
            &[char_counts(&[1], 3, 0, 1)],
        );
        assert_eq!(l, 0.0);
    }

    #[test]
    fn uniform_case_is_ln_k() {
        let l = ace(&[0.25; 8], &[1, 2, 4], &[vec![0, 1, 0, 1]]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l = ace(&[0.25; 16], &[1, 4, 4], &[vec![1, 1, 1, 1]]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_many_characters() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_f64(&[1, 2, 3], &[1.0 / 3.0; 6]).unwrap());
        assert!(ace_loss(&mut tape, p, &[vec![0, 2, 1]]).is_err());
    }
}
