use rfl_tensor::{Tape, Tensor, TensorError, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Squared error on a scalar prediction per sample.
    Regression,
    /// Cross-entropy over counts `0..=max_count`.
    Classification,
}

/// Per-count frequency `α` in a training corpus and the loss weight `1 − α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBalance {
    alpha: Vec<f64>,
    observed: Vec<bool>,
}

impl ClassBalance {
    pub fn from_lengths(lengths: &[usize], max_count: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyCorpus(
                "class balance needs at least one label".into(),
            ));
        }
        let mut counts = vec![0usize; max_count + 1];
        for &l in lengths {
            if l > max_count {
                return Err(Error::Config(format!(
                    "count {l} exceeds maximum {max_count}"
                )));
            }
            counts[l] += 1;
        }
        let n = lengths.len() as f64;
        Ok(Self {
            alpha: counts.iter().map(|&c| c as f64 / n).collect(),
            observed: counts.iter().map(|&c| c > 0).collect(),
        })
    }

    pub fn alpha(&self, count: usize) -> f64 {
        self.alpha.get(count).copied().unwrap_or(0.0)
    }

    /// `1 − α`, or 1 for a count never seen in the corpus.
    pub fn weight(&self, count: usize) -> f64 {
        match self.observed.get(count) {
            Some(true) => 1.0 - self.alpha[count],
            _ => 1.0,
        }
    }

    /// A single observed count gets weight 0 and switches its loss off.
    pub fn is_degenerate(&self) -> bool {
        self.observed.iter().filter(|&&o| o).count() == 1
    }
}

/// Batch mean of per-sample counting losses, each scaled by its class weight
/// when `balance` is given. Regression takes `pred: [b]` or `[b, 1]`;
/// classification takes logits `[b, max_count + 1]`.
pub fn count_loss(
    tape: &mut Tape,
    pred: Var,
    targets: &[usize],
    mode: CountMode,
    max_count: usize,
    balance: Option<&ClassBalance>,
) -> Result<Var> {
    let shape = tape.shape(pred)?.to_vec();
    let b = targets.len();
    let weights: Vec<f64> = targets
        .iter()
        .map(|&y| balance.map_or(1.0, |w| w.weight(y)))
        .collect();
    match mode {
        CountMode::Regression => {
            if shape.is_empty() || shape[0] != b || shape.iter().product::<usize>() != b {
                return Err(TensorError::Invalid {
                    op: "count_loss",
                    msg: format!("regression predictions {shape:?} for {b} targets"),
                }
                .into());
            }
            let y: Vec<f64> = targets.iter().map(|&y| y as f64).collect();
            let y = tape.constant(Tensor::new(&shape, y)?);
            let w = tape.constant(Tensor::new(&shape, weights)?);
            let d = tape.sub(pred, y)?;
            let sq = tape.square(d)?;
            let weighted = tape.mul(sq, w)?;
            Ok(tape.mean_all(weighted)?)
        }
        CountMode::Classification => {
            let classes = max_count + 1;
            if shape != [b, classes] {
                return Err(TensorError::Invalid {
                    op: "count_loss",
                    msg: format!("classification logits {shape:?}, expected [{b}, {classes}]"),
                }
                .into());
            }
            let mut pick = vec![0.0; b * classes];
            for (i, &y) in targets.iter().enumerate() {
                if y > max_count {
                    return Err(Error::Config(format!(
                        "count {y} exceeds maximum {max_count}"
                    )));
                }
                pick[i * classes + y] = weights[i];
            }
            let lsm = tape.log_softmax(pred, 1)?;
            let pick = tape.constant(Tensor::new(&[b, classes], pick)?);
            let picked = tape.mul(lsm, pick)?;
            let s = tape.sum_all(picked)?;
            Ok(tape.scale(s, -1.0 / b as f64)?)
        }
    }
}
