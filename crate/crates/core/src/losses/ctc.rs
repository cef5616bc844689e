//! Connectionist temporal classification in log space.

use rfl_tensor::{BackwardCtx, Tape, Tensor, TensorError, Var};

use crate::error::{Error, Result};

/// Loss node plus the batch indices skipped as infeasible.
#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: Var,
    pub skipped: Vec<usize>,
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Frames needed to emit `label`: one per symbol plus a blank between repeats.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extended(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &c in label {
        ext.push(c);
        ext.push(blank);
    }
    ext
}

/// Negative log-likelihood of `label` and its gradient w.r.t. the
/// `[frames, classes]` log-probability table, or `None` when infeasible.
fn forward_backward(
    lp: &[f64],
    frames: usize,
    classes: usize,
    label: &[usize],
    blank: usize,
) -> Option<(f64, Vec<f64>)> {
    if frames == 0 || min_frames(label) > frames {
        return None;
    }
    let ext = extended(label, blank);
    let s_len = ext.len();
    let at = |t: usize, c: usize| lp[t * classes + c];
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + at(t, ext[s]) };
        }
    }
    let last = &alpha[(frames - 1) * s_len..];
    let log_p = if s_len > 1 {
        lse2(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    if !log_p.is_finite() {
        return None;
    }

    let mut beta = vec![ninf; frames * s_len];
    let t_last = frames - 1;
    beta[t_last * s_len + s_len - 1] = at(t_last, ext[s_len - 1]);
    if s_len > 1 {
        beta[t_last * s_len + s_len - 2] = at(t_last, ext[s_len - 2]);
    }
    for t in (0..t_last).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = lse2(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + at(t, ext[s]) };
        }
    }

    let mut grad = vec![0.0; frames * classes];
    let mut occupancy = vec![ninf; classes];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = lse2(occupancy[ext[s]], ab);
        }
        for (c, &o) in occupancy.iter().enumerate() {
            if o != ninf {
                grad[t * classes + c] = -(o - at(t, c) - log_p).exp();
            }
        }
    }
    Some((-log_p, grad))
}

/// Negative log-likelihood of one label; infinite when infeasible.
pub fn ctc_nll(
    log_probs: &[f64],
    frames: usize,
    classes: usize,
    label: &[usize],
    blank: usize,
) -> f64 {
    forward_backward(log_probs, frames, classes, label, blank).map_or(f64::INFINITY, |(nll, _)| nll)
}

/// Longest sequence [`ctc_bruteforce`] will enumerate.
pub const BRUTEFORCE_MAX_FRAMES: usize = 8;

/// Total probability of `label` by enumerating every frame sequence.
/// `probs` is a `[frames, classes]` table of probabilities.
pub fn ctc_bruteforce(
    probs: &[f64],
    frames: usize,
    classes: usize,
    label: &[usize],
    blank: usize,
) -> Result<f64> {
    if frames > BRUTEFORCE_MAX_FRAMES {
        return Err(Error::Infeasible(format!(
            "{frames} frames exceeds enumeration limit {BRUTEFORCE_MAX_FRAMES}"
        )));
    }
    let total = classes.pow(frames as u32);
    let mut path = vec![0usize; frames];
    let mut collapsed = Vec::with_capacity(frames);
    let mut sum = 0.0;
    for code in 0..total {
        let mut rest = code;
        for p in path.iter_mut().rev() {
            *p = rest % classes;
            rest /= classes;
        }
        collapsed.clear();
        let mut prev = None;
        for &c in &path {
            if Some(c) != prev && c != blank {
                collapsed.push(c);
            }
            prev = Some(c);
        }
        if collapsed == label {
            sum += path
                .iter()
                .enumerate()
                .map(|(t, &c)| probs[t * classes + c])
                .product::<f64>();
        }
    }
    Ok(sum)
}

/// Mean CTC loss over the feasible samples of `log_probs: [b, frames,
/// classes]`. Infeasible samples are skipped with a warning; a batch with no
/// feasible sample is an error.
pub fn ctc_loss(
    tape: &mut Tape,
    log_probs: Var,
    labels: &[Vec<usize>],
    blank: usize,
) -> Result<CtcOutput> {
    let t = tape.value(log_probs)?;
    let shape = t.shape().to_vec();
    if shape.len() != 3 || shape[0] != labels.len() {
        return Err(TensorError::Invalid {
            op: "ctc",
            msg: format!("log-probs {shape:?} for {} labels", labels.len()),
        }
        .into());
    }
    let (batch, frames, classes) = (shape[0], shape[1], shape[2]);
    for l in labels {
        if let Some(&bad) = l.iter().find(|&&c| c >= classes || c == blank) {
            return Err(TensorError::Invalid {
                op: "ctc",
                msg: format!("label index {bad} is blank or outside {classes} classes"),
            }
            .into());
        }
    }
    let data = t.data();
    let per = frames * classes;
    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    let mut skipped = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match forward_backward(&data[i * per..(i + 1) * per], frames, classes, label, blank) {
            Some((nll, g)) => {
                total += nll;
                grad[i * per..(i + 1) * per].copy_from_slice(&g);
            }
            None => {
                log::warn!(
                    "ctc: sample {i} (length {}) infeasible in {frames} frames; skipped",
                    label.len()
                );
                skipped.push(i);
            }
        }
    }
    let kept = batch - skipped.len();
    if kept == 0 {
        return Err(Error::Infeasible(format!(
            "no CTC-feasible label among {batch} samples"
        )));
    }
    let scale = 1.0 / kept as f64;
    let loss = tape.push_op(
        "ctc",
        &[log_probs],
        Tensor::scalar(total * scale),
        Box::new(move |ctx: &BackwardCtx<'_, f64>| {
            let up = ctx.grad()[0] * scale;
            vec![Some(grad.iter().map(|g| g * up).collect())]
        }),
    )?;
    Ok(CtcOutput { loss, skipped })
}
