//! Training objectives for both branches.

mod ace;
mod attention;
mod coding;
mod count;
pub mod ctc;

pub use ace::{ace_loss, char_counts};
pub use attention::attn_ce_loss;
pub use coding::LabelCoding;
pub use count::{count_loss, ClassBalance, CountMode};
pub use ctc::{ctc_bruteforce, ctc_loss, ctc_nll, CtcOutput};

use rfl_tensor::{Tape, Var};

use crate::error::Result;

/// `l_cnt + λ·l_rcg`.
pub fn joint_loss(tape: &mut Tape, l_cnt: Var, l_rcg: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(l_rcg, lambda)?;
    Ok(tape.add(l_cnt, weighted)?)
}

#[cfg(test)]
mod tests {
    use rfl_tensor::Tensor;

    use super::*;

    fn leaf(tape: &mut Tape, x: f64) -> Var {
        let mut t = Tensor::scalar(x);
        t.set_requires_grad(true);
        tape.leaf(t)
    }

    #[test]
    fn joint_sum_and_slopes() {
        let mut tape = Tape::new();
        let c = leaf(&mut tape, 0.5);
        let r = leaf(&mut tape, 1.5);
        let l = joint_loss(&mut tape, c, r, 1.0).unwrap();
        assert_eq!(tape.value(l).unwrap().item(), Some(2.0));

        let mut tape = Tape::new();
        let c = leaf(&mut tape, 0.7);
        let r = leaf(&mut tape, -3.0);
        let l = joint_loss(&mut tape, c, r, 0.25).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(r).unwrap(), &[0.25]);
        assert_eq!(g.wrt(c).unwrap(), &[1.0]);
    }

    #[test]
    fn zero_weight_leaves_counting_loss() {
        let mut tape = Tape::new();
        let c = leaf(&mut tape, 0.123_456_789);
        let r = leaf(&mut tape, 42.0);
        let l = joint_loss(&mut tape, c, r, 0.0).unwrap();
        assert_eq!(tape.value(l).unwrap().item(), Some(0.123_456_789));
    }
}
