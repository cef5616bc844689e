use rfl_tensor::{ParamId, ParamStore, TensorError};

use crate::error::Result;

/// AdaDelta with per-parameter running averages of squared gradients and
/// squared updates.
#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    sq_grad: Vec<Option<Vec<f64>>>,
    sq_update: Vec<Option<Vec<f64>>>,
}

impl AdaDelta {
    pub const RHO: f64 = 0.95;
    pub const EPS: f64 = 1e-6;

    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with(store, Self::RHO, Self::EPS, lr)
    }

    pub fn with(store: &ParamStore, rho: f64, eps: f64, lr: f64) -> Self {
        let zeros = |store: &ParamStore| -> Vec<Option<Vec<f64>>> {
            store
                .entries()
                .map(|(_, e)| {
                    (e.kind == rfl_tensor::ParamKind::Trainable)
                        .then(|| vec![0.0; e.tensor.numel()])
                })
                .collect()
        };
        Self {
            rho,
            eps,
            lr,
            sq_grad: zeros(store),
            sq_update: zeros(store),
        }
    }

    pub fn sq_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.sq_grad.get(id.index())?.as_deref()
    }

    pub fn sq_update(&self, id: ParamId) -> Option<&[f64]> {
        self.sq_update.get(id.index())?.as_deref()
    }

    /// Applies one update from the gradient buffers in `store`. Frozen
    /// parameters and buffers are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.sq_grad.len() {
            return Err(TensorError::Invalid {
                op: "adadelta",
                msg: format!(
                    "state for {} tensors, store has {}",
                    self.sq_grad.len(),
                    store.len()
                ),
            }
            .into());
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !store.entry(id).trainable() {
                continue;
            }
            let (Some(eg), Some(ed)) = (
                self.sq_grad[id.index()].as_mut(),
                self.sq_update[id.index()].as_mut(),
            ) else {
                continue;
            };
            let tensor = store.get_mut(id);
            let grad = tensor
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.numel()]);
            if grad.len() != eg.len() {
                return Err(TensorError::Invalid {
                    op: "adadelta",
                    msg: format!(
                        "gradient of {} values for state of {}",
                        grad.len(),
                        eg.len()
                    ),
                }
                .into());
            }
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                eg[i] = self.rho * eg[i] + (1.0 - self.rho) * g * g;
                let delta = -((ed[i] + self.eps).sqrt() / (eg[i] + self.eps).sqrt()) * g;
                ed[i] = self.rho * ed[i] + (1.0 - self.rho) * delta * delta;
                *w += self.lr * delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rfl_tensor::Tensor;

    use super::*;

    fn store_with_grad(w: &[f64], g: &[f64]) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .add("w", Tensor::from_f64(&[w.len()], w).unwrap())
            .unwrap();
        store.get_mut(id).accumulate_grad(g).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_matches_closed_form() {
        let (mut store, id) = store_with_grad(&[1.0, -2.0], &[0.5, -3.0]);
        let mut opt = AdaDelta::new(&store, 1.0);
        opt.step(&mut store).unwrap();
        let (rho, eps): (f64, f64) = (0.95, 1e-6);
        for (i, (&w0, &g)) in [1.0, -2.0].iter().zip(&[0.5, -3.0]).enumerate() {
            let delta: f64 = -eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt() * g;
            let w = store.get(id).data()[i];
            assert!((w - (w0 + delta)).abs() < 1e-15);
            assert!((opt.sq_update(id).unwrap()[i] - (1.0 - rho) * delta * delta).abs() < 1e-18);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_state() {
        let (mut store, id) = store_with_grad(&[1.0], &[2.0]);
        let mut opt = AdaDelta::new(&store, 1.0);
        opt.step(&mut store).unwrap();
        let (w, eg, ed) = (
            store.get(id).data()[0],
            opt.sq_grad(id).unwrap()[0],
            opt.sq_update(id).unwrap()[0],
        );
        store.zero_grads();
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], w);
        assert_eq!(opt.sq_grad(id).unwrap()[0], 0.95 * eg);
        assert_eq!(opt.sq_update(id).unwrap()[0], 0.95 * ed);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut store, id) = store_with_grad(&[1.0], &[2.0]);
        store.set_frozen(id, true);
        let mut opt = AdaDelta::new(&store, 1.0);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data(), &[1.0]);
        assert!(opt.sq_grad(id).unwrap().iter().all(|&v| v == 0.0));
    }
}
