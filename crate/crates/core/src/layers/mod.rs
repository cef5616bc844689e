//! Parameterized layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and runs inside a [`Ctx`] that records onto one tape.

mod attention;
pub mod checkpoint;
mod conv;
mod linear;
mod lstm;
mod norm;

use std::collections::HashMap;

use rfl_tensor::{Fill, NormStats, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::Result;
use crate::seed;

pub use attention::{argmax, AttnDecoder, AttnState, Encoded, ParallelAttention};
pub use conv::Conv2d;
pub use linear::Linear;
pub use lstm::{BiLstm, LstmCell, LstmState};
pub use norm::Norm;

/// Running-statistics momentum for batch normalization.
pub const NORM_MOMENTUM: f64 = 0.1;

/// Creates named parameters under a dotted prefix. Initial values depend only
/// on the build seed and the full parameter name.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            seed,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.full(name);
        Builder {
            store: self.store,
            seed: self.seed,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        fill: impl FnOnce(u64) -> Fill,
    ) -> Result<ParamId> {
        let full = self.full(name);
        let fill = fill(seed::derive(self.seed, &full));
        Ok(self.store.add(&full, Tensor::create(shape, fill)?)?)
    }

    pub fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.add(name, shape, |seed| Fill::He { seed, fan_in })
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        self.add(name, shape, |seed| Fill::Uniform {
            low: -bound,
            high: bound,
            seed,
        })
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, shape, |_| Fill::Constant(value))
    }

    pub fn values(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        let full = self.full(name);
        Ok(self.store.add(&full, Tensor::new(shape, data)?)?)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let full = self.full(name);
        Ok(self
            .store
            .add_buffer(&full, Tensor::create(shape, Fill::Constant(value))?)?)
    }
}

/// Batch statistics waiting to be folded into running buffers.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: NormStats<f64>,
}

/// One forward pass: the tape, read-only parameters and the train flag.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    train: bool,
    cache: HashMap<ParamId, Var>,
    stats: Vec<StatUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, train: bool) -> Self {
        Self {
            tape,
            store,
            train,
            cache: HashMap::new(),
            stats: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// The parameter as a tape value, recorded once per pass. In inference
    /// mode parameters enter as constants.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let v = if self.train {
            self.tape.param(self.store, id)
        } else {
            self.tape.constant(self.store.get(id).clone())
        };
        self.cache.insert(id, v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub(crate) fn record_stats(&mut self, update: StatUpdate) {
        self.stats.push(update);
    }

    pub fn take_stats(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stats)
    }
}

/// Folds batch statistics into running buffers with an unbiased variance.
pub fn apply_stats(store: &mut ParamStore, updates: &[StatUpdate]) {
    apply_stats_with(store, updates, NORM_MOMENTUM);
}

/// [`apply_stats`] with an explicit weight on the new batch.
pub fn apply_stats_with(store: &mut ParamStore, updates: &[StatUpdate], momentum: f64) {
    for u in updates {
        let n = u.stats.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (r, &m) in store
            .get_mut(u.mean)
            .data_mut()
            .iter_mut()
            .zip(&u.stats.mean)
        {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, &v) in store.get_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }
}
