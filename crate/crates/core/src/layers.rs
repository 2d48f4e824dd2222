//! Pieces shared by the vision and audio networks: the forward context,
//! batch-norm parameters and seeded initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{BatchStats, Tape, Var, BN_MOMENTUM};
use crate::tensor::{Scalar, Tensor};

/// Whether batch norm uses batch statistics (and records them) or the
/// stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub bound: &'a Bound,
    pub store: &'a ParamStore<T>,
    pub mode: BnMode,
    /// Batch statistics observed in training mode, applied to the running
    /// averages after the optimizer step.
    pub updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, bound: &'a Bound, store: &'a ParamStore<T>, mode: BnMode) -> Self {
        Ctx {
            tape,
            bound,
            store,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.bound[id]
    }
}

#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub bn: BatchNormIds,
    pub stats: BatchStats<T>,
}

/// Parameter handles of one batch-norm layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormIds {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, width: usize) -> Self {
        BatchNormIds {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[width], T::one()), true),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[width]), true),
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(&[width]), false),
            running_var: store.add(format!("{prefix}.running_var"), Tensor::full(&[width], T::one()), false),
        }
    }

    /// Normalizes the rows of `x: [n, width]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            BnMode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b)?;
                ctx.updates.push(StatUpdate { bn: *self, stats });
                Ok(y)
            }
            BnMode::Eval => {
                let mean = ctx.store.get(self.running_mean).data();
                let var = ctx.store.get(self.running_var).data();
                ctx.tape.batch_norm_eval(x, g, b, mean, var)
            }
        }
    }
}

/// Folds observed batch statistics into the running averages with
/// momentum 0.1.
pub fn apply_stat_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[StatUpdate<T>]) {
    let m = T::cast(BN_MOMENTUM);
    let keep = T::one() - m;
    for u in updates {
        for (id, obs) in [(u.bn.running_mean, &u.stats.mean), (u.bn.running_var, &u.stats.var)] {
            for (r, &o) in store.get_mut(id).data_mut().iter_mut().zip(obs) {
                *r = keep * *r + m * o;
            }
        }
    }
}

/// Adds a weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_weight<T: Scalar>(
    store: &mut ParamStore<T>,
    name: String,
    shape: &[usize],
    fan_in: usize,
    rng: &mut impl Rng,
) -> ParamId {
    store.add_uniform(name, shape, (1.0 / fan_in as f64).sqrt(), rng)
}
