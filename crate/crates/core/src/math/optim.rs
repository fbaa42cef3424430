use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// RMSprop with a square-average accumulator per parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        Self { lr, decay, eps }
    }

    /// Updates every parameter of `store` from its current gradient.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().collect();
        self.step_params(store, &ids)
    }

    /// Updates only `ids`. Each parameter is checked before it is written,
    /// so a non-finite update leaves that parameter untouched.
    pub fn step_params(&self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let p = store.get_mut(id);
            let mut sq = p.square_avg.data().to_vec();
            let mut val = p.value.data().to_vec();
            for ((s, v), g) in sq.iter_mut().zip(val.iter_mut()).zip(p.grad.data()) {
                *s = self.decay * *s + (1.0 - self.decay) * g * g;
                *v -= self.lr * g / (s.sqrt() + self.eps);
            }
            if sq.iter().chain(&val).any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite RMSprop update for parameter '{}'",
                    p.name()
                )));
            }
            p.square_avg.data_mut().copy_from_slice(&sq);
            p.value.data_mut().copy_from_slice(&val);
        }
        Ok(())
    }
}
