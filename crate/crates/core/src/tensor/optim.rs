use super::graph::Gradients;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum.
///
/// `v ← μ·v + g`, `θ ← θ − η·v`. Frozen parameters are never touched.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Option<Vec<f32>>>,
}

impl SgdMomentum {
    pub fn new(lr: f32, momentum: f32) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        if let Some((id, _)) = grads.params().find(|(id, g)| store.is_trainable(*id) && !g.is_finite()) {
            let name = &store.param(id).name;
            return Err(Error::Numerical(format!("non-finite gradient for `{name}`")));
        }
        for (id, g) in grads.params() {
            if !store.is_trainable(id) {
                continue;
            }
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; g.numel()]);
            let p = store.get_mut(id).data_mut();
            for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
