use super::array::DArray;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("optimizer hyperparameters {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay; plain Adam when `weight_decay == 0`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Option<DArray>>,
    v: Vec<Option<DArray>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, m: Vec::new(), v: Vec::new(), t: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable parameter of `store` from its gradient buffer.
    /// Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.trainable().collect();
        for &id in &ids {
            let p = store.param(id);
            match &p.grad {
                None => return Err(Error::MissingGrad(p.name.clone())),
                Some(g) if !g.is_finite() => return Err(Error::NonFiniteGrad(p.name.clone())),
                _ => {}
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for id in ids {
            let i = id.index();
            let p = store.param_mut(id);
            let g = p.grad.as_ref().expect("checked above").data();
            let shape = p.value.shape().to_vec();
            let m = self.m[i].get_or_insert_with(|| DArray::zeros(shape.clone())).data_mut();
            let v = self.v[i].get_or_insert_with(|| DArray::zeros(shape)).data_mut();
            let w = p.value.data_mut();
            for k in 0..w.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                if c.weight_decay > 0.0 {
                    w[k] -= c.lr * c.weight_decay * w[k];
                }
                w[k] -= c.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", DArray::vector(vec![value])).unwrap();
        s.zero_grads();
        s.param_mut(id).grad.as_mut().unwrap().data_mut()[0] = grad;
        s
    }

    #[test]
    fn missing_grad_is_error() {
        let mut s = ParamStore::new();
        s.add("p", DArray::scalar(1.0)).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut s), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn non_finite_grad_is_error() {
        let mut s = one_param(1.0, f64::NAN);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut s), Err(Error::NonFiniteGrad(_))));
    }

    #[test]
    fn step_counter_advances() {
        let mut s = one_param(1.0, 0.5);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut s).unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(opt.steps(), 2);
    }
}
