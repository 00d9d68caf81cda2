//! Small layer library on top of the tape.

use rand::Rng;

use super::array::DArray;
use super::params::{ParamId, ParamStore};
use super::rng::uniform;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Affine map `x·W + b` with `W: [in, out]`, applied over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform init in `±1/√fan_in` for both weight and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| uniform(rng, -bound, bound)).collect();
        let b: Vec<f64> = (0..fan_out).map(|_| uniform(rng, -bound, bound)).collect();
        let w = store.add(&format!("{name}.w"), DArray::new(vec![fan_in, fan_out], w)?)?;
        let b = store.add(&format!("{name}.b"), DArray::vector(b))?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    /// Re-binds a layer to parameters already present in `store`.
    pub fn load(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store.require(&format!("{name}.w"))?;
        let b = store.require(&format!("{name}.b"))?;
        let shape = store.value(w).shape();
        Ok(Self { w, b, fan_in: shape[0], fan_out: shape[1] })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let w = t.param(s, self.w);
        let b = t.param(s, self.b);
        let y = t.matmul(x, w)?;
        t.add(y, b)
    }
}

/// ReLU perceptron; no activation after the last layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn load(store: &ParamStore, name: &str, n_layers: usize) -> Result<Self> {
        let layers = (0..n_layers).map(|i| Linear::load(store, &format!("{name}.{i}"))).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, s, h)?;
            if i + 1 < self.layers.len() {
                h = t.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Layer normalisation parameters (gain initialised to one, bias to zero).
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(&format!("{name}.gain"), DArray::filled(vec![dim], 1.0))?;
        let bias = store.add(&format!("{name}.bias"), DArray::zeros(vec![dim]))?;
        Ok(Self { gain, bias, eps: 1e-5 })
    }

    pub fn load(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            gain: store.require(&format!("{name}.gain"))?,
            bias: store.require(&format!("{name}.bias"))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let g = t.param(s, self.gain);
        let b = t.param(s, self.bias);
        t.layer_norm(x, g, b, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::RngStreams;

    #[test]
    fn linear_init_is_bounded_and_loadable() {
        let mut store = ParamStore::new();
        let mut rng = RngStreams::new(0).stream("init");
        let l = Linear::new(&mut store, "fc", 16, 4, &mut rng).unwrap();
        assert!(store.value(l.w).data().iter().all(|v| v.abs() <= 0.25));
        let again = Linear::load(&store, "fc").unwrap();
        assert_eq!((again.w, again.fan_in, again.fan_out), (l.w, 16, 4));
    }

    #[test]
    fn mlp_output_shape() {
        let mut store = ParamStore::new();
        let mut rng = RngStreams::new(0).stream("init");
        let m = Mlp::new(&mut store, "mlp", &[3, 8, 2], &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.input(DArray::zeros(vec![5, 3]));
        let y = m.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.shape(y), &[5, 2]);
    }
}
