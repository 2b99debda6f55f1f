use serde::{Deserialize, Serialize};

use super::{Gradients, ParamGroup, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter and created
/// lazily on first update.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<S>, Tensor<S>)>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> Option<&(Tensor<S>, Tensor<S>)> {
        self.moments.get(index).and_then(Option::as_ref)
    }

    /// Applies one update to every parameter that has a gradient.
    /// `lr_mult` gives the learning-rate multiplier per group; parameters
    /// with a zero multiplier are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &Gradients<S>,
        lr_mult: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        let collected: Vec<_> = grads.params().collect();
        for (id, g) in &collected {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    name: params.get(*id).name.clone(),
                });
            }
        }
        self.step += 1;
        if self.moments.len() < params.len() {
            self.moments.resize_with(params.len(), || None);
        }
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let eps = S::of(c.eps);
        for (id, g) in collected {
            let mult = lr_mult(params.get(id).group);
            let shape = params.value(id).shape().to_vec();
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
            let lr = S::of(c.lr * mult);
            let (bc1, bc2) = (S::of(bc1), S::of(bc2));
            let update = mult != 0.0;
            let p = params.value_mut(id).data_mut();
            for (((p, mi), vi), &gi) in p
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                if update {
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, ParamId};

    fn scalar_problem(x: f64, weight: f64) -> (ParamStore<f64>, Gradients<f64>) {
        let mut store = ParamStore::new();
        let id = store
            .insert(
                "x",
                Tensor::from_f64(&[1, 1], &[x]).unwrap(),
                ParamGroup::Backbone,
            )
            .unwrap();
        let mut g = Graph::new();
        let xv = g.param(&store, id);
        let loss = g.scale(xv, weight);
        let grads = g.backward(loss).unwrap();
        (store, grads)
    }

    #[test]
    fn unit_gradient_moves_by_lr() {
        let (mut store, grads) = scalar_problem(0.5, 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads, |_| 1.0).unwrap();
        // m̂ = v̂ = 1 after bias correction, so Δ = lr / (1 + ε).
        let moved = 0.5 - store.value(ParamId(0)).item();
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut store, grads) = scalar_problem(0.5, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads, |_| 1.0).unwrap();
        assert_eq!(store.value(ParamId(0)).item(), 0.5);
        let (m, v) = adam.moments(0).unwrap();
        assert_eq!((m.item(), v.item()), (0.0, 0.0));
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let (mut store, grads) = scalar_problem(0.5, 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads, |_| 1.0).unwrap();
        let (_, zero) = scalar_problem(0.5, 0.0);
        let (m0, v0) = adam.moments(0).map(|(m, v)| (m.item(), v.item())).unwrap();
        adam.step(&mut store, &zero, |_| 1.0).unwrap();
        let (m1, v1) = adam.moments(0).map(|(m, v)| (m.item(), v.item())).unwrap();
        assert!((m1 - 0.9 * m0).abs() < 1e-15);
        assert!((v1 - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut store, grads) = scalar_problem(0.5, f64::NAN);
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam.step(&mut store, &grads, |_| 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref name } if name == "x"));
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let (mut store, grads) = scalar_problem(0.25, 3.0);
            let mut adam = Adam::new(AdamConfig::default());
            for _ in 0..5 {
                adam.step(&mut store, &grads, |_| 1.0).unwrap();
            }
            store.value(ParamId(0)).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
