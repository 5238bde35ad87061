use std::collections::HashMap;

use crate::{Gradients, Param, ParamId, Tensor};

pub trait Optimizer {
    /// Applies one update to every trainable parameter that received a gradient.
    fn step(&mut self, params: &[Param], grads: &Gradients);

    fn learning_rate(&self) -> f64;

    fn set_learning_rate(&mut self, lr: f64);
}

/// Stochastic gradient descent with classical momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &[Param], grads: &Gradients) {
        for p in params.iter().filter(|p| p.trainable()) {
            let Some(g) = grads.param(p) else { continue };
            let mut g = g.clone();
            if self.weight_decay != 0.0 {
                p.with_value(|w| g.scaled_add(self.weight_decay, w));
            }
            let step = if self.momentum != 0.0 {
                let v = self
                    .velocity
                    .entry(p.id())
                    .or_insert_with(|| Tensor::zeros(g.raw_dim()));
                *v *= self.momentum;
                *v += &g;
                v.clone()
            } else {
                g
            };
            let lr = self.lr;
            p.update(|w| w.scaled_add(-lr, &step));
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: HashMap<ParamId, i32>,
    m: HashMap<ParamId, Tensor>,
    v: HashMap<ParamId, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: HashMap::new(),
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &[Param], grads: &Gradients) {
        for p in params.iter().filter(|p| p.trainable()) {
            let Some(g) = grads.param(p) else { continue };
            let mut g = g.clone();
            if self.weight_decay != 0.0 {
                p.with_value(|w| g.scaled_add(self.weight_decay, w));
            }
            let t = self.t.entry(p.id()).or_insert(0);
            *t += 1;
            let t = *t;
            let m = self.m.entry(p.id()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            *m *= self.beta1;
            m.scaled_add(1.0 - self.beta1, &g);
            let v = self.v.entry(p.id()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            *v *= self.beta2;
            v.scaled_add(1.0 - self.beta2, &g.mapv(|x| x * x));
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let step_size = self.lr / bc1;
            let eps = self.eps;
            let mut update = m.clone();
            ndarray::Zip::from(&mut update)
                .and(&*v)
                .for_each(|u, &vv| *u /= (vv / bc2).sqrt() + eps);
            p.update(|w| w.scaled_add(-step_size, &update));
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}
