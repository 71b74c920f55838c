use serde::{Deserialize, Serialize};

use super::{cst, Module, ParamKind, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over every trainable parameter of a module, in visit order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, module: &mut impl Module<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (cst::<T>(c.beta1), cst::<T>(c.beta2));
        let step_size = cst::<T>(c.lr / bc1);
        let bc2_sqrt = cst::<T>(bc2.sqrt());
        let eps = cst::<T>(c.eps);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit("", &mut |_, p| {
            if p.kind != ParamKind::Trainable {
                return;
            }
            if ms.len() <= idx {
                ms.push(vec![T::zero(); p.value.len()]);
                vs.push(vec![T::zero(); p.value.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.value[i] = p.value[i] - step_size * m[i] / denom;
            }
            idx += 1;
        });
    }
}
