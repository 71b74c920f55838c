use rand::Rng;

use super::{cst, join, Module, Param, ParamKind, Real, Tensor};

/// Batch normalization whose per-channel scale and bias are affine functions
/// of a condition vector:
///
/// `out = xhat * (1 + s(y)) + b(y)`, with `s(y) = Ws·y + bs` and `b(y) = Wb·y + bb`.
///
/// Training mode normalizes with batch statistics and updates running
/// averages; inference uses the running averages.
#[derive(Debug, Clone)]
pub struct CondBatchNorm<T> {
    pub channels: usize,
    pub cond_dim: usize,
    pub scale_w: Param<T>,
    pub scale_b: Param<T>,
    pub bias_w: Param<T>,
    pub bias_b: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    cond: Vec<T>,
}

impl<T: Real> CondBatchNorm<T> {
    pub fn new(channels: usize, cond_dim: usize, cond_init_std: f64, rng: &mut impl Rng) -> Self {
        CondBatchNorm {
            channels,
            cond_dim,
            scale_w: Param::normal(&[channels, cond_dim], cond_init_std, rng),
            scale_b: Param::zeros(&[channels], ParamKind::Trainable),
            bias_w: Param::normal(&[channels, cond_dim], cond_init_std, rng),
            bias_b: Param::zeros(&[channels], ParamKind::Trainable),
            running_mean: Param::zeros(&[channels], ParamKind::Buffer),
            running_var: Param::filled(&[channels], T::one(), ParamKind::Buffer),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Per-sample, per-channel `(gamma, beta)` for a batch of condition vectors.
    pub fn modulation(&self, cond: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        assert_eq!(cond.len(), n * self.cond_dim, "condition length");
        let (c, d) = (self.channels, self.cond_dim);
        let mut gamma = vec![T::zero(); n * c];
        let mut beta = vec![T::zero(); n * c];
        for i in 0..n {
            let y = &cond[i * d..(i + 1) * d];
            for ch in 0..c {
                let ws = &self.scale_w.value[ch * d..(ch + 1) * d];
                let wb = &self.bias_w.value[ch * d..(ch + 1) * d];
                let s: T = ws.iter().zip(y).map(|(a, b)| *a * *b).sum();
                let b: T = wb.iter().zip(y).map(|(a, b)| *a * *b).sum();
                gamma[i * c + ch] = T::one() + self.scale_b.value[ch] + s;
                beta[i * c + ch] = self.bias_b.value[ch] + b;
            }
        }
        (gamma, beta)
    }

    pub fn forward(&mut self, x: &Tensor<T>, cond: &[T], train: bool) -> Tensor<T> {
        assert_eq!(x.c, self.channels, "norm channels");
        let (n, c, hw) = (x.n, x.c, x.h * x.w);
        let m = n * hw;
        let eps = cst::<T>(self.eps);
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s = s + x.plane(i, ch).iter().copied().sum::<T>();
                }
                let mu = s / cst(m as f64);
                let mut v = T::zero();
                for i in 0..n {
                    v = v + x.plane(i, ch).iter().map(|&a| (a - mu) * (a - mu)).sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = v / cst(m as f64);
            }
            let mom = cst::<T>(self.momentum);
            let unbias = if m > 1 { cst::<T>(m as f64 / (m as f64 - 1.0)) } else { T::one() };
            for ch in 0..c {
                let rm = &mut self.running_mean.value[ch];
                *rm = (T::one() - mom) * *rm + mom * mean[ch];
                let rv = &mut self.running_var.value[ch];
                *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let (gamma, beta) = self.modulation(cond, n);
        let mut xhat = Tensor::zeros(n, c, x.h, x.w);
        let mut out = Tensor::zeros(n, c, x.h, x.w);
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let (g, b) = (gamma[i * c + ch], beta[i * c + ch]);
                for j in off..off + hw {
                    let xh = (x.data[j] - mean[ch]) * inv_std[ch];
                    xhat.data[j] = xh;
                    out.data[j] = xh * g + b;
                }
            }
        }
        self.cache = train.then(|| NormCache { xhat, inv_std, gamma, cond: cond.to_vec() });
        out
    }

    /// Backward pass through the batch-statistics forward.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let NormCache { xhat, inv_std, gamma, cond } = self.cache.take().expect("norm backward without forward");
        let (n, c, hw, d) = (dy.n, dy.c, dy.h * dy.w, self.cond_dim);
        let m = cst::<T>((n * hw) as f64);
        let mut dx = Tensor::zeros(n, c, dy.h, dy.w);
        for ch in 0..c {
            let mut sum_dxh = T::zero();
            let mut sum_dxh_xh = T::zero();
            for i in 0..n {
                let off = (i * c + ch) * hw;
                let g = gamma[i * c + ch];
                let mut dgamma = T::zero();
                let mut dbeta = T::zero();
                for j in off..off + hw {
                    let gy = dy.data[j];
                    let xh = xhat.data[j];
                    dgamma = dgamma + gy * xh;
                    dbeta = dbeta + gy;
                    let dxh = gy * g;
                    dx.data[j] = dxh;
                    sum_dxh = sum_dxh + dxh;
                    sum_dxh_xh = sum_dxh_xh + dxh * xh;
                }
                self.scale_b.grad[ch] = self.scale_b.grad[ch] + dgamma;
                self.bias_b.grad[ch] = self.bias_b.grad[ch] + dbeta;
                for k in 0..d {
                    let y = cond[i * d + k];
                    self.scale_w.grad[ch * d + k] = self.scale_w.grad[ch * d + k] + dgamma * y;
                    self.bias_w.grad[ch * d + k] = self.bias_w.grad[ch * d + k] + dbeta * y;
                }
            }
            let is = inv_std[ch];
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx.data[j] = is * (dx.data[j] - sum_dxh / m - xhat.data[j] * sum_dxh_xh / m);
                }
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for CondBatchNorm<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "scale_w"), &mut self.scale_w);
        f(&join(prefix, "scale_b"), &mut self.scale_b);
        f(&join(prefix, "bias_w"), &mut self.bias_w);
        f(&join(prefix, "bias_b"), &mut self.bias_b);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
