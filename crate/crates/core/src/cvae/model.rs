use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{kl_divergence, reparam_with_noise, sse, LatentDistribution, ModelConfig, LOGVAR_CLAMP};
use crate::error::{Error, Result};
use crate::nn::{cst, join, AvgPool2, CondBatchNorm, Conv2d, Module, Param, Real, Sigmoid, Silu, Tensor, Upsample2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    None,
    Down,
    Up,
}

/// Pre-activation residual block:
/// `norm → SiLU → [up] → conv3×3[/2] → norm → SiLU → conv3×3`, plus a skip
/// path of `[pool|up] → conv1×1` when the shape changes.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub resample: Resample,
    norm1: CondBatchNorm<T>,
    act1: Silu<T>,
    conv1: Conv2d<T>,
    norm2: CondBatchNorm<T>,
    act2: Silu<T>,
    conv2: Conv2d<T>,
    skip: Option<Conv2d<T>>,
}

impl<T: Real> ResBlock<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        resample: Resample,
        cond_dim: usize,
        cond_init_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let stride = if resample == Resample::Down { 2 } else { 1 };
        let needs_skip = cin != cout || resample != Resample::None;
        ResBlock {
            resample,
            norm1: CondBatchNorm::new(cin, cond_dim, cond_init_std, rng),
            act1: Silu::new(),
            conv1: Conv2d::new(cin, cout, 3, stride, false, 1.0, rng),
            norm2: CondBatchNorm::new(cout, cond_dim, cond_init_std, rng),
            act2: Silu::new(),
            conv2: Conv2d::new(cout, cout, 3, 1, false, 1.0, rng),
            skip: needs_skip.then(|| Conv2d::new(cin, cout, 1, 1, false, 1.0, rng)),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, cond: &[T], train: bool) -> Tensor<T> {
        let mut h = self.norm1.forward(x, cond, train);
        h = self.act1.forward(&h, train);
        if self.resample == Resample::Up {
            h = Upsample2::forward(&h);
        }
        h = self.conv1.forward(&h, train);
        h = self.norm2.forward(&h, cond, train);
        h = self.act2.forward(&h, train);
        h = self.conv2.forward(&h, train);
        let s = match self.resample {
            Resample::Down => AvgPool2::forward(x),
            Resample::Up => Upsample2::forward(x),
            Resample::None => x.clone(),
        };
        let s = match self.skip.as_mut() {
            Some(conv) => conv.forward(&s, train),
            None => s,
        };
        h.add_assign(&s);
        h
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = self.conv2.backward(dy);
        g = self.act2.backward(&g);
        g = self.norm2.backward(&g);
        g = self.conv1.backward(&g);
        if self.resample == Resample::Up {
            g = Upsample2::backward(&g);
        }
        g = self.act1.backward(&g);
        let mut dx = self.norm1.backward(&g);
        let ds = match self.skip.as_mut() {
            Some(conv) => conv.backward(dy),
            None => dy.clone(),
        };
        let ds = match self.resample {
            Resample::Down => AvgPool2::backward(&ds),
            Resample::Up => Upsample2::backward(&ds),
            Resample::None => ds,
        };
        dx.add_assign(&ds);
        dx
    }
}

impl<T: Real> Module<T> for ResBlock<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(s) = self.skip.as_mut() {
            s.visit(&join(prefix, "skip"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct Encoder<T> {
    stem: Conv2d<T>,
    blocks: Vec<ResBlock<T>>,
    head_norm: CondBatchNorm<T>,
    head_act: Silu<T>,
    mu_head: Conv2d<T>,
    logvar_head: Conv2d<T>,
    clamped: Vec<bool>,
}

impl<T: Real> Encoder<T> {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let widths = cfg.stage_widths();
        let mut blocks = Vec::new();
        let mut cin = cfg.base_width;
        for &w in &widths {
            blocks.push(ResBlock::new(cin, w, Resample::Down, cfg.condition_dim, cfg.cond_init_std, rng));
            for _ in 1..cfg.n_resblocks {
                blocks.push(ResBlock::new(w, w, Resample::None, cfg.condition_dim, cfg.cond_init_std, rng));
            }
            cin = w;
        }
        Encoder {
            stem: Conv2d::new(cfg.channels, cfg.base_width, 3, 1, false, 1.0, rng),
            blocks,
            head_norm: CondBatchNorm::new(cin, cfg.condition_dim, cfg.cond_init_std, rng),
            head_act: Silu::new(),
            mu_head: Conv2d::new(cin, cfg.latent_channels, 3, 1, true, 1.0, rng),
            logvar_head: Conv2d::new(cin, cfg.latent_channels, 3, 1, true, 0.1, rng),
            clamped: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, cond: &[T], train: bool) -> LatentDistribution<T> {
        let mut h = self.stem.forward(x, train);
        for b in self.blocks.iter_mut() {
            h = b.forward(&h, cond, train);
        }
        h = self.head_norm.forward(&h, cond, train);
        h = self.head_act.forward(&h, train);
        let mu = self.mu_head.forward(&h, train);
        let raw = self.logvar_head.forward(&h, train);
        let lim = cst::<T>(LOGVAR_CLAMP);
        self.clamped = raw.data.iter().map(|v| *v < -lim || *v > lim).collect();
        let logvar = raw.map(|v| v.max(-lim).min(lim));
        LatentDistribution { mu, logvar }
    }

    fn backward(&mut self, dmu: &Tensor<T>, dlogvar: &Tensor<T>) {
        let mut dlv = dlogvar.clone();
        for (g, c) in dlv.data.iter_mut().zip(&self.clamped) {
            if *c {
                *g = T::zero();
            }
        }
        let mut dh = self.mu_head.backward(dmu);
        dh.add_assign(&self.logvar_head.backward(&dlv));
        dh = self.head_act.backward(&dh);
        dh = self.head_norm.backward(&dh);
        for b in self.blocks.iter_mut().rev() {
            dh = b.backward(&dh);
        }
        self.stem.backward(&dh);
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head_norm.visit(&join(prefix, "head_norm"), f);
        self.mu_head.visit(&join(prefix, "mu_head"), f);
        self.logvar_head.visit(&join(prefix, "logvar_head"), f);
    }
}

#[derive(Debug, Clone)]
struct Decoder<T> {
    input: Conv2d<T>,
    blocks: Vec<ResBlock<T>>,
    out_norm: CondBatchNorm<T>,
    out_act: Silu<T>,
    out_conv: Conv2d<T>,
    sigmoid: Sigmoid<T>,
}

impl<T: Real> Decoder<T> {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.stage_widths();
        let mut blocks = Vec::new();
        let plan = [(w[3], w[2]), (w[2], w[1]), (w[1], w[0]), (w[0], w[0])];
        for &(cin, cout) in &plan {
            blocks.push(ResBlock::new(cin, cout, Resample::Up, cfg.condition_dim, cfg.cond_init_std, rng));
            for _ in 1..cfg.n_resblocks {
                blocks.push(ResBlock::new(cout, cout, Resample::None, cfg.condition_dim, cfg.cond_init_std, rng));
            }
        }
        Decoder {
            input: Conv2d::new(cfg.latent_channels, w[3], 3, 1, false, 1.0, rng),
            blocks,
            out_norm: CondBatchNorm::new(w[0], cfg.condition_dim, cfg.cond_init_std, rng),
            out_act: Silu::new(),
            out_conv: Conv2d::new(w[0], cfg.channels, 3, 1, true, 1.0, rng),
            sigmoid: Sigmoid::new(),
        }
    }

    fn forward(&mut self, z: &Tensor<T>, cond: &[T], train: bool) -> Tensor<T> {
        let mut h = self.input.forward(z, train);
        for b in self.blocks.iter_mut() {
            h = b.forward(&h, cond, train);
        }
        h = self.out_norm.forward(&h, cond, train);
        h = self.out_act.forward(&h, train);
        h = self.out_conv.forward(&h, train);
        self.sigmoid.forward(&h, train)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = self.sigmoid.backward(dy);
        g = self.out_conv.backward(&g);
        g = self.out_act.backward(&g);
        g = self.out_norm.backward(&g);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.input.backward(&g)
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.input.visit(&join(prefix, "input"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.out_norm.visit(&join(prefix, "out_norm"), f);
        self.out_conv.visit(&join(prefix, "out_conv"), f);
    }
}

/// Batch-mean loss terms of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub sse: f64,
    pub kl: f64,
}

/// Encoder/decoder pair sharing one [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Cvae<T> {
    pub config: ModelConfig,
    encoder: Encoder<T>,
    decoder: Decoder<T>,
}

impl<T: Real> Cvae<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(&config, &mut rng);
        let decoder = Decoder::new(&config, &mut rng);
        Ok(Cvae { config, encoder, decoder })
    }

    fn check_input(&self, x: &Tensor<T>, cond: &[T]) -> Result<()> {
        let w = self.config.input_width;
        if x.c != self.config.channels || x.h != w || x.w != w {
            return Err(Error::shape([x.n, self.config.channels, w, w], x.shape()));
        }
        self.check_cond(x.n, cond)
    }

    fn check_cond(&self, n: usize, cond: &[T]) -> Result<()> {
        if cond.len() != n * self.config.condition_dim {
            return Err(Error::shape(n * self.config.condition_dim, cond.len()));
        }
        if cond.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("condition vector has non-finite entries".into()));
        }
        Ok(())
    }

    /// Posterior `q(z | x, y)` for a batch `x: [N, c, W, W]`, `cond: [N, D]`.
    pub fn encode(&mut self, x: &Tensor<T>, cond: &[T], train: bool) -> Result<LatentDistribution<T>> {
        self.check_input(x, cond)?;
        Ok(self.encoder.forward(x, cond, train))
    }

    /// Reconstruction `D(z, y)` in `[0, 1]`.
    pub fn decode(&mut self, z: &Tensor<T>, cond: &[T], train: bool) -> Result<Tensor<T>> {
        let [lc, ls, _] = self.config.latent_shape();
        if z.c != lc || z.h != ls || z.w != ls {
            return Err(Error::shape([z.n, lc, ls, ls], z.shape()));
        }
        self.check_cond(z.n, cond)?;
        Ok(self.decoder.forward(z, cond, train))
    }

    /// Decodes the posterior mean (no sampling), in inference mode.
    pub fn reconstruct_mean(&mut self, x: &Tensor<T>, cond: &[T]) -> Result<Tensor<T>> {
        let q = self.encode(x, cond, false)?;
        self.decode(&q.mu, cond, false)
    }

    /// Training-mode forward with fixed reparametrization noise; returns the
    /// batch-mean loss terms without touching gradients.
    pub fn forward_loss(&mut self, x: &Tensor<T>, cond: &[T], eps: &Tensor<T>, beta: f64) -> Result<LossParts> {
        let (parts, _, _) = self.forward_train(x, cond, eps, beta)?;
        Ok(parts)
    }

    fn forward_train(
        &mut self,
        x: &Tensor<T>,
        cond: &[T],
        eps: &Tensor<T>,
        beta: f64,
    ) -> Result<(LossParts, LatentDistribution<T>, Tensor<T>)> {
        let q = self.encode(x, cond, true)?;
        let z = reparam_with_noise(&q, eps);
        let x_hat = self.decode(&z, cond, true)?;
        let n = x.n as f64;
        let (mut total_sse, mut total_kl) = (0.0, 0.0);
        for i in 0..x.n {
            total_sse += sse(x, &x_hat, i).to_f64().unwrap();
            total_kl += kl_divergence(&q, i).to_f64().unwrap();
        }
        let parts = LossParts { loss: (total_sse + beta * total_kl) / n, sse: total_sse / n, kl: total_kl / n };
        Ok((parts, q, x_hat))
    }

    /// Forward and backward for the batch-mean objective
    /// `mean_i(||x_i − x̂_i||² + β·KL_i)`; gradients accumulate into parameters.
    pub fn train_step(&mut self, x: &Tensor<T>, cond: &[T], eps: &Tensor<T>, beta: f64) -> Result<LossParts> {
        let (parts, q, x_hat) = self.forward_train(x, cond, eps, beta)?;
        let inv_n = cst::<T>(1.0 / x.n as f64);
        let two = cst::<T>(2.0);
        let half = cst::<T>(0.5);
        let b = cst::<T>(beta);
        let mut dxh = x_hat.clone();
        for (g, &xv) in dxh.data.iter_mut().zip(&x.data) {
            *g = two * (*g - xv) * inv_n;
        }
        let dz = self.decoder.backward(&dxh);
        let mut dmu = dz.clone();
        let mut dlv = dz;
        for i in 0..dmu.data.len() {
            let (m, lv, e) = (q.mu.data[i], q.logvar.data[i], eps.data[i]);
            dmu.data[i] = dmu.data[i] + b * m * inv_n;
            let sigma = (lv * half).exp();
            dlv.data[i] = dlv.data[i] * e * half * sigma + b * half * (lv.exp() - T::one()) * inv_n;
        }
        self.encoder.backward(&dmu, &dlv);
        Ok(parts)
    }
}

impl<T: Real> Module<T> for Cvae<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}
