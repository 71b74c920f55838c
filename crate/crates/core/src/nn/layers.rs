use rand::Rng;

use super::{join, matmul, Module, Param, ParamKind, Real, Tensor};

/// 2D convolution with square kernel, zero padding `k / 2`, computed as
/// im2col followed by a single GEMM over the whole batch.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
    /// Unfolded input of every sample from the last training forward pass.
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k % 2 == 1, "kernel must be odd");
        let fan_in = (cin * k * k) as f64;
        Conv2d {
            cin,
            cout,
            k,
            stride,
            weight: Param::normal(&[cout, cin * k * k], init_gain / fan_in.sqrt(), rng),
            bias: bias.then(|| Param::zeros(&[cout], ParamKind::Trainable)),
            input: None,
            cols: Vec::new(),
        }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kx`, i.e. the
    /// `ox` with `0 <= ox * stride + kx - pad < w`.
    fn valid_cols(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad());
        let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(s) };
        let hi = if w + pad > kx { ((w + pad - kx - 1) / s + 1).min(wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Appends one sample unfolded to `[cin·k·k, ho·wo]` to `cols`.
    fn im2col(&self, src: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut Vec<T>) {
        let (k, s, pad) = (self.k, self.stride, self.pad());
        let zero = T::zero();
        for ci in 0..self.cin {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    for oy in 0..ho {
                        let iy = oy * s + ky;
                        if iy < pad || iy - pad >= h {
                            cols.extend(std::iter::repeat_n(zero, wo));
                            continue;
                        }
                        let row = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                        cols.extend(std::iter::repeat_n(zero, lo));
                        if lo < hi {
                            let first = lo * s + kx - pad;
                            if s == 1 {
                                cols.extend_from_slice(&row[first..first + (hi - lo)]);
                            } else {
                                cols.extend(row[first..].iter().step_by(s).take(hi - lo).copied());
                            }
                        }
                        cols.extend(std::iter::repeat_n(zero, wo - hi));
                    }
                }
            }
        }
    }

    /// Folds `[cin·k·k, ho·wo]` columns back onto one sample, accumulating.
    fn col2im(&self, cols: &[T], dst: &mut [T], h: usize, w: usize, ho: usize, wo: usize) {
        let (k, s, pad) = (self.k, self.stride, self.pad());
        let plane = ho * wo;
        for ci in 0..self.cin {
            let dplane = &mut dst[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src_row = &cols[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    if lo >= hi {
                        continue;
                    }
                    let first = lo * s + kx - pad;
                    for oy in 0..ho {
                        let iy = oy * s + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let drow = &mut dplane[(iy - pad) * w..(iy - pad + 1) * w];
                        let srow = &src_row[oy * wo + lo..oy * wo + hi];
                        if s == 1 {
                            for (d, v) in drow[first..first + (hi - lo)].iter_mut().zip(srow) {
                                *d = *d + *v;
                            }
                        } else {
                            for (d, v) in drow[first..].iter_mut().step_by(s).zip(srow) {
                                *d = *d + *v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let plane = ho * wo;
        let kk = self.cin * self.k * self.k;
        let mut out = Tensor::zeros(x.n, self.cout, ho, wo);
        // Training keeps every sample's columns for the backward pass.
        let mut cols = std::mem::take(&mut self.cols);
        cols.clear();
        for n in 0..x.n {
            let dst = &mut out.data[n * self.cout * plane..(n + 1) * self.cout * plane];
            if self.is_pointwise() {
                matmul(self.cout, kk, plane, &self.weight.value, false, x.sample(n), false, dst, false);
            } else {
                if !train {
                    cols.clear();
                }
                let start = cols.len();
                self.im2col(x.sample(n), x.h, x.w, ho, wo, &mut cols);
                matmul(self.cout, kk, plane, &self.weight.value, false, &cols[start..], false, dst, false);
            }
            if let Some(b) = self.bias.as_ref() {
                for (co, row) in dst.chunks_exact_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v = *v + b.value[co]);
                }
            }
        }
        self.cols = cols;
        self.input = train.then(|| x.clone());
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without cached forward");
        let (ho, wo) = (dy.h, dy.w);
        let plane = ho * wo;
        let kk = self.cin * self.k * self.k;
        if let Some(b) = self.bias.as_mut() {
            for n in 0..dy.n {
                for (co, row) in dy.sample(n).chunks_exact(plane).enumerate() {
                    b.grad[co] = b.grad[co] + row.iter().copied().sum::<T>();
                }
            }
        }
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let cols = std::mem::take(&mut self.cols);
        let mut dcols = vec![T::zero(); kk * plane];
        let xs = x.sample_len();
        for n in 0..x.n {
            let dyn_ = dy.sample(n);
            let dxn = &mut dx.data[n * xs..(n + 1) * xs];
            if self.is_pointwise() {
                matmul(self.cout, plane, kk, dyn_, false, x.sample(n), true, &mut self.weight.grad, true);
                matmul(kk, self.cout, plane, &self.weight.value, true, dyn_, false, dxn, false);
            } else {
                let cols_n = &cols[n * kk * plane..(n + 1) * kk * plane];
                matmul(self.cout, plane, kk, dyn_, false, cols_n, true, &mut self.weight.grad, true);
                matmul(kk, self.cout, plane, &self.weight.value, true, dyn_, false, &mut dcols, false);
                self.col2im(&dcols, dxn, x.h, x.w, ho, wo);
            }
        }
        self.cols = cols;
        dx
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// `x * sigmoid(x)`.
#[derive(Debug, Clone, Default)]
pub struct Silu<T> {
    input: Option<Tensor<T>>,
    /// `1 + exp(-x)` from the last training forward pass.
    denom: Vec<T>,
}

impl<T: Real> Silu<T> {
    pub fn new() -> Self {
        Silu { input: None, denom: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        if !train {
            self.input = None;
            return x.map(|v| v / (T::one() + (-v).exp()));
        }
        self.denom.clear();
        self.denom.extend(x.data.iter().map(|&v| T::one() + (-v).exp()));
        let mut out = x.clone();
        for (o, &d) in out.data.iter_mut().zip(&self.denom) {
            *o = *o / d;
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("silu backward without forward");
        let mut dx = dy.clone();
        for ((g, &v), &d) in dx.data.iter_mut().zip(&x.data).zip(&self.denom) {
            let s = T::one() / d;
            *g = *g * (s + v * s * (T::one() - s));
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Sigmoid<T> {
    pub fn new() -> Self {
        Sigmoid { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let out = x.map(|v| T::one() / (T::one() + (-v).exp()));
        if train {
            self.output = Some(out.clone());
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("sigmoid backward without forward");
        let mut dx = dy.clone();
        for (g, &s) in dx.data.iter_mut().zip(&y.data) {
            *g = *g * s * (T::one() - s);
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upsample2;

impl Upsample2 {
    pub fn forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
        let (h2, w2) = (x.h * 2, x.w * 2);
        let mut out = Tensor::zeros(x.n, x.c, h2, w2);
        for (dst, src) in out.data.chunks_exact_mut(h2 * w2).zip(x.data.chunks_exact(x.h * x.w)) {
            for y in 0..h2 {
                let srow = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
                for (xx, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (dy.h / 2, dy.w / 2);
        let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
        for (dst, src) in dx.data.chunks_exact_mut(h * w).zip(dy.data.chunks_exact(dy.h * dy.w)) {
            for y in 0..dy.h {
                for xx in 0..dy.w {
                    let d = &mut dst[(y / 2) * w + xx / 2];
                    *d = *d + src[y * dy.w + xx];
                }
            }
        }
        dx
    }
}

/// 2x2 average pooling with stride 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct AvgPool2;

impl AvgPool2 {
    pub fn forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.h / 2, x.w / 2);
        let quarter = super::cst::<T>(0.25);
        let mut out = Tensor::zeros(x.n, x.c, h, w);
        for (dst, src) in out.data.chunks_exact_mut(h * w).zip(x.data.chunks_exact(x.h * x.w)) {
            for y in 0..h {
                for xx in 0..w {
                    let a = src[2 * y * x.w + 2 * xx] + src[2 * y * x.w + 2 * xx + 1];
                    let b = src[(2 * y + 1) * x.w + 2 * xx] + src[(2 * y + 1) * x.w + 2 * xx + 1];
                    dst[y * w + xx] = (a + b) * quarter;
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (dy.h * 2, dy.w * 2);
        let quarter = super::cst::<T>(0.25);
        let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
        for (dst, src) in dx.data.chunks_exact_mut(h * w).zip(dy.data.chunks_exact(dy.h * dy.w)) {
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / 2) * dy.w + xx / 2] * quarter;
                }
            }
        }
        dx
    }
}
