use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LatentDistribution, ModelConfig};
use crate::nn::{cst, Real, Tensor};

/// `0.5 * Σ(mu² + exp(logvar) − logvar − 1)` for one sample of the batch.
pub fn kl_divergence<T: Real>(q: &LatentDistribution<T>, sample: usize) -> T {
    let half = cst::<T>(0.5);
    q.mu.sample(sample)
        .iter()
        .zip(q.logvar.sample(sample))
        .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - T::one()))
        .sum()
}

/// Sum of squared differences for one sample.
pub fn sse<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>, sample: usize) -> T {
    x.sample(sample).iter().zip(x_hat.sample(sample)).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// `||x − x̂||² + β·KL(q || N(0, I))` for one sample.
pub fn loss<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>, q: &LatentDistribution<T>, beta: f64, sample: usize) -> T {
    assert_eq!(x.shape(), x_hat.shape(), "reconstruction shape");
    sse(x, x_hat, sample) + cst::<T>(beta) * kl_divergence(q, sample)
}

/// `z = mu + exp(logvar / 2) ⊙ eps`.
pub fn reparam_with_noise<T: Real>(q: &LatentDistribution<T>, eps: &Tensor<T>) -> Tensor<T> {
    assert_eq!(eps.shape(), q.mu.shape(), "noise shape");
    let half = cst::<T>(0.5);
    let data =
        q.mu.data.iter().zip(&q.logvar.data).zip(&eps.data).map(|((&m, &lv), &e)| m + (lv * half).exp() * e).collect();
    let [n, c, h, w] = q.mu.shape();
    Tensor::from_vec(n, c, h, w, data)
}

/// Draws standard-normal noise of the latent's shape and reparametrizes.
pub fn reparam_sample<T: Real>(q: &LatentDistribution<T>, rng: &mut impl Rng) -> Tensor<T> {
    reparam_with_noise(q, &standard_normal(q.mu.shape(), rng))
}

pub(crate) fn standard_normal<T: Real>(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            cst::<T>(z)
        })
        .collect();
    Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], data)
}

/// Linear warm-up: `β_target · min(1, epoch / anneal_epochs)`.
pub fn beta_schedule(epoch: usize, cfg: &ModelConfig) -> f64 {
    if cfg.anneal_epochs == 0 {
        return cfg.beta_target;
    }
    cfg.beta_target * (epoch as f64 / cfg.anneal_epochs as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(mu: Vec<f64>, logvar: Vec<f64>) -> LatentDistribution<f64> {
        let n = mu.len();
        LatentDistribution::new(Tensor::from_vec(1, n, 1, 1, mu), Tensor::from_vec(1, n, 1, 1, logvar)).unwrap()
    }

    #[test]
    fn kl_is_zero_at_the_prior() {
        assert_eq!(kl_divergence(&q(vec![0.0; 8], vec![0.0; 8]), 0), 0.0);
    }

    #[test]
    fn kl_of_unit_shift_is_half() {
        assert!((kl_divergence(&q(vec![1.0], vec![0.0]), 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_for_perfect_reconstruction_at_prior() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let qq = q(vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(loss(&x, &x, &qq, 3.0, 0), 0.0);
    }

    #[test]
    fn beta_zero_loss_is_sum_of_squares() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![0.1, 0.5, 0.9]);
        let xh = Tensor::from_vec(1, 1, 1, 3, vec![0.2, 0.5, 0.4]);
        let qq = q(vec![2.0], vec![1.0]);
        let expected = 0.1f64 * 0.1 + 0.0 + 0.5 * 0.5;
        assert_eq!(loss(&x, &xh, &qq, 0.0, 0), sse(&x, &xh, 0));
        assert!((loss(&x, &xh, &qq, 0.0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_reparam_returns_mean() {
        let qq = q(vec![0.3, -1.0], vec![2.0, -4.0]);
        let z = reparam_with_noise(&qq, &Tensor::zeros(1, 2, 1, 1));
        assert_eq!(z, qq.mu);
    }

    #[test]
    fn unit_variance_samples_have_unit_variance() {
        let n = 64;
        let qq = q(vec![0.5; n], vec![0.0; n]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for _ in 0..draws {
            let z = reparam_sample(&qq, &mut rng);
            for i in 0..n {
                sum[i] += z.data[i];
                sq[i] += z.data[i] * z.data[i];
            }
        }
        for i in 0..n {
            let mean = sum[i] / draws as f64;
            let var = sq[i] / draws as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.1, "element {i}: variance {var}");
        }
    }

    #[test]
    fn fixed_seed_gives_identical_samples() {
        let qq = q(vec![0.0; 16], vec![0.5; 16]);
        let a = reparam_sample(&qq, &mut ChaCha8Rng::seed_from_u64(9));
        let b = reparam_sample(&qq, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn beta_anneals_linearly_then_saturates() {
        let cfg = ModelConfig { beta_target: 3.0, anneal_epochs: 20, ..Default::default() };
        assert_eq!(beta_schedule(0, &cfg), 0.0);
        assert_eq!(beta_schedule(10, &cfg), 1.5);
        assert_eq!(beta_schedule(20, &cfg), 3.0);
        assert_eq!(beta_schedule(75, &cfg), 3.0);
    }
}
