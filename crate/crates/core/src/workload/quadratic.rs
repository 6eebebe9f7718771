//! Synthetic strongly convex workload: client `j` owns the loss
//! `f_j(w) = 1/2 ||w - w*_j||^2`, so the global optimum is the mean of the
//! per-client optima and every quantity of interest has a closed form.

use rand::Rng;
use crate::rng::std_normal;

/// Per-client quadratic objectives with optional Gaussian gradient noise.
#[derive(Debug, Clone)]
pub struct QuadraticWorkload {
    pub optima: Vec<Vec<f64>>,
    /// Standard deviation of the total gradient noise: the noise vector is
    /// `N(0, (noise_std^2 / d) I)`, so `E||noise||^2 = noise_std^2`.
    pub noise_std: f64,
}

impl QuadraticWorkload {
    pub fn new(optima: Vec<Vec<f64>>, noise_std: f64) -> Self {
        assert!(!optima.is_empty());
        assert!(noise_std >= 0.0);
        let dim = optima[0].len();
        assert!(optima.iter().all(|o| o.len() == dim));
        QuadraticWorkload { optima, noise_std }
    }

    /// Random per-client optima drawn as `spread * N(0, I)`.
    pub fn random<R: Rng + ?Sized>(
        clients: usize,
        dim: usize,
        spread: f64,
        noise_std: f64,
        rng: &mut R,
    ) -> Self {
        let optima = (0..clients)
            .map(|_| {
                (0..dim)
                    .map(|_| spread * std_normal(rng))
                    .collect()
            })
            .collect();
        QuadraticWorkload::new(optima, noise_std)
    }

    pub fn dim(&self) -> usize {
        self.optima[0].len()
    }

    pub fn clients(&self) -> usize {
        self.optima.len()
    }

    /// Unbiased stochastic gradient for client `j`: `(w - w*_j) + noise`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        client: usize,
        w: &[f64],
        rng: &mut R,
    ) -> Vec<f64> {
        let coord_std = self.noise_std / (self.dim() as f64).sqrt();
        w.iter()
            .zip(&self.optima[client])
            .map(|(wi, oi)| {
                let noise: f64 = if self.noise_std > 0.0 {
                    coord_std * std_normal(rng)
                } else {
                    0.0
                };
                (wi - oi) + noise
            })
            .collect()
    }

    /// Mean of the per-client optima, the minimizer of the global loss.
    pub fn global_optimum(&self) -> Vec<f64> {
        let m = self.clients() as f64;
        let mut mean = vec![0.0; self.dim()];
        for opt in &self.optima {
            for (acc, v) in mean.iter_mut().zip(opt) {
                *acc += v / m;
            }
        }
        mean
    }

    /// Global loss `(1/m) sum_j 1/2 ||w - w*_j||^2`.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let m = self.clients() as f64;
        self.optima
            .iter()
            .map(|opt| {
                0.5 * w
                    .iter()
                    .zip(opt)
                    .map(|(wi, oi)| (wi - oi) * (wi - oi))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / m
    }

    /// Squared norm of the global gradient, `||w - mean(w*_j)||^2`.
    pub fn grad_norm_sq(&self, w: &[f64]) -> f64 {
        let opt = self.global_optimum();
        w.iter()
            .zip(&opt)
            .map(|(wi, oi)| (wi - oi) * (wi - oi))
            .sum()
    }
}
