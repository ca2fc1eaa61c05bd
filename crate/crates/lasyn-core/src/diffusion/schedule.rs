use crate::nn::RngStream;
use crate::{Error, Result};

/// Corruption-schedule parameters: the log-normal noise-level distribution,
/// the loss weighting, and the preconditioning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
    /// Sampler grid bounds; the reference values (0.002, 80) are rescaled
    /// when `sigma_data` differs from 0.5.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::for_sigma_data(0.5)
    }
}

impl NoiseSchedule {
    pub fn for_sigma_data(sigma_data: f64) -> Self {
        let rescale = sigma_data / 0.5;
        NoiseSchedule {
            sigma_data,
            p_mean: -1.2,
            p_std: 1.2,
            sigma_min: 0.002 * rescale,
            sigma_max: 80.0 * rescale,
            rho: 7.0,
        }
    }

    /// Loss weighting `lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2`.
    pub fn lambda(&self, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        let d2 = self.sigma_data * self.sigma_data;
        (s2 + d2) / (s2 * d2)
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let d2 = self.sigma_data * self.sigma_data;
        d2 / (sigma * sigma + d2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        let d2 = self.sigma_data * self.sigma_data;
        sigma * self.sigma_data / (sigma * sigma + d2).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        let d2 = self.sigma_data * self.sigma_data;
        1.0 / (sigma * sigma + d2).sqrt()
    }

    pub fn c_noise(&self, sigma: f64) -> f64 {
        sigma.ln() / 4.0
    }

    /// Draw noise levels: `ln sigma ~ Normal(p_mean, p_std^2)`.
    pub fn sample_sigma(&self, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Invalid("sample_sigma needs n >= 1".into()));
        }
        Ok((0..n)
            .map(|_| (self.p_mean + self.p_std * rng.normal_f64()).exp())
            .collect())
    }

    /// The descending sigma grid for `steps` integration steps; the final
    /// entry is exactly 0, so the grid has `steps + 1` points.
    pub fn sigma_grid(&self, steps: usize) -> Vec<f64> {
        assert!(steps >= 1, "sampler needs at least one step");
        let mut grid = Vec::with_capacity(steps + 1);
        if steps == 1 {
            grid.push(self.sigma_max);
        } else {
            let inv_rho = 1.0 / self.rho;
            let hi = self.sigma_max.powf(inv_rho);
            let lo = self.sigma_min.powf(inv_rho);
            for i in 0..steps {
                let t = i as f64 / (steps - 1) as f64;
                grid.push((hi + t * (lo - hi)).powf(self.rho));
            }
        }
        grid.push(0.0);
        grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    #[test]
    fn preconditioning_identities() {
        let s = NoiseSchedule::default();
        for &sigma in &[0.01, 0.3012, 1.0, 10.0, 80.0] {
            let d2 = s.sigma_data * s.sigma_data;
            assert!((s.c_skip(sigma) - d2 / (sigma * sigma + d2)).abs() < 1e-15);
            // c_skip^2 + (c_out/sigma_data * something)… the defining identity:
            // c_out^2 * (sigma^2 + sigma_data^2) = sigma^2 * sigma_data^2
            let co = s.c_out(sigma);
            assert!((co * co * (sigma * sigma + d2) - sigma * sigma * d2).abs() < 1e-12);
            assert!((s.c_in(sigma) * (sigma * sigma + d2).sqrt() - 1.0).abs() < 1e-12);
            assert!(s.lambda(sigma) > 0.0);
        }
    }

    #[test]
    fn lambda_at_sigma_data_is_eight() {
        // sigma = sigma_data = 0.5: (2 * 0.25) / (0.25 * 0.25) = 8.
        let s = NoiseSchedule::for_sigma_data(0.5);
        assert!((s.lambda(0.5) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_times_c_out_squared_is_one() {
        let s = NoiseSchedule::default();
        for &sigma in &[0.05, 0.5, 2.0, 40.0] {
            let v = s.lambda(sigma) * s.c_out(sigma) * s.c_out(sigma);
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn sigma_draws_positive_with_lognormal_median() {
        let s = NoiseSchedule::default();
        let mut rng = seeded_stream(0, "sigma");
        let mut draws = s.sample_sigma(100_000, &mut rng).unwrap();
        assert!(draws.iter().all(|&x| x > 0.0));
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[draws.len() / 2];
        let expect = (-1.2f64).exp();
        assert!(
            (median - expect).abs() / expect < 0.05,
            "median {median}, expected {expect}"
        );
    }

    #[test]
    fn sigma_draws_deterministic() {
        let s = NoiseSchedule::default();
        let a = s.sample_sigma(64, &mut seeded_stream(5, "sigma")).unwrap();
        let b = s.sample_sigma(64, &mut seeded_stream(5, "sigma")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_is_descending_and_ends_at_zero() {
        let s = NoiseSchedule::default();
        for steps in [1usize, 2, 18, 50] {
            let grid = s.sigma_grid(steps);
            assert_eq!(grid.len(), steps + 1);
            assert_eq!(grid[0], s.sigma_max);
            assert_eq!(*grid.last().unwrap(), 0.0);
            for w in grid.windows(2) {
                assert!(w[0] > w[1], "grid not descending: {w:?}");
            }
            if steps > 1 {
                assert!((grid[steps - 1] - s.sigma_min).abs() < 1e-12);
            }
        }
    }
}
