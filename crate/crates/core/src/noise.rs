//! Seeded Poisson and multiplicative Gamma corruption.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`). Every pixel draws from
//! its own stream: the generator is keyed by `seed` (expanded by
//! `SeedableRng::seed_from_u64`) and the ChaCha stream id is set to the
//! row-major pixel index. Output is therefore independent of traversal order.
//! Gamma variates use Marsaglia–Tsang squeeze/rejection (with the `U^{1/L}`
//! boost for `L < 1`) and Poisson variates use `rand_distr::Poisson`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::field::ScalarField;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    None,
    Poisson,
    /// Multiplicative Gamma speckle with `looks` = shape `L`, scale `1/L`.
    Gamma { looks: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn apply(&self, clean: &ScalarField) -> Result<ScalarField> {
        match self.kind {
            NoiseKind::None => Ok(clean.clone()),
            NoiseKind::Poisson => apply_poisson(clean, self.seed),
            NoiseKind::Gamma { looks } => {
                let eta = sample_gamma_field(clean.width(), clean.height(), looks, self.seed)?;
                apply_multiplicative(clean, &eta)
            }
        }
    }
}

fn pixel_rng(base: &ChaCha8Rng, index: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(index as u64);
    rng
}

/// I.i.d. `Gamma(shape = looks, scale = 1/looks)` samples (mean 1, variance `1/looks`).
pub fn sample_gamma_field(width: usize, height: usize, looks: f64, seed: u64) -> Result<ScalarField> {
    if !(looks.is_finite() && looks > 0.0) {
        return Err(Error::param(format!("gamma looks must be positive, got {looks}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::param("noise field must be non-empty"));
    }
    let dist = Gamma::new(looks, 1.0 / looks).map_err(|e| Error::param(e.to_string()))?;
    let base = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height)
        .map(|i| {
            let mut rng = pixel_rng(&base, i);
            // a zero draw is possible in floating point for tiny L; redraw
            loop {
                let v: f64 = dist.sample(&mut rng);
                if v > 0.0 {
                    break v;
                }
            }
        })
        .collect();
    ScalarField::new(width, height, data)
}

/// Pointwise `clean · eta`. No clamping happens here.
pub fn apply_multiplicative(clean: &ScalarField, eta: &ScalarField) -> Result<ScalarField> {
    clean.check_shape(eta, "multiplicative noise")?;
    if clean.values().iter().any(|v| *v < 0.0) {
        return Err(Error::param("clean image must be nonnegative"));
    }
    Ok(clean.zip_map(eta, |g, n| g * n))
}

/// Independent `Poisson(clean(x))` counts, reading pixel values directly as means.
pub fn apply_poisson(clean: &ScalarField, seed: u64) -> Result<ScalarField> {
    if let Some(i) = clean.values().iter().position(|v| *v < 0.0) {
        return Err(Error::param(format!(
            "poisson mean must be nonnegative (pixel {i} is {})",
            clean.values()[i]
        )));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let data = clean
        .values()
        .iter()
        .enumerate()
        .map(|(i, &mean)| {
            if mean == 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(mean).map_err(|e| Error::param(e.to_string()))?;
            Ok(dist.sample(&mut pixel_rng(&base, i)))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScalarField::new(clean.width(), clean.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gamma_is_deterministic_and_seed_sensitive() {
        let a = sample_gamma_field(16, 16, 4.0, 7).unwrap();
        let b = sample_gamma_field(16, 16, 4.0, 7).unwrap();
        let c = sample_gamma_field(16, 16, 4.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn gamma_rejects_nonpositive_looks() {
        assert!(sample_gamma_field(4, 4, 0.0, 1).is_err());
        assert!(sample_gamma_field(4, 4, -2.0, 1).is_err());
    }

    #[test]
    fn gamma_moments_for_several_looks() {
        for looks in [1.0, 4.0, 10.0] {
            let eta = sample_gamma_field(1000, 1000, looks, 42).unwrap();
            let (mean, var) = moments(eta.values());
            assert!((mean - 1.0).abs() < 0.01, "L={looks} mean={mean}");
            let target = 1.0 / looks;
            assert!((var - target).abs() < 0.05 * target, "L={looks} var={var}");
        }
    }

    #[test]
    fn gamma_with_one_look_is_exponential() {
        let eta = sample_gamma_field(1000, 1000, 1.0, 3).unwrap();
        let below = eta.values().iter().filter(|v| **v <= 1.0).count() as f64 / 1e6;
        let cdf = 1.0 - (-1.0f64).exp();
        assert!((below - cdf).abs() < 0.01 * cdf);
    }

    #[test]
    fn gamma_shape_below_one_is_supported() {
        let eta = sample_gamma_field(300, 300, 0.5, 1).unwrap();
        let (mean, _) = moments(eta.values());
        assert!((mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn multiplicative_hand_example() {
        let clean = ScalarField::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eta = ScalarField::new(2, 2, vec![2.0, 1.0, 1.0, 0.5]).unwrap();
        let out = apply_multiplicative(&clean, &eta).unwrap();
        assert_eq!(out.values(), &[2.0, 2.0, 3.0, 2.0]);
        assert_eq!(apply_multiplicative(&clean, &ScalarField::ones(2, 2)).unwrap(), clean);
        let zero = ScalarField::zeros(2, 2);
        assert_eq!(apply_multiplicative(&zero, &eta).unwrap(), zero);
        assert!(apply_multiplicative(&clean, &ScalarField::ones(3, 2)).is_err());
    }

    #[test]
    fn poisson_moments_and_degenerate_mean() {
        let clean = ScalarField::filled(1000, 1000, 100.0);
        let noisy = apply_poisson(&clean, 5).unwrap();
        let (mean, var) = moments(noisy.values());
        assert!((mean - 100.0).abs() < 1.0);
        assert!((var - 100.0).abs() < 3.0);
        assert!(noisy.values().iter().all(|v| v.fract() == 0.0));

        let zero = ScalarField::zeros(8, 8);
        assert_eq!(apply_poisson(&zero, 5).unwrap(), zero);
    }

    #[test]
    fn poisson_determinism_and_errors() {
        let clean = ScalarField::from_fn(12, 9, |x, y| (x * y) as f64 + 0.5);
        assert_eq!(apply_poisson(&clean, 1).unwrap(), apply_poisson(&clean, 1).unwrap());
        assert_ne!(apply_poisson(&clean, 1).unwrap(), apply_poisson(&clean, 2).unwrap());
        let bad = ScalarField::new(2, 1, vec![1.0, -1.0]).unwrap();
        assert!(apply_poisson(&bad, 1).is_err());
    }

    #[test]
    fn spec_none_is_identity() {
        let clean = ScalarField::filled(3, 3, 9.0);
        let spec = NoiseSpec { kind: NoiseKind::None, seed: 0 };
        assert_eq!(spec.apply(&clean).unwrap(), clean);
    }
}
