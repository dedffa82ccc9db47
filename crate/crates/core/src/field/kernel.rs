use super::{reflect, ScalarField, SpectralConvolver};
use crate::error::{Error, Result};

/// Radius above which [`convolve`] switches from the direct separable sum to
/// the cosine-transform route.
const DIRECT_RADIUS_LIMIT: usize = 32;

/// A separable, symmetric, unit-mass 2-D smoothing kernel.
///
/// The 2-D weights are the outer product of a 1-D profile of length
/// `2·radius + 1`, so `weight(dx, dy) = profile[dx]·profile[dy]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    profile: Vec<f64>,
}

impl Kernel {
    /// Wraps a 1-D profile after renormalizing it to unit sum. The profile must
    /// be odd-length, nonnegative and mirror symmetric.
    pub fn from_profile(profile: Vec<f64>) -> Result<Self> {
        if profile.len().is_multiple_of(2) {
            return Err(Error::param("kernel profile must have odd length"));
        }
        if profile.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("kernel weights must be finite and nonnegative"));
        }
        let n = profile.len();
        for i in 0..n / 2 {
            let (a, b) = (profile[i], profile[n - 1 - i]);
            if (a - b).abs() > 1e-14 * a.abs().max(b.abs()).max(1e-300) {
                return Err(Error::param("kernel profile must be symmetric"));
            }
        }
        let total: f64 = profile.iter().sum();
        if total <= 0.0 {
            return Err(Error::param("kernel has zero mass"));
        }
        let mut profile: Vec<f64> = profile.into_iter().map(|w| w / total).collect();
        // enforce exact mirror symmetry after the division
        for i in 0..n / 2 {
            profile[n - 1 - i] = profile[i];
        }
        Ok(Self {
            radius: n / 2,
            profile,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// The 1-D factor, indexed by offset `-radius..=radius`.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// 1-D weight at signed offset `d`; zero outside the support.
    #[inline]
    pub fn tap(&self, d: isize) -> f64 {
        let r = self.radius as isize;
        if d.abs() > r {
            0.0
        } else {
            self.profile[(d + r) as usize]
        }
    }

    #[inline]
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        self.tap(dx) * self.tap(dy)
    }

    /// Row-major `(2r+1)²` weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.profile.len().pow(2));
        for wy in &self.profile {
            for wx in &self.profile {
                out.push(wy * wx);
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.weights().iter().sum()
    }

    /// Per-axis variance of the kernel, in pixels².
    pub fn variance(&self) -> f64 {
        let r = self.radius as isize;
        (-r..=r).map(|d| (d * d) as f64 * self.tap(d)).sum()
    }

    /// 1-D self-convolution; the result has radius `2r` and a nonnegative
    /// cosine spectrum.
    fn self_convolved(&self) -> Kernel {
        let n = self.profile.len();
        let mut out = vec![0.0; 2 * n - 1];
        for (i, a) in self.profile.iter().enumerate() {
            for (j, b) in self.profile.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Kernel::from_profile(out).expect("self-convolution of a valid kernel is valid")
    }
}

fn sampled_gaussian(std_dev: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let two_var = 2.0 * std_dev * std_dev;
    (-r..=r)
        .map(|d| (-((d * d) as f64) / two_var).exp())
        .collect()
}

/// Pixel-unit Gaussian truncated at `truncation` standard deviations and
/// renormalized to unit mass.
pub fn make_gaussian_kernel(std_dev: f64, truncation: f64) -> Result<Kernel> {
    if !(std_dev.is_finite() && std_dev > 0.0) {
        return Err(Error::param(format!(
            "gaussian standard deviation must be positive, got {std_dev}"
        )));
    }
    if !(truncation.is_finite() && truncation >= 2.0) {
        return Err(Error::param(format!(
            "gaussian truncation must be at least 2 standard deviations, got {truncation}"
        )));
    }
    let radius = (truncation * std_dev).ceil() as usize;
    Kernel::from_profile(sampled_gaussian(std_dev, radius))
}

/// Heat kernel `exp(-|x|²/(4·time))` on coordinates where one unit spans
/// `domain_scale` pixels, i.e. a Gaussian of `√(2·time)·domain_scale` pixels.
///
/// The kernel is built as the self-convolution of the half-time kernel, so
/// its reflective convolution operator is positive semidefinite.
pub fn make_heat_kernel(time: f64, domain_scale: f64) -> Result<Kernel> {
    if !(time.is_finite() && time > 0.0) {
        return Err(Error::param(format!("heat time must be positive, got {time}")));
    }
    if !(domain_scale.is_finite() && domain_scale > 0.0) {
        return Err(Error::param(format!(
            "heat-kernel domain scale must be positive, got {domain_scale}"
        )));
    }
    let std_px = (2.0 * time).sqrt() * domain_scale;
    if 4.0 * std_px < 1.0 {
        return Err(Error::param(format!(
            "heat time {time} at scale {domain_scale} px gives a {std_px:.3} px kernel, \
             narrower than one pixel; increase tau or the domain scale"
        )));
    }
    let half_std = time.sqrt() * domain_scale;
    let half_radius = (4.0 * half_std).ceil().max(1.0) as usize;
    let half = Kernel::from_profile(sampled_gaussian(half_std, half_radius))?;
    Ok(half.self_convolved())
}

/// Reflective-boundary convolution `out(x) = Σ_y K(y)·field(reflect(x − y))`.
///
/// Small kernels are applied as two direct 1-D passes; wide ones through the
/// cosine transform, which diagonalizes the same boundary closure.
pub fn convolve(field: &ScalarField, kernel: &Kernel) -> ScalarField {
    if kernel.radius() <= DIRECT_RADIUS_LIMIT {
        convolve_direct(field, kernel)
    } else {
        SpectralConvolver::new(kernel, field.width(), field.height()).apply(field)
    }
}

/// A kernel bound to one raster shape, choosing the cheaper convolution route
/// once so repeated applications do not re-plan.
#[derive(Clone)]
pub enum Convolver {
    Direct(Kernel),
    Spectral(SpectralConvolver),
}

impl Convolver {
    pub fn new(kernel: &Kernel, width: usize, height: usize) -> Self {
        if kernel.radius() <= DIRECT_RADIUS_LIMIT {
            Convolver::Direct(kernel.clone())
        } else {
            Convolver::Spectral(SpectralConvolver::new(kernel, width, height))
        }
    }

    pub fn apply(&self, field: &ScalarField) -> ScalarField {
        match self {
            Convolver::Direct(k) => convolve_direct(field, k),
            Convolver::Spectral(s) => s.apply(field),
        }
    }
}

/// Separable direct summation, regardless of kernel width.
pub fn convolve_direct(field: &ScalarField, kernel: &Kernel) -> ScalarField {
    let (w, h) = (field.width(), field.height());
    let r = kernel.radius();
    let taps = kernel.profile();
    let src = field.values();

    // out[x] = Σ_k taps[k]·line[reflect(x + r − k)], read from a reflected pad
    let mut pad = vec![0.0; w.max(h) + 2 * r];
    let mut pass = |line: &[f64], out: &mut dyn FnMut(usize, f64)| {
        let n = line.len();
        for (j, p) in pad[..n + 2 * r].iter_mut().enumerate() {
            *p = line[reflect(j as isize - r as isize, n)];
        }
        for x in 0..n {
            let window = &pad[x..x + 2 * r + 1];
            let acc: f64 = taps.iter().rev().zip(window).map(|(t, v)| t * v).sum();
            out(x, acc);
        }
    };

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        pass(row, &mut |x, v| tmp[y * w + x] = v);
    }
    // vertical pass row by row, so the inner loop runs along contiguous memory
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let o = &mut out[y * w..(y + 1) * w];
        for (k, t) in taps.iter().enumerate() {
            let sy = reflect(y as isize + r as isize - k as isize, h);
            let s = &tmp[sy * w..(sy + 1) * w];
            for x in 0..w {
                o[x] += t * s[x];
            }
        }
    }
    ScalarField::new(w, h, out).expect("convolution preserves shape and finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(w: usize, h: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Straight 2-D double loop over the full stencil with reflected indices.
    fn brute_convolve(f: &ScalarField, k: &Kernel) -> ScalarField {
        let r = k.radius() as isize;
        let (w, h) = (f.width(), f.height());
        ScalarField::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = reflect(x as isize - dx, w);
                    let sy = reflect(y as isize - dy, h);
                    acc += k.weight(dx, dy) * f.get(sx, sy);
                }
            }
            acc
        })
    }

    #[test]
    fn gaussian_center_weight_matches_stencil_evaluation() {
        let k = make_gaussian_kernel(1.0, 4.0).unwrap();
        assert_eq!(k.radius(), 4);
        // brute force: 2-D density on the 9x9 stencil, renormalized
        let mut dens = Vec::new();
        for y in -4i32..=4 {
            for x in -4i32..=4 {
                let r2 = (x * x + y * y) as f64;
                dens.push((-r2 / 2.0).exp() / (2.0 * std::f64::consts::PI));
            }
        }
        let total: f64 = dens.iter().sum();
        let center = dens[40] / total;
        assert!((k.weight(0, 0) - center).abs() < 1e-15);
        // unnormalized density peak is 1/(2π) ≈ 0.1592
        assert!((dens[40] - 0.159_154_943).abs() < 1e-8);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_bad_parameters() {
        assert!(make_gaussian_kernel(0.0, 4.0).is_err());
        assert!(make_gaussian_kernel(-1.0, 4.0).is_err());
        assert!(make_gaussian_kernel(1.0, 1.5).is_err());
    }

    #[test]
    fn heat_kernel_second_moment() {
        let k = make_heat_kernel(0.02, 256.0).unwrap();
        let expected_std = (2.0f64 * 0.02).sqrt() * 256.0;
        assert!((expected_std - 51.2).abs() < 1e-9);
        // brute-force second moment over the 2-D stencil
        let r = k.radius() as isize;
        let mut m2 = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                m2 += (dx * dx) as f64 * k.weight(dx, dy);
            }
        }
        assert!((m2.sqrt() - expected_std).abs() / expected_std < 1e-3);
        assert!(k.radius() as f64 >= 4.0 * expected_std);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_too_narrow_is_an_error() {
        let err = make_heat_kernel(1e-8, 10.0).unwrap_err();
        assert!(err.to_string().contains("increase tau"));
        assert!(make_heat_kernel(0.0, 10.0).is_err());
        assert!(make_heat_kernel(0.1, 0.0).is_err());
    }

    #[test]
    fn kernels_are_symmetric_and_nonnegative() {
        for k in [
            make_gaussian_kernel(1.0, 4.0).unwrap(),
            make_gaussian_kernel(3.0, 4.0).unwrap(),
            make_heat_kernel(0.001, 64.0).unwrap(),
        ] {
            let r = k.radius() as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let w = k.weight(dx, dy);
                    assert!(w >= 0.0);
                    assert_eq!(w, k.weight(-dx, dy));
                    assert_eq!(w, k.weight(dx, -dy));
                }
            }
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let f = ScalarField::filled(7, 5, 3.25);
        for k in [
            make_gaussian_kernel(1.0, 4.0).unwrap(),
            make_gaussian_kernel(9.0, 4.0).unwrap(),
        ] {
            let out = convolve(&f, &k);
            assert!(out.values().iter().all(|v| (v - 3.25).abs() < 1e-12));
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let k = make_gaussian_kernel(1.5, 4.0).unwrap();
        let n = 31;
        let mut f = ScalarField::zeros(n, n);
        f.set(15, 15, 1.0);
        let out = convolve(&f, &k);
        let r = k.radius() as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = out.get((15 + dx) as usize, (15 + dy) as usize);
                assert!((v - k.weight(dx, dy)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn separable_matches_brute_force_double_loop() {
        let f = random_field(8, 8, 11);
        for k in [
            make_gaussian_kernel(1.0, 4.0).unwrap(),
            make_gaussian_kernel(3.0, 4.0).unwrap(),
        ] {
            let fast = convolve(&f, &k);
            let slow = brute_convolve(&f, &k);
            for (a, b) in fast.values().iter().zip(slow.values()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn wide_kernel_routes_agree() {
        let f = random_field(20, 13, 5);
        let k = make_heat_kernel(0.02, 256.0).unwrap();
        assert!(k.radius() > DIRECT_RADIUS_LIMIT);
        let spectral = convolve(&f, &k);
        let direct = convolve_direct(&f, &k);
        for (a, b) in spectral.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn long_diffusion_tends_to_the_mean() {
        let f = random_field(16, 16, 9);
        let mean = f.mean();
        let mut prev = f64::INFINITY;
        for t in [0.001, 0.01, 0.1, 1.0] {
            let g = convolve(&f, &make_heat_kernel(t, 16.0).unwrap());
            let var = g.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            assert!(var < prev);
            prev = var;
            assert!((g.mean() - mean).abs() < 1e-12);
        }
        assert!(prev < 1e-6);
    }
}
