//! The joint energy and its ingredients.
//!
//! ```text
//! E(c, b, g, u) = Σ_i λ_i Σ_x u_i(x) e_i(x)                      fitting
//!               + μ √(π/τ) Σ_i Σ_{j≠i} ⟨u_i, G_τ ∗ u_j⟩            length
//!               + γ Σ_x (g − f log g)                            I-divergence
//!               + ν Σ_x α √(|∇g|² + ε²)                          weighted TV
//! e_i(x)        = Σ_y G_ρ(y − x) (g(x) − b(y) c_i)²
//! ```

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::field::{
    convolve, gradient, make_gaussian_kernel, make_heat_kernel, Convolver, Kernel, ScalarField,
};

/// Gaussian kernels are truncated at this many standard deviations.
pub const KERNEL_TRUNCATION: f64 = 4.0;

/// Every tunable of the joint model and of the alternating solver.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Per-phase fitting weights; length must equal `n_phases`.
    pub lambdas: Vec<f64>,
    pub mu: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Std-dev of the local fitting window, pixels.
    pub rho: f64,
    /// Heat time of the length kernel in normalized units.
    pub tau: f64,
    /// Pixels per normalized unit for `tau`; `None` means the image long side.
    pub tau_scale: Option<f64>,
    /// Std-dev of the pre-smoothing in the gray-level indicator, pixels.
    pub sigma: f64,
    /// Exponent of the gray-level indicator.
    pub p: f64,
    pub dt: f64,
    pub c0: f64,
    pub eta_relax: f64,
    pub eps_tv: f64,
    pub g_floor: f64,
    pub tol1: f64,
    pub tol2: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub n_phases: usize,
    /// When false, `b` stays at its initial value.
    pub update_bias: bool,
    /// When false, `g` stays at the (floored) input image.
    pub update_denoised: bool,
    /// Input intensities are divided by this before the solver sees them, so
    /// the weights act on `[0, 1]` data when the input is 8-bit.
    pub intensity_scale: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 1.0],
            mu: 1e-9 * 255.0 * 255.0,
            gamma: 0.1,
            nu: 1.0,
            rho: 3.0,
            tau: 0.02,
            tau_scale: None,
            sigma: 1.0,
            p: 1.3,
            dt: 0.1,
            c0: 1.0,
            eta_relax: 0.99,
            eps_tv: 1e-2,
            g_floor: 1e-3,
            tol1: 1e-8,
            tol2: 1e-3,
            max_outer: 500,
            max_inner: 200,
            n_phases: 2,
            update_bias: true,
            update_denoised: true,
            intensity_scale: 255.0,
        }
    }
}

impl ModelParams {
    /// Defaults with `n` phases, all weighted 1.
    pub fn with_phases(n: usize) -> Self {
        Self {
            lambdas: vec![1.0; n],
            n_phases: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be nonnegative, got {v}")))
            }
        };
        if self.n_phases < 2 {
            return Err(Error::param(format!(
                "n_phases must be at least 2, got {}",
                self.n_phases
            )));
        }
        if self.n_phases > u16::MAX as usize {
            return Err(Error::param("too many phases"));
        }
        if self.lambdas.len() != self.n_phases {
            return Err(Error::param(format!(
                "{} lambda values for {} phases",
                self.lambdas.len(),
                self.n_phases
            )));
        }
        for (i, l) in self.lambdas.iter().enumerate() {
            nonneg(&format!("lambda[{i}]"), *l)?;
        }
        nonneg("mu", self.mu)?;
        nonneg("gamma", self.gamma)?;
        nonneg("nu", self.nu)?;
        positive("rho", self.rho)?;
        positive("tau", self.tau)?;
        if let Some(s) = self.tau_scale {
            positive("tau_scale", s)?;
        }
        positive("sigma", self.sigma)?;
        positive("p", self.p)?;
        positive("dt", self.dt)?;
        positive("c0", self.c0)?;
        if !(0.0..=1.0).contains(&self.eta_relax) {
            return Err(Error::param(format!(
                "eta must lie in [0, 1], got {}",
                self.eta_relax
            )));
        }
        positive("eps_tv", self.eps_tv)?;
        positive("g_floor", self.g_floor)?;
        nonneg("tol1", self.tol1)?;
        nonneg("tol2", self.tol2)?;
        positive("intensity_scale", self.intensity_scale)?;
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::param("iteration caps must be at least 1"));
        }
        Ok(())
    }

    pub fn heat_scale(&self, width: usize, height: usize) -> f64 {
        self.tau_scale
            .unwrap_or_else(|| width.max(height) as f64)
    }
}

impl fmt::Display for ModelParams {
    /// One `key = value` line per parameter, in config-file syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lambdas: Vec<String> = self.lambdas.iter().map(|l| l.to_string()).collect();
        writeln!(f, "n_phases = {}", self.n_phases)?;
        writeln!(f, "lambda = {}", lambdas.join(","))?;
        writeln!(f, "mu = {}", self.mu)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "nu = {}", self.nu)?;
        writeln!(f, "rho = {}", self.rho)?;
        writeln!(f, "tau = {}", self.tau)?;
        match self.tau_scale {
            Some(s) => writeln!(f, "tau_scale = {s}")?,
            None => writeln!(f, "tau_scale = auto")?,
        }
        writeln!(f, "sigma = {}", self.sigma)?;
        writeln!(f, "p = {}", self.p)?;
        writeln!(f, "dt = {}", self.dt)?;
        writeln!(f, "c0 = {}", self.c0)?;
        writeln!(f, "eta = {}", self.eta_relax)?;
        writeln!(f, "eps_tv = {}", self.eps_tv)?;
        writeln!(f, "g_floor = {}", self.g_floor)?;
        writeln!(f, "tol1 = {}", self.tol1)?;
        writeln!(f, "tol2 = {}", self.tol2)?;
        writeln!(f, "max_outer = {}", self.max_outer)?;
        writeln!(f, "max_inner = {}", self.max_inner)?;
        writeln!(f, "update_bias = {}", self.update_bias)?;
        writeln!(f, "update_denoised = {}", self.update_denoised)?;
        write!(f, "intensity_scale = {}", self.intensity_scale)
    }
}

/// A pointwise partition of the grid into `n` phases, stored as a label map.
/// `mask(i)` materializes the binary characteristic field of phase `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorSet {
    width: usize,
    height: usize,
    n: usize,
    labels: Vec<u16>,
}

impl IndicatorSet {
    pub fn from_labels(width: usize, height: usize, n: usize, labels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("partition must be non-empty"));
        }
        if n == 0 || n > u16::MAX as usize {
            return Err(Error::param(format!("invalid phase count {n}")));
        }
        if labels.len() != width * height {
            return Err(Error::dims(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l as usize >= n) {
            return Err(Error::contract(format!("label {l} out of range for {n} phases")));
        }
        Ok(Self {
            width,
            height,
            n,
            labels,
        })
    }

    /// Builds the partition from `n` binary masks that sum to one everywhere.
    pub fn from_masks(masks: &[ScalarField]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::param("at least one mask is required"))?;
        let (w, h) = (first.width(), first.height());
        let mut labels = vec![u16::MAX; w * h];
        for (i, m) in masks.iter().enumerate() {
            first.check_shape(m, "indicator masks")?;
            for (px, v) in m.values().iter().enumerate() {
                if *v == 1.0 {
                    if labels[px] != u16::MAX {
                        return Err(Error::contract(format!(
                            "pixel {px} belongs to more than one phase"
                        )));
                    }
                    labels[px] = i as u16;
                } else if *v != 0.0 {
                    return Err(Error::contract(format!("mask {i} is not binary at pixel {px}")));
                }
            }
        }
        if let Some(px) = labels.iter().position(|l| *l == u16::MAX) {
            return Err(Error::contract(format!("pixel {px} belongs to no phase")));
        }
        Self::from_labels(w, h, masks.len(), labels)
    }

    pub fn uniform(width: usize, height: usize, n: usize, phase: u16) -> Result<Self> {
        Self::from_labels(width, height, n, vec![phase; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_phases(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn mask(&self, phase: usize) -> ScalarField {
        let data = self
            .labels
            .iter()
            .map(|l| if *l as usize == phase { 1.0 } else { 0.0 })
            .collect();
        ScalarField::new(self.width, self.height, data).expect("mask shape")
    }

    pub fn masks(&self) -> Vec<ScalarField> {
        (0..self.n).map(|i| self.mask(i)).collect()
    }

    /// Pixel count per phase.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for l in &self.labels {
            c[*l as usize] += 1;
        }
        c
    }

    /// Relabels every pixel through `map[old] = new`.
    pub fn permuted(&self, map: &[usize]) -> Result<Self> {
        if map.len() != self.n {
            return Err(Error::param("permutation length differs from phase count"));
        }
        let labels = self.labels.iter().map(|l| map[*l as usize] as u16).collect();
        Self::from_labels(self.width, self.height, self.n, labels)
    }

    /// `√(Σ_x Σ_i (u_i − v_i)²)`; each changed pixel contributes 2.
    pub fn l2_distance(&self, other: &IndicatorSet) -> f64 {
        let changed = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count();
        (2.0 * changed as f64).sqrt()
    }

    pub(crate) fn check_grid(&self, field: &ScalarField) -> Result<()> {
        if field.width() == self.width && field.height() == self.height {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "partition is {}x{}, field is {}x{}",
                self.width,
                self.height,
                field.width(),
                field.height()
            )))
        }
    }
}

/// Region constants, bias field, denoised image and partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SegState {
    pub c: Vec<f64>,
    pub b: ScalarField,
    pub g: ScalarField,
    pub u: IndicatorSet,
}

impl SegState {
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if self.c.len() != self.u.n_phases() || self.u.n_phases() != params.n_phases {
            return Err(Error::contract(format!(
                "state has {} constants and {} phases, params expect {}",
                self.c.len(),
                self.u.n_phases(),
                params.n_phases
            )));
        }
        self.u.check_grid(&self.b)?;
        self.u.check_grid(&self.g)?;
        if self.c.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("non-finite region constant"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub fit: f64,
    pub length: f64,
    pub idiv: f64,
    pub tv: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(fit: f64, length: f64, idiv: f64, tv: f64) -> Self {
        Self {
            fit,
            length,
            idiv,
            tv,
            total: fit + length + idiv + tv,
        }
    }
}

/// Heat-kernel perimeter functional `√(π/τ) ⟨u_i, G_τ ∗ u_j⟩` bound to a raster.
///
/// With `τ` in normalized units and sums over unit pixels, the prefactor is
/// evaluated with the heat time converted to pixel units, `τ·scale²`, so the
/// functional returns lengths in pixels.
#[derive(Clone)]
pub struct LengthTerm {
    kernel: Kernel,
    conv: Convolver,
    coeff: f64,
}

impl LengthTerm {
    pub fn new(tau: f64, domain_scale: f64, width: usize, height: usize) -> Result<Self> {
        let kernel = make_heat_kernel(tau, domain_scale)?;
        let conv = Convolver::new(&kernel, width, height);
        let coeff = (PI / (tau * domain_scale * domain_scale)).sqrt();
        Ok(Self {
            kernel,
            conv,
            coeff,
        })
    }

    pub fn for_params(params: &ModelParams, width: usize, height: usize) -> Result<Self> {
        Self::new(params.tau, params.heat_scale(width, height), width, height)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// `√(π/τ)` in pixel units.
    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn smooth(&self, field: &ScalarField) -> ScalarField {
        self.conv.apply(field)
    }

    /// `G_τ ∗ u_j` for every phase.
    pub fn smoothed_phases(&self, u: &IndicatorSet) -> Vec<ScalarField> {
        u.masks().iter().map(|m| self.smooth(m)).collect()
    }

    /// Unweighted `√(π/τ) Σ_i Σ_{j≠i} ⟨u_i, G_τ ∗ u_j⟩` from precomputed smoothings.
    pub fn length_from(&self, u: &IndicatorSet, smoothed: &[ScalarField]) -> f64 {
        let n = u.n_phases();
        let mut acc = 0.0;
        for (px, l) in u.labels().iter().enumerate() {
            let i = *l as usize;
            for (j, s) in smoothed.iter().enumerate().take(n) {
                if j != i {
                    acc += s.values()[px];
                }
            }
        }
        self.coeff * acc
    }

    pub fn length(&self, u: &IndicatorSet) -> f64 {
        self.length_from(u, &self.smoothed_phases(u))
    }
}

/// `((G_σ ∗ f) / max(G_σ ∗ f))^p`, with values in `(0, 1]`.
pub fn compute_alpha(f: &ScalarField, sigma: f64, p: f64) -> Result<ScalarField> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::param(format!("alpha exponent must be positive, got {p}")));
    }
    if f.values().iter().any(|v| *v < 0.0) {
        return Err(Error::contract("gray-level indicator needs a nonnegative image"));
    }
    let kernel = make_gaussian_kernel(sigma, KERNEL_TRUNCATION)?;
    let smooth = convolve(f, &kernel);
    let m = smooth.max();
    if m <= 0.0 {
        return Err(Error::Degenerate("image is identically zero".into()));
    }
    Ok(smooth.map(|v| (v.max(0.0) / m).powf(p)))
}

/// The smoothed quantities of `b` shared by every `e_i`.
#[derive(Clone, Debug)]
pub struct BiasMoments {
    /// `1_G = G_ρ ∗ 1`.
    pub one_g: ScalarField,
    /// `G_ρ ∗ b`.
    pub gb: ScalarField,
    /// `G_ρ ∗ b²`.
    pub gb2: ScalarField,
}

impl BiasMoments {
    pub fn new(b: &ScalarField, kernel: &Kernel) -> Self {
        let ones = ScalarField::ones(b.width(), b.height());
        Self {
            one_g: convolve(&ones, kernel),
            gb: convolve(b, kernel),
            gb2: convolve(&b.map(|v| v * v), kernel),
        }
    }

    /// `e(x) = g²·1_G − 2 g c (G_ρ∗b) + c² (G_ρ∗b²)`, clamped at zero.
    pub fn fitting_field(&self, g: &ScalarField, c: f64) -> ScalarField {
        let (og, gb, gb2) = (self.one_g.values(), self.gb.values(), self.gb2.values());
        let data = g
            .values()
            .iter()
            .enumerate()
            .map(|(i, &gv)| (gv * gv * og[i] - 2.0 * gv * c * gb[i] + c * c * gb2[i]).max(0.0))
            .collect();
        ScalarField::new(g.width(), g.height(), data).expect("fitting field shape")
    }
}

/// `e_i(x) = Σ_y G_ρ(y − x)(g(x) − b(y)·c_i)²` through three convolutions.
pub fn fitting_field(g: &ScalarField, b: &ScalarField, c_i: f64, rho: f64) -> Result<ScalarField> {
    g.check_shape(b, "fitting field")?;
    let kernel = make_gaussian_kernel(rho, KERNEL_TRUNCATION)?;
    Ok(BiasMoments::new(b, &kernel).fitting_field(g, c_i))
}

/// `Σ_i λ_i ⟨u_i, e_i⟩` given precomputed fitting fields.
pub fn weighted_fit(u: &IndicatorSet, e: &[ScalarField], lambdas: &[f64]) -> f64 {
    u.labels()
        .iter()
        .enumerate()
        .map(|(px, l)| {
            let i = *l as usize;
            lambdas[i] * e[i].values()[px]
        })
        .sum()
}

pub fn fitting_energy(state: &SegState, params: &ModelParams) -> Result<f64> {
    state.check(params)?;
    let kernel = make_gaussian_kernel(params.rho, KERNEL_TRUNCATION)?;
    let moments = BiasMoments::new(&state.b, &kernel);
    let e: Vec<ScalarField> = state
        .c
        .iter()
        .map(|c| moments.fitting_field(&state.g, *c))
        .collect();
    Ok(weighted_fit(&state.u, &e, &params.lambdas))
}

/// `μ √(π/τ) Σ_i Σ_{j≠i} ⟨u_i, G_τ ∗ u_j⟩`, heat scale = image long side.
pub fn length_energy(u: &IndicatorSet, mu: f64, tau: f64) -> Result<f64> {
    let scale = u.width().max(u.height()) as f64;
    let term = LengthTerm::new(tau, scale, u.width(), u.height())?;
    Ok(mu * term.length(u))
}

fn check_floor(g: &ScalarField, g_floor: f64) -> Result<()> {
    // tolerate the last-bit slack of values written as exactly the floor
    if let Some(i) = g.values().iter().position(|v| *v < g_floor * (1.0 - 1e-12)) {
        return Err(Error::contract(format!(
            "denoised image below floor {g_floor} at pixel {i} ({})",
            g.values()[i]
        )));
    }
    Ok(())
}

/// `γ Σ_x (g − f log g)`.
pub fn idiv_energy(g: &ScalarField, f: &ScalarField, gamma: f64, g_floor: f64) -> Result<f64> {
    g.check_shape(f, "I-divergence")?;
    check_floor(g, g_floor)?;
    let s: f64 = g
        .values()
        .iter()
        .zip(f.values())
        .map(|(gv, fv)| gv - fv * gv.ln())
        .sum();
    Ok(gamma * s)
}

/// `ν Σ_x α √(|∇g|² + ε²)` with forward differences.
pub fn tv_energy(g: &ScalarField, alpha: &ScalarField, nu: f64, eps_tv: f64) -> Result<f64> {
    g.check_shape(alpha, "weighted TV")?;
    let (gx, gy) = gradient(g);
    let s: f64 = (0..g.len())
        .map(|i| {
            let (a, b) = (gx.values()[i], gy.values()[i]);
            alpha.values()[i] * (a * a + b * b + eps_tv * eps_tv).sqrt()
        })
        .sum();
    Ok(nu * s)
}

pub fn total_energy(
    state: &SegState,
    f: &ScalarField,
    alpha: &ScalarField,
    params: &ModelParams,
) -> Result<EnergyBreakdown> {
    state.check(params)?;
    let (w, h) = (state.g.width(), state.g.height());
    let fit = fitting_energy(state, params)?;
    let length = params.mu * LengthTerm::for_params(params, w, h)?.length(&state.u);
    let idiv = idiv_energy(&state.g, f, params.gamma, params.g_floor)?;
    let tv = tv_energy(&state.g, alpha, params.nu, params.eps_tv)?;
    Ok(EnergyBreakdown::new(fit, length, idiv, tv))
}
