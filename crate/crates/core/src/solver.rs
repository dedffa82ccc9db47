//! Alternating minimization: closed-form `c` and `b`, the relaxed SAV flow
//! for `g`, and convolution-thresholding for `u`.

use crate::error::{Error, Result};
use crate::field::{
    convolve, divergence_into, gradient, inner_product, laplacian, make_gaussian_kernel,
    ImplicitSolver, Kernel, ScalarField,
};
use crate::model::{
    compute_alpha, idiv_energy, tv_energy, weighted_fit, BiasMoments, EnergyBreakdown,
    IndicatorSet, LengthTerm, ModelParams, SegState, KERNEL_TRUNCATION,
};

/// Relative size of `q` (against `E + C₀`) below which the relaxation
/// quadratic is treated as linear.
const XI_DEGENERATE_Q: f64 = 1e-14;

/// Scalar auxiliary variable bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SavState {
    pub z: f64,
    pub xi: f64,
    pub inner_iter: usize,
}

/// New region constants plus the phases whose denominator vanished
/// (those keep their previous constant).
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantUpdate {
    pub c: Vec<f64>,
    pub empty_phases: Vec<usize>,
}

fn rho_kernel(params: &ModelParams) -> Result<Kernel> {
    make_gaussian_kernel(params.rho, KERNEL_TRUNCATION)
}

fn update_c_with(state: &SegState, moments: &BiasMoments) -> ConstantUpdate {
    let n = state.u.n_phases();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let (g, gb, gb2) = (state.g.values(), moments.gb.values(), moments.gb2.values());
    for (px, l) in state.u.labels().iter().enumerate() {
        let i = *l as usize;
        num[i] += g[px] * gb[px];
        den[i] += gb2[px];
    }
    let mut c = state.c.clone();
    let mut empty_phases = Vec::new();
    for i in 0..n {
        if den[i] > 0.0 {
            c[i] = num[i] / den[i];
        } else {
            empty_phases.push(i);
        }
    }
    ConstantUpdate { c, empty_phases }
}

/// `c_i = ⟨u_i g, G_ρ∗b⟩ / ⟨u_i, G_ρ∗b²⟩`.
pub fn update_c(state: &SegState, params: &ModelParams) -> Result<ConstantUpdate> {
    state.check(params)?;
    let moments = BiasMoments::new(&state.b, &rho_kernel(params)?);
    Ok(update_c_with(state, &moments))
}

fn update_b_with(state: &SegState, lambdas: &[f64], kernel: &Kernel) -> Result<ScalarField> {
    if state.c.iter().zip(lambdas).all(|(c, l)| *c * *l == 0.0) {
        return Err(Error::Degenerate(
            "every weighted region constant is zero; the bias is undetermined".into(),
        ));
    }
    let (w, h) = (state.g.width(), state.g.height());
    let mut num = ScalarField::zeros(w, h);
    let mut den = ScalarField::zeros(w, h);
    for i in 0..state.u.n_phases() {
        let (l, c) = (lambdas[i], state.c[i]);
        if l * c == 0.0 {
            continue;
        }
        let mask = state.u.mask(i);
        let ug = mask.zip_map(&state.g, |u, g| u * g);
        let s_ug = convolve(&ug, kernel);
        let s_u = convolve(&mask, kernel);
        for (acc, v) in num.values_mut().iter_mut().zip(s_ug.values()) {
            *acc += l * c * v;
        }
        for (acc, v) in den.values_mut().iter_mut().zip(s_u.values()) {
            *acc += l * c * c * v;
        }
    }
    let data = num
        .values()
        .iter()
        .zip(den.values())
        .zip(state.b.values())
        .map(|((n, d), prev)| if *d > 0.0 { n / d } else { *prev })
        .collect();
    ScalarField::new(w, h, data)
}

/// `b = Σ_i λ_i c_i G_ρ∗(u_i g) / Σ_i λ_i c_i² G_ρ∗u_i`. Pixels whose
/// denominator vanishes keep the previous bias.
pub fn update_b(state: &SegState, params: &ModelParams) -> Result<ScalarField> {
    state.check(params)?;
    update_b_with(state, &params.lambdas, &rho_kernel(params)?)
}

/// The g-subproblem with `c`, `b`, `u` frozen.
///
/// The fitting part is stored as the pointwise quadratic `a g² − 2 β g + κ`.
/// The I-divergence term `γ Σ (g − f log g)` is positive whenever `f ≤ 1`,
/// which the solver's intensity normalization provides for 8-bit input.
#[derive(Clone, Debug)]
pub struct GSubproblem {
    quad: ScalarField,
    lin: ScalarField,
    cst: ScalarField,
    f: ScalarField,
    alpha: ScalarField,
    gamma: f64,
    nu: f64,
    eps_tv: f64,
    g_floor: f64,
}

impl GSubproblem {
    pub fn new(
        state: &SegState,
        f: &ScalarField,
        alpha: &ScalarField,
        params: &ModelParams,
    ) -> Result<Self> {
        state.check(params)?;
        let moments = BiasMoments::new(&state.b, &rho_kernel(params)?);
        Self::with_moments(state, &moments, f, alpha, params)
    }

    fn with_moments(
        state: &SegState,
        moments: &BiasMoments,
        f: &ScalarField,
        alpha: &ScalarField,
        params: &ModelParams,
    ) -> Result<Self> {
        state.g.check_shape(f, "g-subproblem input")?;
        state.g.check_shape(alpha, "g-subproblem indicator")?;
        if f.values().iter().any(|v| *v < 0.0) {
            return Err(Error::contract("input image must be nonnegative"));
        }
        let (w, h) = (f.width(), f.height());
        let mut quad = ScalarField::zeros(w, h);
        let mut lin = ScalarField::zeros(w, h);
        let mut cst = ScalarField::zeros(w, h);
        let (og, gb, gb2) = (moments.one_g.values(), moments.gb.values(), moments.gb2.values());
        for (px, l) in state.u.labels().iter().enumerate() {
            let i = *l as usize;
            let (lam, c) = (params.lambdas[i], state.c[i]);
            quad.values_mut()[px] = lam * og[px];
            lin.values_mut()[px] = lam * c * gb[px];
            cst.values_mut()[px] = lam * c * c * gb2[px];
        }
        Ok(Self {
            quad,
            lin,
            cst,
            f: f.clone(),
            alpha: alpha.clone(),
            gamma: params.gamma,
            nu: params.nu,
            eps_tv: params.eps_tv,
            g_floor: params.g_floor,
        })
    }

    pub fn g_floor(&self) -> f64 {
        self.g_floor
    }

    fn check_positive(&self, g: &ScalarField) -> Result<()> {
        g.check_shape(&self.f, "g-subproblem iterate")?;
        if let Some(i) = g.values().iter().position(|v| *v <= 0.0) {
            return Err(Error::contract(format!(
                "denoised image must stay positive (pixel {i} is {})",
                g.values()[i]
            )));
        }
        Ok(())
    }

    /// `E_g(g)`; `g` must be strictly positive.
    pub fn energy(&self, g: &ScalarField) -> Result<f64> {
        self.check_positive(g)?;
        let gv = g.values();
        let fit: f64 = (0..gv.len())
            .map(|i| {
                let x = gv[i];
                self.quad.values()[i] * x * x - 2.0 * self.lin.values()[i] * x
                    + self.cst.values()[i]
            })
            .sum();
        let idiv = if self.gamma == 0.0 {
            0.0
        } else {
            let s: f64 = gv
                .iter()
                .zip(self.f.values())
                .map(|(&x, &fv)| if fv > 0.0 { x - fv * x.ln() } else { x })
                .sum();
            self.gamma * s
        };
        let tv = if self.nu == 0.0 {
            0.0
        } else {
            tv_energy(g, &self.alpha, self.nu, self.eps_tv)?
        };
        Ok(fit + idiv + tv)
    }

    /// `F′(g) = 2(a g − β) − γ (f − g)/g − ν div(α ∇g / √(|∇g|² + ε²))`.
    pub fn force(&self, g: &ScalarField) -> Result<ScalarField> {
        self.check_positive(g)?;
        let gv = g.values();
        let mut out: Vec<f64> = (0..gv.len())
            .map(|i| {
                let x = gv[i];
                let fit = 2.0 * (self.quad.values()[i] * x - self.lin.values()[i]);
                let idiv = self.gamma * (x - self.f.values()[i]) / x;
                fit + idiv
            })
            .collect();
        if self.nu != 0.0 {
            let (gx, gy) = gradient(g);
            let eps2 = self.eps_tv * self.eps_tv;
            let (mut px, mut py) = (gx.into_values(), gy.into_values());
            for ((a, b), al) in px.iter_mut().zip(py.iter_mut()).zip(self.alpha.values()) {
                let k = -self.nu * al / (*a * *a + *b * *b + eps2).sqrt();
                *a *= k;
                *b *= k;
            }
            divergence_into(&px, &py, g.width(), g.height(), &mut out);
        }
        ScalarField::new(g.width(), g.height(), out)
            .map_err(|_| Error::numerical("force", 0, "non-finite gradient"))
    }
}

/// Gradient of the evaluated `E_g` at `g` for the state's `c`, `b`, `u`.
pub fn force(
    g: &ScalarField,
    state: &SegState,
    f: &ScalarField,
    alpha: &ScalarField,
    params: &ModelParams,
) -> Result<ScalarField> {
    let sub = GSubproblem::new(state, f, alpha, params)?;
    if let Some(i) = g.values().iter().position(|v| *v < params.g_floor) {
        return Err(Error::contract(format!(
            "g below floor {} at pixel {i}",
            params.g_floor
        )));
    }
    sub.force(g)
}

/// Smallest `ξ ∈ [0, 1]` with `z′² − z̃² − (z̃ − z)² ≤ η 𝒢`, where
/// `z′ = ξ z̃ + (1 − ξ) √(E′ + C₀)`.
///
/// Writing `S = √(E′ + C₀)`, the constraint is `q ξ² + d ξ + h ≤ 0` with
/// `q = (z̃ − S)²`, `d = 2(z̃ − S) S`, `h = S² − z̃² − (z̃ − z)² − η 𝒢`.
/// `ξ = 1` is always feasible, so the smaller root is taken and clipped at 0.
pub fn compute_xi(
    z_tilde: f64,
    z_prev: f64,
    e_next: f64,
    g_value: f64,
    params: &ModelParams,
) -> Result<f64> {
    let s2 = e_next + params.c0;
    if !(s2 > 0.0 && s2.is_finite()) {
        return Err(Error::numerical(
            "relaxation",
            0,
            format!("E + C0 = {s2} is not positive"),
        ));
    }
    let (q, d, h) = xi_coefficients(z_tilde, z_prev, s2, g_value, params.eta_relax);
    smallest_feasible_xi(q, d, h, s2)
}

/// Smallest `ξ ∈ [0, 1]` with `q ξ² + d ξ + h ≤ 0`, given that `ξ = 1` is
/// feasible. `scale` sets the size below which `q` counts as zero.
pub fn smallest_feasible_xi(q: f64, d: f64, h: f64, scale: f64) -> Result<f64> {
    if h <= 0.0 {
        return Ok(0.0);
    }
    if q <= XI_DEGENERATE_Q * scale.max(1.0) {
        // z̃ ≈ S: the quadratic is effectively linear in ξ
        if d < 0.0 {
            return Ok((-h / d).clamp(0.0, 1.0));
        }
        return Ok(1.0);
    }
    let disc = d * d - 4.0 * q * h;
    let disc = if disc >= 0.0 {
        disc
    } else if disc >= -1e-10 * (d * d).max(f64::MIN_POSITIVE) {
        0.0
    } else {
        return Err(Error::numerical(
            "relaxation",
            0,
            format!("negative discriminant {disc} (q={q}, d={d}, h={h})"),
        ));
    };
    let root = if d <= 0.0 {
        // product of roots is h/q; this form avoids cancellation
        2.0 * h / (-d + disc.sqrt())
    } else {
        (-d - disc.sqrt()) / (2.0 * q)
    };
    Ok(root.clamp(0.0, 1.0))
}

/// `(q, d, h)` of the relaxation constraint; `s2 = E′ + C₀`.
pub fn xi_coefficients(z_tilde: f64, z_prev: f64, s2: f64, g_value: f64, eta: f64) -> (f64, f64, f64) {
    let s = s2.sqrt();
    let q = (z_tilde - s).powi(2);
    let d = 2.0 * (z_tilde - s) * s;
    let h = s2 - z_tilde * z_tilde - (z_tilde - z_prev).powi(2) - eta * g_value;
    (q, d, h)
}

/// One relaxed SAV step and everything needed to audit it.
#[derive(Clone, Debug)]
pub struct RmsavStep {
    /// The new iterate, after flooring.
    pub g: ScalarField,
    pub z_prev: f64,
    pub z_tilde: f64,
    pub z: f64,
    pub xi: f64,
    /// `(1/Δt)⟨δ, Aδ⟩` for `δ = g_next − g_j`, with `A` applied by stencil.
    pub g_value: f64,
    /// `E_g(g_next)`.
    pub energy: f64,
    /// Whether any pixel was lifted to the floor.
    pub floor_active: bool,
}

/// Advances `g_j` by one relaxed SAV step. `e_j` is `E_g(g_j)`.
pub fn rmsav_step(
    sub: &GSubproblem,
    solver: &ImplicitSolver,
    g_j: &ScalarField,
    z_j: f64,
    e_j: f64,
    params: &ModelParams,
    iteration: usize,
) -> Result<RmsavStep> {
    let fail = |msg: String| Error::numerical("g-update", iteration, msg);
    if !(z_j > 0.0 && z_j.is_finite()) {
        return Err(fail(format!("auxiliary variable must be positive, got {z_j}")));
    }
    let dt = solver.dt();
    let root = (e_j + params.c0).sqrt();
    if !(root > 0.0 && root.is_finite()) {
        return Err(fail(format!("E + C0 = {} is not positive", e_j + params.c0)));
    }
    let m = sub.force(g_j)?.scaled(1.0 / root);
    let m_hat = solver.solve(&m)?;
    let mm = inner_product(&m, &m_hat)?;
    let z_tilde = z_j / (1.0 + 0.5 * dt * mm);
    let step = dt * z_tilde;
    let mut floor_active = false;
    let floor = sub.g_floor();
    let data: Vec<f64> = g_j
        .values()
        .iter()
        .zip(m_hat.values())
        .map(|(g, mh)| {
            let v = g - step * mh;
            if v < floor {
                floor_active = true;
                floor
            } else {
                v
            }
        })
        .collect();
    let g = ScalarField::new(g_j.width(), g_j.height(), data)
        .map_err(|_| fail("non-finite iterate".into()))?;
    // ⟨δ, Δ²δ⟩ = ‖Δδ‖² because the reflective Laplacian is symmetric
    let delta = g.zip_map(g_j, |a, b| a - b);
    let lap = laplacian(&delta);
    let g_value = (inner_product(&delta, &delta)? + dt * inner_product(&lap, &lap)?) / dt;
    let energy = sub.energy(&g)?;
    if !energy.is_finite() {
        return Err(fail("non-finite energy".into()));
    }
    let xi = compute_xi(z_tilde, z_j, energy, g_value, params).map_err(|e| match e {
        Error::Numerical { stage, message, .. } => Error::Numerical {
            stage,
            iteration,
            message,
        },
        other => other,
    })?;
    let z = xi * z_tilde + (1.0 - xi) * (energy + params.c0).sqrt();
    Ok(RmsavStep {
        g,
        z_prev: z_j,
        z_tilde,
        z,
        xi,
        g_value,
        energy,
        floor_active,
    })
}

/// One inner-loop step as logged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerRecord {
    pub iter: usize,
    pub energy: f64,
    pub z_prev: f64,
    pub z_tilde: f64,
    pub z: f64,
    pub xi: f64,
    pub g_value: f64,
    pub err2: f64,
    pub floor_active: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InnerLog {
    pub energy0: f64,
    pub z0: f64,
    pub steps: Vec<InnerRecord>,
    /// The loop stopped at `max_inner` rather than at `tol2`.
    pub hit_cap: bool,
}

/// Runs the inner loop from `g0` until `err₂ ≤ tol₂` or `max_inner`.
pub fn run_inner(
    sub: &GSubproblem,
    solver: &ImplicitSolver,
    g0: &ScalarField,
    params: &ModelParams,
) -> Result<(ScalarField, InnerLog)> {
    let energy0 = sub.energy(g0)?;
    let z0 = (energy0 + params.c0).sqrt();
    if !(z0 > 0.0 && z0.is_finite()) {
        return Err(Error::numerical("g-update", 0, format!("E + C0 = {}", energy0 + params.c0)));
    }
    let mut log = InnerLog {
        energy0,
        z0,
        steps: Vec::new(),
        hit_cap: true,
    };
    let (mut g, mut z, mut e) = (g0.clone(), z0, energy0);
    for j in 0..params.max_inner {
        let step = rmsav_step(sub, solver, &g, z, e, params, j + 1)?;
        let err2 = if step.energy != 0.0 {
            (step.energy - e).abs() / step.energy.abs()
        } else if step.energy == e {
            0.0
        } else {
            f64::INFINITY
        };
        log.steps.push(InnerRecord {
            iter: j + 1,
            energy: step.energy,
            z_prev: step.z_prev,
            z_tilde: step.z_tilde,
            z: step.z,
            xi: step.xi,
            g_value: step.g_value,
            err2,
            floor_active: step.floor_active,
        });
        g = step.g;
        z = step.z;
        e = step.energy;
        if err2 <= params.tol2 {
            log.hit_cap = false;
            break;
        }
    }
    Ok((g, log))
}

/// The g-subproblem for the state's `c`, `b`, `u`, started from `state.g`.
pub fn update_g(
    state: &SegState,
    f: &ScalarField,
    alpha: &ScalarField,
    params: &ModelParams,
) -> Result<(ScalarField, InnerLog)> {
    params.validate()?;
    let sub = GSubproblem::new(state, f, alpha, params)?;
    let solver = ImplicitSolver::new(f.width(), f.height(), params.dt)?;
    run_inner(&sub, &solver, &state.g, params)
}

/// Denoising alone: the g-subproblem with `b ≡ 1` and all `λ_i = 0`,
/// started from the floored input. The result is in input units; the log's
/// energies are in solver units (input / `intensity_scale`).
pub fn denoise(f: &ScalarField, params: &ModelParams) -> Result<(ScalarField, InnerLog)> {
    let mut p = params.clone();
    p.n_phases = 2;
    p.lambdas = vec![0.0; 2];
    p.validate()?;
    let s = p.intensity_scale;
    let f = f.scaled(1.0 / s);
    let alpha = compute_alpha(&f, p.sigma, p.p)?;
    let (w, h) = (f.width(), f.height());
    let state = SegState {
        c: vec![0.0; 2],
        b: ScalarField::ones(w, h),
        g: f.map(|v| v.max(p.g_floor)),
        u: IndicatorSet::uniform(w, h, 2, 0)?,
    };
    let (g, log) = update_g(&state, &f, &alpha, &p)?;
    Ok((g.scaled(s), log))
}

fn fitting_fields(state: &SegState, moments: &BiasMoments) -> Vec<ScalarField> {
    state
        .c
        .iter()
        .map(|c| moments.fitting_field(&state.g, *c))
        .collect()
}

fn phi_from(
    e: &[ScalarField],
    smoothed: &[ScalarField],
    lambdas: &[f64],
    length_weight: f64,
) -> Vec<ScalarField> {
    let n = e.len();
    let (w, h) = (e[0].width(), e[0].height());
    let mut total = ScalarField::zeros(w, h);
    for s in smoothed {
        for (t, v) in total.values_mut().iter_mut().zip(s.values()) {
            *t += v;
        }
    }
    (0..n)
        .map(|i| {
            let data = (0..w * h)
                .map(|px| {
                    let others = total.values()[px] - smoothed[i].values()[px];
                    lambdas[i] * e[i].values()[px] + length_weight * others
                })
                .collect();
            ScalarField::new(w, h, data).expect("phi shape")
        })
        .collect()
}

/// `φ_i = λ_i e_i + 2μ √(π/τ) Σ_{j≠i} G_τ ∗ u_j`.
pub fn compute_phi(state: &SegState, params: &ModelParams) -> Result<Vec<ScalarField>> {
    state.check(params)?;
    let (w, h) = (state.g.width(), state.g.height());
    let moments = BiasMoments::new(&state.b, &rho_kernel(params)?);
    let term = LengthTerm::for_params(params, w, h)?;
    let e = fitting_fields(state, &moments);
    let smoothed = term.smoothed_phases(&state.u);
    Ok(phi_from(&e, &smoothed, &params.lambdas, 2.0 * params.mu * term.coeff()))
}

/// Pointwise argmin of `φ`, ties to the lowest index.
pub fn update_u(phi: &[ScalarField]) -> Result<IndicatorSet> {
    let first = phi
        .first()
        .ok_or_else(|| Error::param("thresholding needs at least one phase"))?;
    for p in phi {
        first.check_shape(p, "thresholding")?;
    }
    let labels = (0..first.len())
        .map(|px| {
            let mut best = 0;
            for (i, p) in phi.iter().enumerate().skip(1) {
                if p.values()[px] < phi[best].values()[px] {
                    best = i;
                }
            }
            best as u16
        })
        .collect();
    IndicatorSet::from_labels(first.width(), first.height(), phi.len(), labels)
}

/// `E_u = Σ λ_i ⟨u_i, e_i⟩ + μ √(π/τ) Σ_i Σ_{j≠i} ⟨u_i, G_τ∗u_j⟩` for the state's partition.
pub fn threshold_energy(state: &SegState, params: &ModelParams) -> Result<f64> {
    state.check(params)?;
    let (w, h) = (state.g.width(), state.g.height());
    let moments = BiasMoments::new(&state.b, &rho_kernel(params)?);
    let term = LengthTerm::for_params(params, w, h)?;
    let e = fitting_fields(state, &moments);
    Ok(weighted_fit(&state.u, &e, &params.lambdas) + params.mu * term.length(&state.u))
}

/// Everything recorded for one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterRecord {
    pub iter: usize,
    /// Joint energy at the end of the iteration.
    pub energy: EnergyBreakdown,
    /// `E_u(u^k)` with the updated `c`, `b`, `g`.
    pub e_u_before: f64,
    /// `E_u(u^{k+1})` with the same `c`, `b`, `g`.
    pub e_u_after: f64,
    pub err1: f64,
    pub c: Vec<f64>,
    pub empty_phases: Vec<usize>,
    pub inner: InnerLog,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationLog {
    pub outer: Vec<OuterRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Precomputed operators for repeated segmentation of one image.
///
/// The solver works on `f / intensity_scale`. States passed in and out are in
/// input units (`g` and `c` scale with the image, `b` is unitless), while the
/// energies in the log are evaluated in solver units.
pub struct Segmenter {
    f: ScalarField,
    alpha: ScalarField,
    params: ModelParams,
    rho: Kernel,
    length: LengthTerm,
    solver: ImplicitSolver,
}

impl Segmenter {
    pub fn new(f: &ScalarField, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if let Some(i) = f.values().iter().position(|v| *v < 0.0) {
            return Err(Error::contract(format!("input image is negative at pixel {i}")));
        }
        let (w, h) = (f.width(), f.height());
        let f = f.scaled(1.0 / params.intensity_scale);
        Ok(Self {
            alpha: compute_alpha(&f, params.sigma, params.p)?,
            f,
            params: params.clone(),
            rho: rho_kernel(params)?,
            length: LengthTerm::for_params(params, w, h)?,
            solver: ImplicitSolver::new(w, h, params.dt)?,
        })
    }

    pub fn alpha(&self) -> &ScalarField {
        &self.alpha
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn rescale(state: &mut SegState, k: f64) {
        state.g = state.g.scaled(k);
        state.c.iter_mut().for_each(|c| *c *= k);
    }

    /// `g⁰ = f` floored, `b⁰ ≡ 1`, constants from the initial partition.
    pub fn initial_state(&self, init: &IndicatorSet) -> Result<SegState> {
        init.check_grid(&self.f)?;
        let (w, h) = (self.f.width(), self.f.height());
        let g = self.f.map(|v| v.max(self.params.g_floor));
        let mut state = SegState {
            c: vec![g.mean(); init.n_phases()],
            b: ScalarField::ones(w, h),
            g,
            u: init.clone(),
        };
        state.check(&self.params)?;
        let moments = BiasMoments::new(&state.b, &self.rho);
        state.c = update_c_with(&state, &moments).c;
        Self::rescale(&mut state, self.params.intensity_scale);
        Ok(state)
    }

    pub fn run(&self, init: &IndicatorSet) -> Result<(SegState, IterationLog)> {
        let mut state = self.initial_state(init)?;
        let log = self.run_from(&mut state)?;
        Ok((state, log))
    }

    /// Runs the outer loop in place from an arbitrary valid state.
    pub fn run_from(&self, state: &mut SegState) -> Result<IterationLog> {
        let p = &self.params;
        state.check(p)?;
        Self::rescale(state, 1.0 / p.intensity_scale);
        let result = self.iterate(state);
        Self::rescale(state, p.intensity_scale);
        result
    }

    fn iterate(&self, state: &mut SegState) -> Result<IterationLog> {
        let p = &self.params;
        let mut log = IterationLog::default();
        let mut smoothed = self.length.smoothed_phases(&state.u);
        let length_weight = 2.0 * p.mu * self.length.coeff();
        for k in 1..=p.max_outer {
            let moments = BiasMoments::new(&state.b, &self.rho);
            let cu = update_c_with(state, &moments);
            for i in &cu.empty_phases {
                log.warnings
                    .push(format!("outer {k}: phase {i} is empty, constant kept"));
            }
            state.c = cu.c.clone();

            let mut moments = moments;
            if p.update_bias {
                state.b = update_b_with(state, &p.lambdas, &self.rho)?;
                moments = BiasMoments::new(&state.b, &self.rho);
            }

            let mut inner = InnerLog::default();
            if p.update_denoised {
                let sub = GSubproblem::with_moments(state, &moments, &self.f, &self.alpha, p)?;
                let (g, ilog) = run_inner(&sub, &self.solver, &state.g, p).map_err(|e| {
                    match e {
                        Error::Numerical { stage, iteration, message } => Error::Numerical {
                            stage,
                            iteration,
                            message: format!("outer {k}: {message}"),
                        },
                        other => other,
                    }
                })?;
                if ilog.hit_cap {
                    log.warnings
                        .push(format!("outer {k}: inner loop hit max_inner"));
                }
                if ilog.steps.iter().any(|s| s.floor_active) {
                    log.warnings.push(format!("outer {k}: positivity floor engaged"));
                }
                state.g = g;
                inner = ilog;
            }

            let e = fitting_fields(state, &moments);
            let phi = phi_from(&e, &smoothed, &p.lambdas, length_weight);
            let e_u_before = weighted_fit(&state.u, &e, &p.lambdas)
                + p.mu * self.length.length_from(&state.u, &smoothed);
            let u_next = update_u(&phi)?;
            let err1 = state.u.l2_distance(&u_next);
            state.u = u_next;
            smoothed = self.length.smoothed_phases(&state.u);
            let fit = weighted_fit(&state.u, &e, &p.lambdas);
            let len = p.mu * self.length.length_from(&state.u, &smoothed);
            let e_u_after = fit + len;
            let energy = EnergyBreakdown::new(
                fit,
                len,
                idiv_energy(&state.g, &self.f, p.gamma, p.g_floor)?,
                tv_energy(&state.g, &self.alpha, p.nu, p.eps_tv)?,
            );
            if !energy.total.is_finite() {
                return Err(Error::numerical("outer loop", k, "non-finite energy"));
            }
            log.outer.push(OuterRecord {
                iter: k,
                energy,
                e_u_before,
                e_u_after,
                err1,
                c: state.c.clone(),
                empty_phases: cu.empty_phases,
                inner,
            });
            if err1 <= p.tol1 {
                log.converged = true;
                break;
            }
        }
        if !log.converged {
            log.warnings
                .push(format!("stopped at max_outer = {} before err1 <= tol1", p.max_outer));
        }
        Ok(log)
    }
}

/// Full alternating minimization from the partition `init`.
pub fn segment(
    f: &ScalarField,
    init: &IndicatorSet,
    params: &ModelParams,
) -> Result<(SegState, IterationLog)> {
    Segmenter::new(f, params)?.run(init)
}
