//! Cosine-transform diagonalization of reflective-boundary operators.
//!
//! With half-sample symmetric extension, the basis `cos(πk(i + ½)/n)` is an
//! eigenbasis of both the five-point Neumann Laplacian and of convolution with
//! any symmetric kernel, so those operators become pointwise products on the
//! DCT-II coefficients.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use super::{Kernel, ScalarField};
use crate::error::{Error, Result};

/// Forward/inverse 2-D DCT for a fixed raster shape.
#[derive(Clone)]
struct Dct2d {
    width: usize,
    height: usize,
    rows: Arc<dyn TransformType2And3<f64>>,
    cols: Arc<dyn TransformType2And3<f64>>,
}

impl Dct2d {
    fn new(width: usize, height: usize) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            width,
            height,
            rows: planner.plan_dct2(width),
            cols: planner.plan_dct2(height),
        }
    }

    fn forward(&self, data: &mut [f64]) {
        self.pass(data, false);
    }

    /// Exact inverse of [`Self::forward`] (DCT-III scaled by `2/n` per axis).
    fn inverse(&self, data: &mut [f64]) {
        self.pass(data, true);
        let scale = 4.0 / (self.width * self.height) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn pass(&self, data: &mut [f64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let run = |plan: &Arc<dyn TransformType2And3<f64>>, buf: &mut [f64], n: usize| {
            let mut scratch = vec![0.0; plan.get_scratch_len()];
            for line in buf.chunks_exact_mut(n) {
                if inverse {
                    plan.process_dct3_with_scratch(line, &mut scratch);
                } else {
                    plan.process_dct2_with_scratch(line, &mut scratch);
                }
            }
        };
        run(&self.rows, data, w);
        // columns are transformed as rows of the transpose
        let mut t = vec![0.0; w * h];
        transpose(data, &mut t, w, h);
        run(&self.cols, &mut t, h);
        transpose(&t, data, h, w);
    }

    fn apply_diagonal(&self, field: &ScalarField, diag: &[f64]) -> ScalarField {
        let mut data = field.values().to_vec();
        self.forward(&mut data);
        data.iter_mut().zip(diag).for_each(|(v, d)| *v *= d);
        self.inverse(&mut data);
        ScalarField::new(self.width, self.height, data)
            .expect("spectral operator produced a non-finite value")
    }
}

/// Writes the `h × w` transpose of the row-major `w`-wide `src` into `dst`.
fn transpose(src: &[f64], dst: &mut [f64], w: usize, h: usize) {
    const B: usize = 32;
    for y0 in (0..h).step_by(B) {
        for x0 in (0..w).step_by(B) {
            for y in y0..(y0 + B).min(h) {
                for x in x0..(x0 + B).min(w) {
                    dst[x * h + y] = src[y * w + x];
                }
            }
        }
    }
}

/// Eigenvalues `-4 sin²(πk / 2n)` of the 1-D reflective second difference.
fn laplacian_eigenvalues(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = (PI * k as f64 / (2.0 * n as f64)).sin();
            -4.0 * s * s
        })
        .collect()
}

/// Eigenvalues `Σ_m w_m cos(πkm/n)` of reflective convolution along one axis.
fn kernel_eigenvalues(kernel: &Kernel, n: usize) -> Vec<f64> {
    let r = kernel.radius() as isize;
    (0..n)
        .map(|k| {
            (-r..=r)
                .map(|m| kernel.tap(m) * (PI * (k as f64) * (m as f64) / n as f64).cos())
                .sum()
        })
        .collect()
}

/// Precomputed inverse of `A = I + dt·Δ²` on a fixed raster.
#[derive(Clone)]
pub struct ImplicitSolver {
    dct: Dct2d,
    dt: f64,
    inv_diag: Vec<f64>,
}

impl ImplicitSolver {
    pub fn new(width: usize, height: usize, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param(format!("time step must be positive, got {dt}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::param("implicit solver needs a non-empty raster"));
        }
        let ex = laplacian_eigenvalues(width);
        let ey = laplacian_eigenvalues(height);
        let mut inv_diag = Vec::with_capacity(width * height);
        for ly in &ey {
            for lx in &ex {
                let lap = lx + ly;
                inv_diag.push(1.0 / (1.0 + dt * lap * lap));
            }
        }
        Ok(Self {
            dct: Dct2d::new(width, height),
            dt,
            inv_diag,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Returns `x` with `(I + dt·Δ²)x = rhs`.
    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        if rhs.width() != self.dct.width || rhs.height() != self.dct.height {
            return Err(Error::dims(format!(
                "implicit solver built for {}x{}, got {}x{}",
                self.dct.width,
                self.dct.height,
                rhs.width(),
                rhs.height()
            )));
        }
        Ok(self.dct.apply_diagonal(rhs, &self.inv_diag))
    }

    /// Forward application `(I + dt·Δ²)x` through the explicit stencil.
    pub fn apply(&self, x: &ScalarField) -> ScalarField {
        let bih = super::biharmonic_apply(x);
        x.zip_map(&bih, |v, b| v + self.dt * b)
    }
}

/// Solves `(I + dt·Δ²)x = rhs` with the reflective five-point Laplacian.
pub fn solve_implicit(rhs: &ScalarField, dt: f64) -> Result<ScalarField> {
    ImplicitSolver::new(rhs.width(), rhs.height(), dt)?.solve(rhs)
}

/// Reflective convolution with a fixed kernel on a fixed raster, through the
/// cosine transform. Cost is independent of the kernel radius.
#[derive(Clone)]
pub struct SpectralConvolver {
    dct: Dct2d,
    diag: Vec<f64>,
}

impl SpectralConvolver {
    pub fn new(kernel: &Kernel, width: usize, height: usize) -> Self {
        let ex = kernel_eigenvalues(kernel, width);
        let ey = kernel_eigenvalues(kernel, height);
        let mut diag = Vec::with_capacity(width * height);
        for ly in &ey {
            for lx in &ex {
                diag.push(lx * ly);
            }
        }
        Self {
            dct: Dct2d::new(width, height),
            diag,
        }
    }

    /// # Panics
    /// If `field` does not have the shape the convolver was built for.
    pub fn apply(&self, field: &ScalarField) -> ScalarField {
        assert!(
            field.width() == self.dct.width && field.height() == self.dct.height,
            "spectral convolver shape mismatch"
        );
        self.dct.apply_diagonal(field, &self.diag)
    }

    /// Smallest eigenvalue of the convolution operator.
    pub fn min_eigenvalue(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
