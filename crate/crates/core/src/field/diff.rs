use super::ScalarField;
use crate::error::Result;

/// Forward differences; the difference leaving the last column (row) is zero.
pub fn gradient(field: &ScalarField) -> (ScalarField, ScalarField) {
    let (w, h) = (field.width(), field.height());
    let v = field.values();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        let ox = &mut gx[y * w..(y + 1) * w];
        for x in 0..w - 1 {
            ox[x] = row[x + 1] - row[x];
        }
        if y + 1 < h {
            let next = &v[(y + 1) * w..(y + 2) * w];
            let oy = &mut gy[y * w..(y + 1) * w];
            for x in 0..w {
                oy[x] = next[x] - row[x];
            }
        }
    }
    (
        ScalarField::new(w, h, gx).expect("shape preserved"),
        ScalarField::new(w, h, gy).expect("shape preserved"),
    )
}

/// Backward differences, the negative adjoint of [`gradient`]:
/// `⟨gradient(g), (px, py)⟩ = −⟨g, divergence(px, py)⟩`.
pub fn divergence(px: &ScalarField, py: &ScalarField) -> Result<ScalarField> {
    px.check_shape(py, "divergence components")?;
    let (w, h) = (px.width(), px.height());
    let mut out = vec![0.0; w * h];
    divergence_into(px.values(), py.values(), w, h, &mut out);
    Ok(ScalarField::new(w, h, out).expect("shape preserved"))
}

/// Adds the backward-difference divergence of `(p, q)` into `out`.
pub(crate) fn divergence_into(p: &[f64], q: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let pr = &p[y * w..(y + 1) * w];
        let o = &mut out[y * w..(y + 1) * w];
        if w > 1 {
            o[0] += pr[0];
            for x in 1..w - 1 {
                o[x] += pr[x] - pr[x - 1];
            }
            o[w - 1] -= pr[w - 2];
        }
        if y + 1 < h {
            let qr = &q[y * w..(y + 1) * w];
            for x in 0..w {
                o[x] += qr[x];
            }
        }
        if y > 0 {
            let qp = &q[(y - 1) * w..y * w];
            for x in 0..w {
                o[x] -= qp[x];
            }
        }
    }
}

/// Five-point Laplacian with reflected ghost pixels (zero normal derivative).
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let (w, h) = (field.width(), field.height());
    let v = field.values();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        let up = &v[y.saturating_sub(1) * w..][..w];
        let down = &v[(y + 1).min(h - 1) * w..][..w];
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            let c = row[x];
            let left = if x > 0 { row[x - 1] } else { c };
            let right = if x + 1 < w { row[x + 1] } else { c };
            o[x] = left + right + up[x] + down[x] - 4.0 * c;
        }
    }
    ScalarField::new(w, h, out).expect("shape preserved")
}

/// `Δ(Δ field)` with the reflective five-point Laplacian applied twice.
pub fn biharmonic_apply(field: &ScalarField) -> ScalarField {
    laplacian(&laplacian(field))
}

/// `Σ_x a(x)·b(x)` with unit pixel area.
pub fn inner_product(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_shape(b, "inner product")?;
    Ok(dot(a.values(), b.values()))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let (gx, gy) = gradient(&ScalarField::filled(5, 4, 2.0));
        assert!(gx.values().iter().chain(gy.values()).all(|v| *v == 0.0));

        let ramp = ScalarField::from_fn(5, 4, |x, _| x as f64);
        let (gx, gy) = gradient(&ramp);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(gx.get(x, y), if x < 4 { 1.0 } else { 0.0 });
                assert_eq!(gy.get(x, y), 0.0);
            }
        }
        // divergence of the ramp's gradient vanishes in the interior
        let d = divergence(&gx, &gy).unwrap();
        for y in 0..4 {
            for x in 1..4 {
                assert_eq!(d.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_zero_and_mismatch() {
        let z = ScalarField::zeros(3, 3);
        assert!(divergence(&z, &z).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(divergence(&z, &ScalarField::zeros(3, 4)).is_err());
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = random_field(8, 8, &mut rng);
            let p = random_field(8, 8, &mut rng);
            let q = random_field(8, 8, &mut rng);
            let (gx, gy) = gradient(&g);
            // direct sums
            let mut lhs = 0.0;
            for i in 0..64 {
                lhs += gx.values()[i] * p.values()[i] + gy.values()[i] * q.values()[i];
            }
            let div = divergence(&p, &q).unwrap();
            let mut rhs = 0.0;
            for i in 0..64 {
                rhs -= g.values()[i] * div.values()[i];
            }
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    /// Explicit stencil: Laplacian via ghost values, then again.
    fn brute_biharmonic(f: &ScalarField) -> ScalarField {
        let lap = |g: &ScalarField| {
            let (w, h) = (g.width() as isize, g.height() as isize);
            let at = |x: isize, y: isize| {
                let cx = x.clamp(0, w - 1) as usize;
                let cy = y.clamp(0, h - 1) as usize;
                g.get(cx, cy)
            };
            ScalarField::from_fn(g.width(), g.height(), |x, y| {
                let (x, y) = (x as isize, y as isize);
                at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y)
            })
        };
        lap(&lap(f))
    }

    #[test]
    fn biharmonic_matches_stencil_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_field(8, 8, &mut rng);
        let a = biharmonic_apply(&f);
        let b = brute_biharmonic(&f);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn biharmonic_annihilates_constants_and_affine_interior() {
        let c = biharmonic_apply(&ScalarField::filled(6, 6, 4.0));
        assert!(c.values().iter().all(|v| v.abs() < 1e-12));
        let affine = ScalarField::from_fn(10, 9, |x, y| 1.5 + 0.5 * x as f64 - 2.0 * y as f64);
        let b = biharmonic_apply(&affine);
        for y in 2..7 {
            for x in 2..8 {
                assert!(b.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_product_basics() {
        let ones = ScalarField::ones(4, 4);
        assert_eq!(inner_product(&ones, &ones).unwrap(), 16.0);
        let a = ScalarField::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let b = ScalarField::from_fn(4, 4, |x, _| if x < 2 { 0.0 } else { 1.0 });
        assert_eq!(inner_product(&a, &b).unwrap(), 0.0);
        assert!(inner_product(&a, &ScalarField::ones(2, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_field(7, 5, &mut rng);
        let b = random_field(7, 5, &mut rng);
        let mut direct = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                direct += a.get(x, y) * b.get(x, y);
            }
        }
        assert!((inner_product(&a, &b).unwrap() - direct).abs() < 1e-14);
    }
}
