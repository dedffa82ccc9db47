//! Piecewise-constant test images with a multiplicative bias field.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::model::IndicatorSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Ring { cx: f64, cy: f64, r_in: f64, r_out: f64 },
}

impl Shape {
    /// Pixel centers `(x + ½, y + ½)` decide membership.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Disk { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            Shape::Ring { cx, cy, r_in, r_out } => {
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Disk { cx, cy, r } => cx.is_finite() && cy.is_finite() && r > 0.0,
            Shape::Rect { x, y, w, h } => x.is_finite() && y.is_finite() && w > 0.0 && h > 0.0,
            Shape::Ring { cx, cy, r_in, r_out } => {
                cx.is_finite() && cy.is_finite() && r_in >= 0.0 && r_out > r_in
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid shape geometry {self:?}")))
        }
    }
}

/// A shape painted with a constant intensity and a ground-truth phase label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub shape: Shape,
    pub intensity: f64,
    pub phase: u16,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bias {
    None,
    /// Linear in `x` from `left` at the first column center to `right` at the last.
    Ramp { left: f64, right: f64 },
    /// Centered Gaussian bump with std `width` pixels, rescaled so the image
    /// minimum is `base` and the center value is `peak`.
    Bump { base: f64, peak: f64, width: f64 },
}

impl Bias {
    pub fn field(&self, width: usize, height: usize) -> Result<ScalarField> {
        let f = match *self {
            Bias::None => ScalarField::ones(width, height),
            Bias::Ramp { left, right } => {
                if !(left > 0.0 && right > 0.0) {
                    return Err(Error::param("ramp bias must be positive"));
                }
                let span = (width.max(2) - 1) as f64;
                ScalarField::from_fn(width, height, |x, _| left + (right - left) * x as f64 / span)
            }
            Bias::Bump { base, peak, width: s } => {
                if !(base > 0.0 && peak > 0.0 && s > 0.0) {
                    return Err(Error::param("bump bias needs positive base, peak and width"));
                }
                let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
                let g = |x: usize, y: usize| {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    (-d2 / (2.0 * s * s)).exp()
                };
                let raw = ScalarField::from_fn(width, height, g);
                let (lo, hi) = (raw.min(), raw.max());
                if hi - lo <= 0.0 {
                    ScalarField::filled(width, height, base)
                } else {
                    raw.map(|v| base + (peak - base) * (v - lo) / (hi - lo))
                }
            }
        };
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub background: f64,
    /// Painted in order; later regions cover earlier ones.
    pub regions: Vec<Region>,
    pub bias: Bias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub clean: ScalarField,
    pub truth: IndicatorSet,
    pub bias: ScalarField,
}

/// Renders `bias × J` with `J` piecewise constant; the background is phase 0.
pub fn synth(spec: &SynthSpec) -> Result<SynthImage> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::param("synthetic image must be non-empty"));
    }
    let in_range = |v: f64| (0.0..=255.0).contains(&v);
    if !in_range(spec.background) {
        return Err(Error::param("background intensity must lie in [0, 255]"));
    }
    let mut n = 1usize;
    for r in &spec.regions {
        r.shape.validate()?;
        if !in_range(r.intensity) {
            return Err(Error::param(format!(
                "region intensity {} outside [0, 255]",
                r.intensity
            )));
        }
        n = n.max(r.phase as usize + 1);
    }
    let mut j = vec![spec.background; w * h];
    let mut labels = vec![0u16; w * h];
    for y in 0..h {
        for x in 0..w {
            for r in &spec.regions {
                if r.shape.contains(x, y) {
                    j[y * w + x] = r.intensity;
                    labels[y * w + x] = r.phase;
                }
            }
        }
    }
    let bias = spec.bias.field(w, h)?;
    let clean = ScalarField::new(w, h, j)?.zip_map(&bias, |a, b| a * b);
    Ok(SynthImage {
        clean,
        truth: IndicatorSet::from_labels(w, h, n.max(2), labels)?,
        bias,
    })
}
