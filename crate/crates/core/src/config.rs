//! Flat `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key may appear once except `region`. Unknown keys are errors. Paths
//! are resolved against the directory of the file they appear in.
//!
//! ```text
//! # image source: `input`, or the synth_* keys plus regions
//! input = scan.pgm
//! truth = scan_labels.pgm            # optional, enables metrics
//! synth_width = 256
//! synth_height = 256
//! synth_background = 50
//! region = disk 90 100 50 110 1      # disk cx cy r intensity phase
//! region = rect 150 140 80 70 110 1  # rect x y w h intensity phase
//! region = ring 64 64 10 20 200 2    # ring cx cy r_in r_out intensity phase
//! bias = bump 1 2 64                 # none | ramp left right | bump base peak width
//! noise = gamma 10                   # none | poisson | gamma looks
//! init = checkerboard 16             # rectangle x y w h | circle cx cy r | mask path
//! seed = 7
//! out = results
//! mu = 6.5025e-5                     # model parameters, see ModelParams
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::io;
use crate::model::{IndicatorSet, ModelParams};
use crate::noise::NoiseKind;
use crate::synth::{Bias, Region, Shape, SynthSpec};

/// How the initial partition is drawn. The interior of the contour is
/// phase 1; with more than two phases the exterior is split further by
/// intensity quantiles.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    Rectangle { x: f64, y: f64, w: f64, h: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
    /// Alternating square cells of side `cell` pixels; the cell at the origin is exterior.
    Checkerboard { cell: f64 },
    /// Nonzero pixels are interior.
    Mask(PathBuf),
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Checkerboard { cell: 16.0 }
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Rectangle { x, y, w, h } => write!(f, "rectangle {x} {y} {w} {h}"),
            InitSpec::Circle { cx, cy, r } => write!(f, "circle {cx} {cy} {r}"),
            InitSpec::Checkerboard { cell } => write!(f, "checkerboard {cell}"),
            InitSpec::Mask(p) => write!(f, "mask {}", p.display()),
        }
    }
}

impl InitSpec {
    fn interior(&self, width: usize, height: usize) -> Result<Vec<bool>> {
        let centers = |pred: &dyn Fn(f64, f64) -> bool| {
            (0..width * height)
                .map(|i| pred((i % width) as f64 + 0.5, (i / width) as f64 + 0.5))
                .collect()
        };
        Ok(match self {
            InitSpec::Rectangle { x, y, w, h } => {
                centers(&|px, py| px >= *x && px < x + w && py >= *y && py < y + h)
            }
            InitSpec::Circle { cx, cy, r } => {
                centers(&|px, py| (px - cx).powi(2) + (py - cy).powi(2) <= r * r)
            }
            InitSpec::Checkerboard { cell } => centers(&|px, py| {
                ((px / cell).floor() as i64 + (py / cell).floor() as i64).rem_euclid(2) == 1
            }),
            InitSpec::Mask(path) => {
                let m = io::read_mask(path)?;
                if m.width() != width || m.height() != height {
                    return Err(Error::dims(format!(
                        "initial mask {} is {}x{}, image is {width}x{height}",
                        path.display(),
                        m.width(),
                        m.height()
                    )));
                }
                m.values().iter().map(|v| *v > 0.0).collect()
            }
        })
    }

    /// The initial partition for `f`. Exterior pixels are ranked by intensity
    /// (ties by position) and dealt into equal-count bins labelled
    /// `0, 2, 3, …, n − 1` from dark to bright.
    pub fn build(&self, f: &ScalarField, n_phases: usize) -> Result<IndicatorSet> {
        if n_phases < 2 {
            return Err(Error::param("an initial partition needs at least 2 phases"));
        }
        let (w, h) = (f.width(), f.height());
        let inside = self.interior(w, h)?;
        let mut labels: Vec<u16> = inside.iter().map(|b| u16::from(*b)).collect();
        if n_phases > 2 {
            let mut outside: Vec<usize> = (0..w * h).filter(|i| !inside[*i]).collect();
            let v = f.values();
            outside.sort_by(|a, b| v[*a].total_cmp(&v[*b]).then(a.cmp(b)));
            let bins = n_phases - 1;
            let m = outside.len();
            for (rank, px) in outside.into_iter().enumerate() {
                let bin = rank * bins / m.max(1);
                labels[px] = if bin == 0 { 0 } else { bin as u16 + 1 };
            }
        }
        IndicatorSet::from_labels(w, h, n_phases, labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Synth(SynthSpec),
}

/// A parsed experiment file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: Option<ImageSource>,
    /// Ground-truth label map for scoring.
    pub truth: Option<PathBuf>,
    pub noise: NoiseKind,
    pub init: InitSpec,
    pub params: ModelParams,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: None,
            truth: None,
            noise: NoiseKind::None,
            init: InitSpec::default(),
            params: ModelParams::default(),
            seed: 0,
            out: None,
        }
    }
}

impl fmt::Display for ExperimentConfig {
    /// Config-file syntax that parses back to the same experiment.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(ImageSource::File(p)) => writeln!(f, "input = {}", p.display())?,
            Some(ImageSource::Synth(s)) => {
                writeln!(f, "synth_width = {}", s.width)?;
                writeln!(f, "synth_height = {}", s.height)?;
                writeln!(f, "synth_background = {}", s.background)?;
                for r in &s.regions {
                    let (i, ph) = (r.intensity, r.phase);
                    match r.shape {
                        Shape::Disk { cx, cy, r } => {
                            writeln!(f, "region = disk {cx} {cy} {r} {i} {ph}")?
                        }
                        Shape::Rect { x, y, w, h } => {
                            writeln!(f, "region = rect {x} {y} {w} {h} {i} {ph}")?
                        }
                        Shape::Ring { cx, cy, r_in, r_out } => {
                            writeln!(f, "region = ring {cx} {cy} {r_in} {r_out} {i} {ph}")?
                        }
                    }
                }
                match s.bias {
                    Bias::None => writeln!(f, "bias = none")?,
                    Bias::Ramp { left, right } => writeln!(f, "bias = ramp {left} {right}")?,
                    Bias::Bump { base, peak, width } => {
                        writeln!(f, "bias = bump {base} {peak} {width}")?
                    }
                }
            }
            None => {}
        }
        if let Some(t) = &self.truth {
            writeln!(f, "truth = {}", t.display())?;
        }
        match self.noise {
            NoiseKind::None => writeln!(f, "noise = none")?,
            NoiseKind::Poisson => writeln!(f, "noise = poisson")?,
            NoiseKind::Gamma { looks } => writeln!(f, "noise = gamma {looks}")?,
        }
        writeln!(f, "init = {}", self.init)?;
        writeln!(f, "seed = {}", self.seed)?;
        if let Some(o) = &self.out {
            writeln!(f, "out = {}", o.display())?;
        }
        write!(f, "{}", self.params)
    }
}

struct Line<'a> {
    origin: &'a str,
    number: usize,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Config {
            origin: format!("{}:{}", self.origin, self.number),
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, key: &str, text: &str) -> Result<T> {
        text.trim()
            .parse()
            .map_err(|_| self.err(format!("{key}: cannot parse {text:?}")))
    }

    fn nums(&self, key: &str, words: &[&str], want: usize) -> Result<Vec<f64>> {
        if words.len() != want {
            return Err(self.err(format!(
                "{key}: expected {want} numbers, found {}",
                words.len()
            )));
        }
        words.iter().map(|w| self.num(key, w)).collect()
    }

    fn flag(&self, key: &str, text: &str) -> Result<bool> {
        match text {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.err(format!("{key}: expected true or false, found {text:?}"))),
        }
    }
}

#[derive(Default)]
struct SynthKeys {
    width: Option<usize>,
    height: Option<usize>,
    background: Option<f64>,
    regions: Vec<Region>,
    bias: Option<Bias>,
}

impl SynthKeys {
    fn used(&self) -> bool {
        self.width.is_some()
            || self.height.is_some()
            || self.background.is_some()
            || !self.regions.is_empty()
            || self.bias.is_some()
    }
}

/// Parses config text; `origin` names the source in error messages and its
/// parent directory anchors relative paths.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let origin_name = origin.display().to_string();
    let base = origin.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut cfg = ExperimentConfig::default();
    let mut synth = SynthKeys::default();
    let mut input: Option<PathBuf> = None;
    let mut lambdas: Option<(Vec<f64>, usize)> = None;
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = Line {
            origin: &origin_name,
            number: idx + 1,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| line.err(format!("expected key = value, found {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(line.err(format!("{key}: missing value")));
        }
        if key != "region" && !seen.insert(key.to_string()) {
            return Err(line.err(format!("duplicate key {key}")));
        }
        let words: Vec<&str> = value.split_whitespace().collect();
        let p = &mut cfg.params;
        match key {
            "input" => input = Some(resolve(value)),
            "truth" => cfg.truth = Some(resolve(value)),
            "out" => cfg.out = Some(resolve(value)),
            "seed" => cfg.seed = line.num(key, value)?,
            "synth_width" => synth.width = Some(line.num(key, value)?),
            "synth_height" => synth.height = Some(line.num(key, value)?),
            "synth_background" => synth.background = Some(line.num(key, value)?),
            "region" => synth.regions.push(parse_region(&line, &words)?),
            "bias" => synth.bias = Some(parse_bias(&line, &words)?),
            "noise" => cfg.noise = parse_noise(&line, &words)?,
            "init" => cfg.init = parse_init(&line, &words, &resolve)?,
            "n_phases" => p.n_phases = line.num(key, value)?,
            "lambda" => {
                let v = value
                    .split(',')
                    .map(|s| line.num(key, s))
                    .collect::<Result<Vec<f64>>>()?;
                lambdas = Some((v, line.number));
            }
            "mu" => p.mu = line.num(key, value)?,
            "gamma" => p.gamma = line.num(key, value)?,
            "nu" => p.nu = line.num(key, value)?,
            "rho" => p.rho = line.num(key, value)?,
            "tau" => p.tau = line.num(key, value)?,
            "tau_scale" => {
                p.tau_scale = if value == "auto" {
                    None
                } else {
                    Some(line.num(key, value)?)
                }
            }
            "sigma" => p.sigma = line.num(key, value)?,
            "p" => p.p = line.num(key, value)?,
            "dt" => p.dt = line.num(key, value)?,
            "c0" => p.c0 = line.num(key, value)?,
            "eta" => p.eta_relax = line.num(key, value)?,
            "eps_tv" => p.eps_tv = line.num(key, value)?,
            "g_floor" => p.g_floor = line.num(key, value)?,
            "tol1" => p.tol1 = line.num(key, value)?,
            "tol2" => p.tol2 = line.num(key, value)?,
            "max_outer" => p.max_outer = line.num(key, value)?,
            "max_inner" => p.max_inner = line.num(key, value)?,
            "update_bias" => p.update_bias = line.flag(key, value)?,
            "update_denoised" => p.update_denoised = line.flag(key, value)?,
            "intensity_scale" => p.intensity_scale = line.num(key, value)?,
            _ => return Err(line.err(format!("unknown key {key:?}"))),
        }
    }

    let whole = |message: String| Error::Config {
        origin: origin_name.clone(),
        message,
    };
    let n = cfg.params.n_phases;
    cfg.params.lambdas = match lambdas {
        None => vec![1.0; n],
        Some((v, _)) if v.len() == 1 => vec![v[0]; n],
        Some((v, _)) if v.len() == n => v,
        Some((v, number)) => {
            return Err(Line {
                origin: &origin_name,
                number,
            }
            .err(format!("lambda has {} values for {n} phases", v.len())))
        }
    };
    cfg.params
        .validate()
        .map_err(|e| whole(e.to_string()))?;

    cfg.source = match (input, synth.used()) {
        (Some(_), true) => {
            return Err(whole("give either input or synth_* keys, not both".into()))
        }
        (Some(p), false) => Some(ImageSource::File(p)),
        (None, true) => Some(ImageSource::Synth(SynthSpec {
            width: synth
                .width
                .ok_or_else(|| whole("synth_width is required".into()))?,
            height: synth
                .height
                .ok_or_else(|| whole("synth_height is required".into()))?,
            background: synth.background.unwrap_or(0.0),
            regions: synth.regions,
            bias: synth.bias.unwrap_or(Bias::None),
        })),
        (None, false) => None,
    };
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        origin: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, path)
}

fn parse_region(line: &Line, words: &[&str]) -> Result<Region> {
    let (kind, rest) = words
        .split_first()
        .ok_or_else(|| line.err("region: missing shape"))?;
    let (shape, tail) = match *kind {
        "disk" => {
            let v = line.nums("region", rest, 5)?;
            (Shape::Disk { cx: v[0], cy: v[1], r: v[2] }, [v[3], v[4]])
        }
        "rect" => {
            let v = line.nums("region", rest, 6)?;
            (Shape::Rect { x: v[0], y: v[1], w: v[2], h: v[3] }, [v[4], v[5]])
        }
        "ring" => {
            let v = line.nums("region", rest, 6)?;
            (
                Shape::Ring { cx: v[0], cy: v[1], r_in: v[2], r_out: v[3] },
                [v[4], v[5]],
            )
        }
        other => return Err(line.err(format!("region: unknown shape {other:?}"))),
    };
    let phase = tail[1];
    if phase < 0.0 || phase.fract() != 0.0 || phase > u16::MAX as f64 {
        return Err(line.err(format!("region: phase must be a small integer, got {phase}")));
    }
    Ok(Region {
        shape,
        intensity: tail[0],
        phase: phase as u16,
    })
}

fn parse_bias(line: &Line, words: &[&str]) -> Result<Bias> {
    match words {
        ["none"] => Ok(Bias::None),
        ["ramp", rest @ ..] => {
            let v = line.nums("bias", rest, 2)?;
            Ok(Bias::Ramp { left: v[0], right: v[1] })
        }
        ["bump", rest @ ..] => {
            let v = line.nums("bias", rest, 3)?;
            Ok(Bias::Bump { base: v[0], peak: v[1], width: v[2] })
        }
        _ => Err(line.err(format!("bias: expected none, ramp or bump, found {:?}", words.join(" ")))),
    }
}

fn parse_noise(line: &Line, words: &[&str]) -> Result<NoiseKind> {
    match words {
        ["none"] => Ok(NoiseKind::None),
        ["poisson"] => Ok(NoiseKind::Poisson),
        ["gamma", l] => Ok(NoiseKind::Gamma { looks: line.num("noise", l)? }),
        _ => Err(line.err(format!(
            "noise: expected none, poisson or gamma L, found {:?}",
            words.join(" ")
        ))),
    }
}

fn parse_init(line: &Line, words: &[&str], resolve: &dyn Fn(&str) -> PathBuf) -> Result<InitSpec> {
    match words {
        ["rectangle", rest @ ..] => {
            let v = line.nums("init", rest, 4)?;
            Ok(InitSpec::Rectangle { x: v[0], y: v[1], w: v[2], h: v[3] })
        }
        ["circle", rest @ ..] => {
            let v = line.nums("init", rest, 3)?;
            Ok(InitSpec::Circle { cx: v[0], cy: v[1], r: v[2] })
        }
        ["checkerboard", c] => {
            let cell: f64 = line.num("init", c)?;
            if !(cell > 0.0 && cell.is_finite()) {
                return Err(line.err("init: checkerboard cell must be positive"));
            }
            Ok(InitSpec::Checkerboard { cell })
        }
        ["mask", p] => Ok(InitSpec::Mask(resolve(p))),
        _ => Err(line.err(format!(
            "init: expected rectangle, circle, checkerboard or mask, found {:?}",
            words.join(" ")
        ))),
    }
}
