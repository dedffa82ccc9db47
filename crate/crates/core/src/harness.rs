//! The commands behind the `jointseg` executable.
//!
//! Each command reads an [`ExperimentConfig`], writes its files into the
//! output directory and returns the list of files it wrote. Progress goes to
//! stderr unless `quiet` is set.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, ImageSource};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::io;
use crate::metrics::{self, MetricRow};
use crate::model::IndicatorSet;
use crate::noise::{NoiseKind, NoiseSpec};
use crate::solver::{self, InnerLog, IterationLog, Segmenter};
use crate::synth::synth;

/// Overrides taken from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

/// Header of the energy log.
pub const ENERGY_CSV_HEADER: &str =
    "outer_iter,inner_iter,E_fit,E_len,E_idiv,E_tv,E_total,E_u,z_sq,xi,err1,err2";

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
    written: Vec<PathBuf>,
}

impl Context {
    fn new(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        if let Some(o) = &opts.out {
            cfg.out = Some(o.clone());
        }
        let out = cfg.out.clone().ok_or_else(|| Error::Config {
            origin: "command line".into(),
            message: "no output directory: set `out` in the config or pass --out".into(),
        })?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            cfg,
            out,
            quiet: opts.quiet,
            written: Vec::new(),
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.written.push(p.clone());
        p
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.cfg.noise,
            seed: self.cfg.seed,
        }
    }

    /// The image to process (noise applied, clamped to 8-bit range) and the
    /// ground truth when one is known.
    fn load_image(&self) -> Result<(ScalarField, Option<IndicatorSet>)> {
        let n = self.cfg.params.n_phases;
        let (clean, truth) = match &self.cfg.source {
            Some(ImageSource::File(p)) => {
                let truth = match &self.cfg.truth {
                    Some(t) => Some(io::read_labels(t, n)?),
                    None => None,
                };
                (io::read_pgm(p)?, truth)
            }
            Some(ImageSource::Synth(spec)) => {
                let img = synth(spec)?;
                if img.truth.n_phases() > n {
                    return Err(config_error(format!(
                        "synthetic image has {} phases but n_phases = {n}",
                        img.truth.n_phases()
                    )));
                }
                let truth =
                    IndicatorSet::from_labels(spec.width, spec.height, n, img.truth.labels().to_vec())?;
                (img.clean, Some(truth))
            }
            None => return Err(config_error("no image source: set `input` or the synth_* keys")),
        };
        let noisy = self.noise().apply(&clean)?;
        Ok((noisy.map(|v| v.clamp(0.0, 255.0)), truth))
    }

    fn write_manifest(&mut self, command: &str, summary: &str) -> Result<()> {
        let mut text = format!(
            "# jointseg {} {command}\n# rerun with: jointseg {command} --config <this file>\n",
            env!("CARGO_PKG_VERSION")
        );
        for line in summary.lines() {
            let line = line.trim_start_matches("# ");
            let _ = writeln!(text, "# {line}");
        }
        let _ = writeln!(text, "{}", self.cfg);
        self.write_text("manifest.conf", &text)
    }
}

/// Folds per-iteration warnings (`outer k: message`) into one line per
/// message listing the iterations.
fn summarize_warnings(warnings: &[String]) -> Vec<String> {
    let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
    let mut plain = Vec::new();
    for w in warnings {
        let Some((k, msg)) = w.strip_prefix("outer ").and_then(|r| r.split_once(": ")) else {
            plain.push(w.clone());
            continue;
        };
        match grouped.iter_mut().find(|(m, _)| m == msg) {
            Some((_, ks)) => ks.push(k.to_string()),
            None => grouped.push((msg.to_string(), vec![k.to_string()])),
        }
    }
    grouped
        .into_iter()
        .map(|(msg, ks)| match ks.len() {
            1 => format!("outer {}: {msg}", ks[0]),
            n if n <= 8 => format!("outers {}: {msg}", ks.join(",")),
            n => format!("{msg} in {n} outer iterations (first {}, last {})", ks[0], ks[n - 1]),
        })
        .chain(plain)
        .collect()
}

fn config_error(message: impl Into<String>) -> Error {
    Error::Config {
        origin: "config".into(),
        message: message.into(),
    }
}

/// Renders the synthetic image of the config, plus its noisy version when
/// `noise` is set.
pub fn cmd_synth(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut ctx = Context::new(cfg, opts)?;
    let Some(ImageSource::Synth(spec)) = ctx.cfg.source.clone() else {
        return Err(config_error("synth needs synth_width, synth_height and regions"));
    };
    let img = synth(&spec)?;
    let p = ctx.path("clean.pgm");
    io::write_pgm(&p, &img.clean)?;
    let p = ctx.path("truth.pgm");
    io::write_labels(&p, &img.truth)?;
    let p = ctx.path("bias.f64");
    io::write_raster(&p, &img.bias)?;
    if ctx.cfg.noise != NoiseKind::None {
        let noisy = ctx.noise().apply(&img.clean)?;
        let p = ctx.path("noisy.pgm");
        io::write_pgm(&p, &noisy)?;
    }
    ctx.note(format!("synth: {}x{} image, {} phases", spec.width, spec.height, img.truth.n_phases()));
    ctx.write_manifest("synth", "")?;
    Ok(ctx.written)
}

/// Corrupts the configured image with the configured noise.
pub fn cmd_noise(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut ctx = Context::new(cfg, opts)?;
    if ctx.cfg.noise == NoiseKind::None {
        return Err(config_error("noise needs `noise = poisson` or `noise = gamma L`"));
    }
    let (noisy, _) = ctx.load_image()?;
    let p = ctx.path("noisy.pgm");
    io::write_pgm(&p, &noisy)?;
    ctx.note(format!("noise: wrote {}", p.display()));
    ctx.write_manifest("noise", "")?;
    Ok(ctx.written)
}

fn csv_num(v: f64) -> String {
    format!("{v:e}")
}

fn inner_rows(csv: &mut String, outer: usize, inner: &InnerLog) {
    let _ = writeln!(csv, "{outer},0,,,,,,,{},,,", csv_num(inner.z0 * inner.z0));
    for s in &inner.steps {
        let _ = writeln!(
            csv,
            "{outer},{},,,,,,,{},{},,{}",
            s.iter,
            csv_num(s.z * s.z),
            csv_num(s.xi),
            csv_num(s.err2)
        );
    }
}

/// The energy log: per outer iteration, one row per inner step (row 0 holds
/// the starting `z²`) followed by the outer row with the joint energy.
pub fn energy_csv(log: &IterationLog) -> String {
    let mut csv = format!("{ENERGY_CSV_HEADER}\n");
    for r in &log.outer {
        inner_rows(&mut csv, r.iter, &r.inner);
        let e = &r.energy;
        let _ = writeln!(
            csv,
            "{},,{},{},{},{},{},{},,,{},",
            r.iter,
            csv_num(e.fit),
            csv_num(e.length),
            csv_num(e.idiv),
            csv_num(e.tv),
            csv_num(e.total),
            csv_num(r.e_u_after),
            csv_num(r.err1)
        );
    }
    csv
}

fn metric_report(pred: &IndicatorSet, truth: &IndicatorSet) -> Result<String> {
    let (aligned, map) = metrics::align_phases(pred, truth)?;
    let mut text = String::new();
    if map.iter().enumerate().any(|(i, m)| i != *m) {
        let pairs: Vec<String> = map.iter().enumerate().map(|(i, m)| format!("{i}->{m}")).collect();
        let _ = writeln!(text, "# predicted phases relabelled {}", pairs.join(" "));
    }
    for c in metrics::multiphase_report(&aligned, truth, &[])? {
        let _ = writeln!(text, "{}\t{}", c.name, c.scores);
    }
    Ok(text)
}

/// Full joint segmentation.
pub fn cmd_segment(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut ctx = Context::new(cfg, opts)?;
    let (f, truth) = ctx.load_image()?;
    let params = ctx.cfg.params.clone();
    let init = ctx.cfg.init.build(&f, params.n_phases)?;
    ctx.note(format!(
        "segment: {}x{} image, {} phases, init {}",
        f.width(),
        f.height(),
        params.n_phases,
        ctx.cfg.init
    ));
    if matches!(ctx.cfg.source, Some(ImageSource::Synth(_))) || ctx.cfg.noise != NoiseKind::None {
        let p = ctx.path("input.pgm");
        io::write_pgm(&p, &f)?;
    }

    let seg = Segmenter::new(&f, &params)?;
    let (state, log) = seg.run(&init)?;
    for r in &log.outer {
        ctx.note(format!(
            "outer {:>4}  inner {:>3}  E_u {:.6e}  err1 {:.3}",
            r.iter,
            r.inner.steps.len(),
            r.e_u_after,
            r.err1
        ));
    }
    let warnings = summarize_warnings(&log.warnings);
    for w in &warnings {
        ctx.note(format!("warning: {w}"));
    }

    for (i, m) in state.u.masks().iter().enumerate() {
        let p = ctx.path(&format!("phase{i}.pgm"));
        io::write_mask(&p, m)?;
    }
    let p = ctx.path("labels.pgm");
    io::write_labels(&p, &state.u)?;
    let p = ctx.path("denoised.pgm");
    io::write_pgm(&p, &state.g)?;
    let p = ctx.path("denoised.f64");
    io::write_raster(&p, &state.g)?;
    let p = ctx.path("bias.f64");
    io::write_raster(&p, &state.b)?;
    let corrected = f.zip_map(&state.b, |v, b| (v / b).clamp(0.0, 255.0));
    let p = ctx.path("corrected.pgm");
    io::write_pgm(&p, &corrected)?;
    ctx.write_text("energy.csv", &energy_csv(&log))?;

    let mut summary = format!(
        "outer iterations: {}, converged: {}\nconstants: {}\n",
        log.outer.len(),
        log.converged,
        state
            .c
            .iter()
            .map(|c| format!("{c:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    for w in &warnings {
        let _ = writeln!(summary, "warning: {w}");
    }
    if let Some(t) = &truth {
        let report = metric_report(&state.u, t)?;
        ctx.note(report.trim_end());
        ctx.write_text("metrics.txt", &report)?;
        summary.push_str(&report);
    }
    ctx.write_manifest("segment", &summary)?;
    Ok(ctx.written)
}

/// Denoising alone (`b ≡ 1`, no fitting term).
pub fn cmd_denoise(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut ctx = Context::new(cfg, opts)?;
    let (f, _) = ctx.load_image()?;
    if ctx.cfg.noise != NoiseKind::None {
        let p = ctx.path("input.pgm");
        io::write_pgm(&p, &f)?;
    }
    let (g, log) = solver::denoise(&f, &ctx.cfg.params)?;
    ctx.note(format!(
        "denoise: {} steps{}",
        log.steps.len(),
        if log.hit_cap { " (hit max_inner)" } else { "" }
    ));
    let p = ctx.path("denoised.pgm");
    io::write_pgm(&p, &g)?;
    let p = ctx.path("denoised.f64");
    io::write_raster(&p, &g)?;
    let mut csv = format!("{ENERGY_CSV_HEADER}\n");
    inner_rows(&mut csv, 1, &log);
    ctx.write_text("energy.csv", &csv)?;
    ctx.write_manifest("denoise", &format!("inner steps: {}", log.steps.len()))?;
    Ok(ctx.written)
}

fn is_binary_mask(f: &ScalarField) -> bool {
    f.values().iter().all(|v| *v == 0.0 || *v == 255.0)
}

/// Scores `pred` against `truth`. Two 0/255 masks give one line; label maps
/// give one one-vs-rest line per phase, without relabelling.
pub fn cmd_metrics(pred: &Path, truth: &Path, opts: &RunOptions) -> Result<String> {
    let (a, b) = (io::read_pgm(pred)?, io::read_pgm(truth)?);
    a.check_shape(&b, "metrics inputs")?;
    let report = if is_binary_mask(&a) && is_binary_mask(&b) {
        let bin = |f: &ScalarField| f.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let c = metrics::confusion(&bin(&a), &bin(&b))?;
        format!("{}\n", MetricRow::from_counts(&c)?)
    } else {
        let n = (a.max().max(b.max()) as usize + 1).max(2);
        let (u, v) = (io::read_labels(pred, n)?, io::read_labels(truth, n)?);
        let mut text = String::new();
        for c in metrics::multiphase_report(&u, &v, &[])? {
            let _ = writeln!(text, "{}\t{}", c.name, c.scores);
        }
        text
    };
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("metrics.txt");
        fs::write(&p, &report).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
