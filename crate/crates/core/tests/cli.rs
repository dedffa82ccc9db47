//! End-to-end runs of the `jointseg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jointseg::io::read_pgm;
use tempfile::TempDir;

const DISK: &str = "\
synth_width = 40
synth_height = 40
synth_background = 60
region = disk 18 20 9 160 1
init = circle 14 16 8
gamma = 0
nu = 0
update_denoised = false
";

fn jointseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn segment_recovers_a_noiseless_disk() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "disk.conf", DISK);
    let out = dir.path().join("run");
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let listed = String::from_utf8_lossy(&o.stdout);
    for name in [
        "phase0.pgm", "phase1.pgm", "labels.pgm", "denoised.pgm", "denoised.f64", "bias.f64",
        "corrected.pgm", "energy.csv", "metrics.txt", "manifest.conf",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
        assert!(listed.contains(name), "{name} not listed");
    }
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(metrics.matches("DSC 1.0000  IoU 1.0000  Acc 1.0000  kappa 1.0000").count(), 2, "{metrics}");

    let labels = read_pgm(out.join("labels.pgm")).unwrap();
    let mask = read_pgm(out.join("phase1.pgm")).unwrap();
    for (l, m) in labels.values().iter().zip(mask.values()) {
        assert_eq!(*m, if *l == 1.0 { 255.0 } else { 0.0 });
    }
}

#[test]
fn energy_log_has_the_documented_columns() {
    let dir = TempDir::new().unwrap();
    let body = "synth_width = 24\nsynth_height = 24\nsynth_background = 60\n\
                region = disk 12 12 6 160 1\nnoise = gamma 10\ninit = circle 10 10 5\n\
                max_outer = 3\nmax_inner = 4\n";
    let cfg = write_config(&dir, "joint.conf", body);
    let out = dir.path().join("run");
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(out.join("energy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "outer_iter,inner_iter,E_fit,E_len,E_idiv,E_tv,E_total,E_u,z_sq,xi,err1,err2"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 12));
    let outer: Vec<_> = rows.iter().filter(|r| r[1].is_empty()).collect();
    assert_eq!(outer.len(), 3);
    for r in outer {
        let parts: Vec<f64> = r[2..7].iter().map(|v| v.parse().unwrap()).collect();
        assert!((parts[0] + parts[1] + parts[2] + parts[3] - parts[4]).abs() <= 1e-9 * parts[4].abs());
        assert!(r[8].is_empty() && r[9].is_empty() && !r[10].is_empty());
    }
    for r in rows.iter().filter(|r| !r[1].is_empty() && r[1] != "0") {
        let z: f64 = r[8].parse().unwrap();
        let xi: f64 = r[9].parse().unwrap();
        assert!(z > 0.0 && (0.0..=1.0).contains(&xi));
    }
}

#[test]
fn manifest_reproduces_every_output() {
    let dir = TempDir::new().unwrap();
    let body = "synth_width = 24\nsynth_height = 24\nsynth_background = 60\n\
                region = disk 12 12 6 160 1\nbias = ramp 0.8 1.2\nnoise = gamma 4\n\
                init = checkerboard 6\nmax_outer = 3\nmax_inner = 3\nseed = 11\n";
    let cfg = write_config(&dir, "first.conf", body);
    let first = dir.path().join("first");
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(&first), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("second");
    let manifest = first.join("manifest.conf");
    let o = jointseg(&["segment", "--config", s(&manifest), "--out", s(&second), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["input.pgm", "labels.pgm", "denoised.f64", "bias.f64", "energy.csv"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let without_out = |d: &Path| {
        let text = fs::read_to_string(d.join("manifest.conf")).unwrap();
        text.lines().filter(|l| !l.starts_with("out =")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(without_out(&first), without_out(&second));
}

#[test]
fn synth_and_noise_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let body = "synth_width = 30\nsynth_height = 20\nsynth_background = 50\n\
                region = rect 5 5 10 8 200 1\nbias = bump 1 2 10\nnoise = gamma 10\n";
    let cfg = write_config(&dir, "s.conf", body);
    let run = |sub: &str, seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = jointseg(&[sub, "--config", s(&cfg), "--seed", seed, "--out", s(&out), "--quiet"]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("synth", "5", "a");
    for name in ["clean.pgm", "truth.pgm", "bias.f64", "noisy.pgm", "manifest.conf"] {
        assert!(a.join(name).exists(), "missing {name}");
    }
    let truth = read_pgm(a.join("truth.pgm")).unwrap();
    assert_eq!(truth.values().iter().filter(|v| **v == 1.0).count(), 80);

    let n1 = run("noise", "5", "n1");
    let n2 = run("noise", "5", "n2");
    let n3 = run("noise", "6", "n3");
    let bytes = |d: &Path| fs::read(d.join("noisy.pgm")).unwrap();
    assert_eq!(bytes(&n1), bytes(&n2));
    assert_ne!(bytes(&n1), bytes(&n3));
    assert_eq!(bytes(&a), bytes(&n1));
}

#[test]
fn denoise_writes_its_outputs() {
    let dir = TempDir::new().unwrap();
    let body = "synth_width = 16\nsynth_height = 16\nsynth_background = 80\n\
                region = disk 8 8 4 180 1\nnoise = gamma 10\nmax_inner = 5\n";
    let cfg = write_config(&dir, "d.conf", body);
    let out = dir.path().join("d");
    let o = jointseg(&["denoise", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["input.pgm", "denoised.pgm", "denoised.f64", "energy.csv", "manifest.conf"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn metrics_scores_masks_and_label_maps() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "disk.conf", DISK);
    let out = dir.path().join("s");
    let o = jointseg(&["synth", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = out.join("truth.pgm");
    let o = jointseg(&["metrics", s(&truth), s(&truth)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("DSC 1.0000  IoU 1.0000  Acc 1.0000  kappa 1.0000").count(), 2, "{text}");

    let seg = dir.path().join("seg");
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(&seg), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = seg.join("phase1.pgm");
    let o = jointseg(&["metrics", s(&mask), s(&mask), "--out", s(&seg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.contains("DSC 1.0000  IoU 1.0000  Acc 1.0000  kappa 1.0000"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.conf");
    let o = jointseg(&["segment", "--config", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(&dir, "bad.conf", &format!("{DISK}bogus = 1\n"));
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":9: unknown key \"bogus\""), "{}", stderr(&o));

    let cfg = write_config(&dir, "neg.conf", &format!("{DISK}mu = -1\n"));
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(&dir, "noout.conf", DISK);
    let o = jointseg(&["segment", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_with_3() {
    // In raw 8-bit units the I-divergence is far below −C0, so the auxiliary
    // variable has no real square root.
    let dir = TempDir::new().unwrap();
    let body = DISK
        .replace("gamma = 0", "gamma = 10")
        .replace("update_denoised = false", "intensity_scale = 1");
    let cfg = write_config(&dir, "raw.conf", &body);
    let o = jointseg(&["segment", "--config", s(&cfg), "--out", s(dir.path()), "--quiet"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numerical failure"));
}
