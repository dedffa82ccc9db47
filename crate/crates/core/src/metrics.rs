//! Overlap scores for binary masks and one-vs-rest reports for partitions.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::model::IndicatorSet;

/// Pixel counts of a binary prediction against a binary reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    /// False negatives.
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn require_pixels(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::contract("metrics need at least one pixel")),
            n => Ok(n as f64),
        }
    }
}

fn binary(field: &ScalarField, what: &str) -> Result<Vec<bool>> {
    field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if *v == 1.0 {
                Ok(true)
            } else if *v == 0.0 {
                Ok(false)
            } else {
                Err(Error::contract(format!(
                    "{what} mask is not binary (pixel {i} is {v})"
                )))
            }
        })
        .collect()
}

/// Counts for two 0/1 masks of equal shape.
pub fn confusion(pred: &ScalarField, truth: &ScalarField) -> Result<ConfusionCounts> {
    pred.check_shape(truth, "confusion")?;
    let (p, t) = (binary(pred, "predicted")?, binary(truth, "reference")?);
    let mut c = ConfusionCounts::default();
    for (a, b) in p.into_iter().zip(t) {
        c.add(a, b);
    }
    Ok(c)
}

/// Phase `phase` of `pred` against the same phase of `truth`.
pub fn confusion_for_phase(
    pred: &IndicatorSet,
    truth: &IndicatorSet,
    phase: usize,
) -> Result<ConfusionCounts> {
    check_partitions(pred, truth)?;
    if phase >= pred.n_phases() {
        return Err(Error::param(format!(
            "phase {phase} out of range for {} phases",
            pred.n_phases()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (a, b) in pred.labels().iter().zip(truth.labels()) {
        c.add(*a as usize == phase, *b as usize == phase);
    }
    Ok(c)
}

fn check_partitions(pred: &IndicatorSet, truth: &IndicatorSet) -> Result<()> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::dims(format!(
            "partitions differ in size: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if pred.n_phases() != truth.n_phases() {
        return Err(Error::dims(format!(
            "partitions differ in phase count: {} vs {}",
            pred.n_phases(),
            truth.n_phases()
        )));
    }
    Ok(())
}

/// `2tp / (2tp + fp + fn)`, or 1 when both masks are empty.
pub fn dsc(c: &ConfusionCounts) -> Result<f64> {
    c.require_pixels()?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 1.0 } else { (2 * c.tp) as f64 / den as f64 })
}

/// `tp / (tp + fp + fn)`, or 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> Result<f64> {
    c.require_pixels()?;
    let den = c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 1.0 } else { c.tp as f64 / den as f64 })
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let n = c.require_pixels()?;
    Ok((c.tp + c.tn) as f64 / n)
}

/// Cohen's κ with its chance-agreement flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1 (both masks constant and equal), so κ is set to 1.
    pub degenerate: bool,
}

pub fn kappa(c: &ConfusionCounts) -> Result<Kappa> {
    let n = c.require_pixels()?;
    let po = (c.tp + c.tn) as f64 / n;
    let pe = ((c.tp + c.fp) as f64 * (c.tp + c.fn_) as f64
        + (c.fn_ + c.tn) as f64 * (c.fp + c.tn) as f64)
        / (n * n);
    if 1.0 - pe <= f64::EPSILON {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (po - pe) / (1.0 - pe),
        degenerate: false,
    })
}

/// All four scores for one set of counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub dsc: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub kappa: Kappa,
}

impl MetricRow {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        Ok(Self {
            dsc: dsc(c)?,
            iou: iou(c)?,
            accuracy: accuracy(c)?,
            kappa: kappa(c)?,
        })
    }
}

impl fmt::Display for MetricRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DSC {:.4}  IoU {:.4}  Acc {:.4}  kappa {:.4}",
            self.dsc, self.iou, self.accuracy, self.kappa.value
        )?;
        if self.kappa.degenerate {
            write!(f, " (chance agreement 1)")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub name: String,
    pub counts: ConfusionCounts,
    pub scores: MetricRow,
}

/// One-vs-rest scores per phase. `class_names` is either empty (phases are
/// named `phase0`, `phase1`, …) or has one entry per phase.
pub fn multiphase_report(
    pred: &IndicatorSet,
    truth: &IndicatorSet,
    class_names: &[&str],
) -> Result<Vec<ClassReport>> {
    check_partitions(pred, truth)?;
    let n = pred.n_phases();
    if !class_names.is_empty() && class_names.len() != n {
        return Err(Error::param(format!(
            "{} class names for {n} phases",
            class_names.len()
        )));
    }
    (0..n)
        .map(|i| {
            let counts = confusion_for_phase(pred, truth, i)?;
            Ok(ClassReport {
                name: class_names
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("phase{i}")),
                counts,
                scores: MetricRow::from_counts(&counts)?,
            })
        })
        .collect()
}

/// Relabels `pred` so that its phases overlap `truth` as much as possible.
///
/// Phase indices out of a segmentation are arbitrary; the returned map sends
/// predicted phase `i` to `map[i]`. Exhaustive up to 8 phases, greedy beyond.
pub fn align_phases(pred: &IndicatorSet, truth: &IndicatorSet) -> Result<(IndicatorSet, Vec<usize>)> {
    check_partitions(pred, truth)?;
    let n = pred.n_phases();
    let mut overlap = vec![vec![0u64; n]; n];
    for (a, b) in pred.labels().iter().zip(truth.labels()) {
        overlap[*a as usize][*b as usize] += 1;
    }
    let map = if n <= 8 {
        best_permutation(&overlap)
    } else {
        greedy_assignment(&overlap)
    };
    Ok((pred.permuted(&map)?, map))
}

fn best_permutation(overlap: &[Vec<u64>]) -> Vec<usize> {
    fn search(
        i: usize,
        overlap: &[Vec<u64>],
        used: &mut [bool],
        cur: &mut Vec<usize>,
        score: u64,
        best: &mut (u64, Vec<usize>),
    ) {
        let n = overlap.len();
        if i == n {
            if score > best.0 || best.1.is_empty() {
                *best = (score, cur.clone());
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                search(i + 1, overlap, used, cur, score + overlap[i][j], best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let n = overlap.len();
    let mut best = (0, Vec::new());
    search(0, overlap, &mut vec![false; n], &mut Vec::new(), 0, &mut best);
    best.1
}

fn greedy_assignment(overlap: &[Vec<u64>]) -> Vec<usize> {
    let n = overlap.len();
    let mut pairs: Vec<(u64, usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (overlap[i][j], i, j))
        .collect();
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut map = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (_, i, j) in pairs {
        if map[i] == usize::MAX && !taken[j] {
            map[i] = j;
            taken[j] = true;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[f64]) -> ScalarField {
        ScalarField::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_example() {
        let c = confusion(&mask(&[1., 1., 0., 0.]), &mask(&[1., 0., 0., 0.])).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 0, 2));
        let row = MetricRow::from_counts(&c).unwrap();
        assert!((row.dsc - 2.0 / 3.0).abs() < 1e-15);
        assert!((row.iou - 0.5).abs() < 1e-15);
        assert!((row.accuracy - 0.75).abs() < 1e-15);
        assert!((row.kappa.value - 0.5).abs() < 1e-15);
        assert!(!row.kappa.degenerate);
    }

    #[test]
    fn identical_and_complementary_masks() {
        let t = mask(&[1., 0., 1., 1., 0.]);
        let c = confusion(&t, &t).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let row = MetricRow::from_counts(&c).unwrap();
        assert_eq!((row.dsc, row.iou, row.accuracy, row.kappa.value), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(row.to_string(), "DSC 1.0000  IoU 1.0000  Acc 1.0000  kappa 1.0000");

        let inv = t.map(|v| 1.0 - v);
        let c = confusion(&inv, &t).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));

        let half = confusion(&mask(&[1., 1., 0., 0.]), &mask(&[0., 0., 1., 1.])).unwrap();
        assert_eq!(dsc(&half).unwrap(), 0.0);
        assert_eq!(iou(&half).unwrap(), 0.0);
    }

    #[test]
    fn empty_masks_and_degenerate_kappa() {
        let z = mask(&[0., 0., 0.]);
        let c = confusion(&z, &z).unwrap();
        assert_eq!(dsc(&c).unwrap(), 1.0);
        assert_eq!(iou(&c).unwrap(), 1.0);
        let k = kappa(&c).unwrap();
        assert!(k.degenerate && k.value == 1.0);
        assert!(dsc(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn rejects_non_binary_and_mismatched() {
        assert!(confusion(&mask(&[0.5, 1.0]), &mask(&[0.0, 1.0])).is_err());
        assert!(confusion(&mask(&[0.0]), &mask(&[0.0, 1.0])).is_err());
    }

    fn toy() -> (IndicatorSet, IndicatorSet) {
        let pred = IndicatorSet::from_labels(4, 2, 3, vec![0, 0, 1, 2, 2, 1, 1, 0]).unwrap();
        let truth = IndicatorSet::from_labels(4, 2, 3, vec![0, 1, 1, 2, 2, 2, 1, 0]).unwrap();
        (pred, truth)
    }

    #[test]
    fn three_phase_one_vs_rest() {
        let (pred, truth) = toy();
        let rep = multiphase_report(&pred, &truth, &["a", "b", "c"]).unwrap();
        // hand counts per class
        assert_eq!(rep[0].counts, ConfusionCounts::new(2, 1, 0, 5));
        assert_eq!(rep[1].counts, ConfusionCounts::new(2, 1, 1, 4));
        assert_eq!(rep[2].counts, ConfusionCounts::new(2, 0, 1, 5));
        assert_eq!(rep[1].name, "b");
        assert!((rep[1].scores.dsc - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(multiphase_report(&pred, &pred, &[]).unwrap()[2].name, "phase2");
        assert!(multiphase_report(&pred, &truth, &["x"]).is_err());
    }

    #[test]
    fn identical_permutation_leaves_scores() {
        let (pred, truth) = toy();
        let map = [2, 0, 1];
        let a = multiphase_report(&pred, &truth, &[]).unwrap();
        let b = multiphase_report(&pred.permuted(&map).unwrap(), &truth.permuted(&map).unwrap(), &[])
            .unwrap();
        for i in 0..3 {
            assert_eq!(a[i].scores, b[map[i]].scores);
        }
    }

    #[test]
    fn alignment_undoes_relabeling() {
        let (_, truth) = toy();
        let shuffled = truth.permuted(&[1, 2, 0]).unwrap();
        let (aligned, map) = align_phases(&shuffled, &truth).unwrap();
        assert_eq!(aligned, truth);
        assert_eq!(map, vec![2, 0, 1]);
        assert_eq!(greedy_assignment(&[vec![0, 5], vec![7, 1]]), vec![1, 0]);
    }
}
