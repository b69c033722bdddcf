//! Clustering quality and estimation accuracy.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::data::CoefficientVector;
use crate::error::{Error, Result};
use crate::partition::LevelPartition;

fn check_same_elements(a: &LevelPartition, b: &LevelPartition) -> Result<()> {
    if a.n_elements() != b.n_elements() {
        return Err(Error::ElementMismatch {
            left: a.n_elements(),
            right: b.n_elements(),
        });
    }
    Ok(())
}

fn contingency(a: &LevelPartition, b: &LevelPartition) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; b.n_blocks()]; a.n_blocks()];
    for (la, lb) in a.labels().into_iter().zip(b.labels()) {
        table[la][lb] += 1;
    }
    table
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Hubert-Arabie adjusted Rand index. Returns 1 when the chance correction
/// is degenerate, which only happens for identical partitions.
pub fn adjusted_rand(a: &LevelPartition, b: &LevelPartition) -> Result<f64> {
    check_same_elements(a, b)?;
    let table = contingency(a, b);
    let index: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..b.n_blocks())
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(a.n_elements() as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Share of elements that must change block to turn `estimate` into
/// `truth`, under the best one-to-one matching of blocks.
pub fn error_rate(truth: &LevelPartition, estimate: &LevelPartition) -> Result<f64> {
    check_same_elements(truth, estimate)?;
    let table = contingency(truth, estimate);
    let (nt, ne) = (truth.n_blocks(), estimate.n_blocks());
    let weights = if nt <= ne {
        Matrix::from_fn(nt, ne, |(i, j)| table[i][j] as i64)
    } else {
        Matrix::from_fn(ne, nt, |(i, j)| table[j][i] as i64)
    };
    let (matched, _) = kuhn_munkres(&weights);
    let n = truth.n_elements();
    Ok((n as i64 - matched) as f64 / n as f64)
}

/// Pair classifications. A pair is "positive" when the truth puts its two
/// elements in different blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Split in both.
    pub tp: u64,
    /// Fused in the truth, split in the estimate.
    pub fp: u64,
    /// Fused in both.
    pub tn: u64,
    /// Split in the truth, fused in the estimate.
    pub fn_: u64,
}

impl PairCounts {
    /// `FP / (FP + TN)`, undefined when the truth fuses no pair.
    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }

    /// `FN / (TP + FN)`, undefined when the truth splits no pair.
    pub fn fnr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.fn_ as f64 / d as f64)
    }
}

pub fn pair_counts(truth: &LevelPartition, estimate: &LevelPartition) -> Result<PairCounts> {
    check_same_elements(truth, estimate)?;
    let (lt, le) = (truth.labels(), estimate.labels());
    let mut c = PairCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for g in 0..lt.len() {
        for h in g + 1..lt.len() {
            match (lt[g] != lt[h], le[g] != le[h]) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

pub fn fpr_fnr(truth: &LevelPartition, estimate: &LevelPartition) -> Result<(Option<f64>, Option<f64>)> {
    let c = pair_counts(truth, estimate)?;
    Ok((c.fpr(), c.fnr()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub ar: f64,
    pub err: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    /// Number of blocks in the estimate, the zero block included.
    pub group_count: usize,
    pub pairs: PairCounts,
}

pub fn cluster_metrics(truth: &LevelPartition, estimate: &LevelPartition) -> Result<ClusterMetrics> {
    let pairs = pair_counts(truth, estimate)?;
    Ok(ClusterMetrics {
        ar: adjusted_rand(truth, estimate)?,
        err: error_rate(truth, estimate)?,
        fpr: pairs.fpr(),
        fnr: pairs.fnr(),
        group_count: estimate.n_blocks(),
        pairs,
    })
}

/// Mean squared error over the intercept and the level effects, divided by
/// `C + 1`.
pub fn mse(truth: &CoefficientVector, estimate: &CoefficientVector) -> Result<f64> {
    if truth.layout() != estimate.layout() {
        return Err(Error::LayoutMismatch {
            expected: truth.layout().len(),
            got: estimate.layout().len(),
        });
    }
    let mut sum = (truth.intercept - estimate.intercept).powi(2);
    let mut count = 1;
    for (t, e) in truth.effects.iter().zip(&estimate.effects) {
        for (a, b) in t.iter().zip(e) {
            sum += (a - b).powi(2);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean squared prediction error of `X_new * beta` for `y_new`.
pub fn mspe(beta: &[f64], x_new: &DMatrix<f64>, y_new: &[f64]) -> Result<f64> {
    if x_new.ncols() != beta.len() || x_new.nrows() != y_new.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, coefficients {}, responses {}",
            x_new.nrows(),
            x_new.ncols(),
            beta.len(),
            y_new.len()
        )));
    }
    if y_new.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sum: f64 = (0..x_new.nrows())
        .map(|i| {
            let fit: f64 = x_new.row(i).iter().zip(beta).map(|(x, b)| x * b).sum();
            (y_new[i] - fit).powi(2)
        })
        .sum();
    Ok(sum / y_new.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(labels: &[usize]) -> LevelPartition {
        LevelPartition::from_labels("a", labels)
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand(&p(&[0, 0, 1, 1]), &p(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert!(adjusted_rand(&p(&[0, 0, 1, 1]), &p(&[0, 0, 0, 1])).unwrap().abs() < 1e-15);
        assert_eq!(adjusted_rand(&p(&[0, 0, 0]), &p(&[0, 0, 0])).unwrap(), 1.0);
        assert_eq!(adjusted_rand(&p(&[0, 1, 2]), &p(&[0, 1, 2])).unwrap(), 1.0);
        // index 2, row pairs 4, column pairs 2, total 10
        let ar = adjusted_rand(&p(&[0, 0, 0, 1, 1]), &p(&[0, 0, 1, 2, 2])).unwrap();
        let (i, r, c, t) = (2.0f64, 4.0, 2.0, 10.0);
        assert!((ar - (i - r * c / t) / (0.5 * (r + c) - r * c / t)).abs() < 1e-15);
        assert!(adjusted_rand(&p(&[0, 1]), &p(&[0, 1, 2])).is_err());
    }

    #[test]
    fn error_rate_examples() {
        let truth = p(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(error_rate(&truth, &truth).unwrap(), 0.0);
        let moved = p(&[0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        assert!((error_rate(&truth, &moved).unwrap() - 0.1).abs() < 1e-15);
        let three = p(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let single: Vec<usize> = (0..9).collect();
        assert!((error_rate(&three, &p(&single)).unwrap() - 6.0 / 9.0).abs() < 1e-15);
        assert!((error_rate(&p(&single), &three).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn fpr_fnr_examples() {
        let t = p(&[0, 0, 1, 1]);
        assert_eq!(fpr_fnr(&t, &t).unwrap(), (Some(0.0), Some(0.0)));
        let (_, fnr) = fpr_fnr(&p(&[0, 0, 0]), &p(&[0, 1, 1])).unwrap();
        assert_eq!(fnr, None);
        assert_eq!(fpr_fnr(&t, &p(&[0, 1, 2, 3])).unwrap(), (Some(1.0), Some(0.0)));
        let c = pair_counts(&t, &p(&[0, 1, 1, 2])).unwrap();
        assert_eq!(c.tp + c.fp + c.tn + c.fn_, 6);
    }

    #[test]
    fn mse_and_mspe() {
        let t = CoefficientVector { intercept: 0.0, effects: vec![vec![1.0]], continuous: vec![] };
        let e = CoefficientVector { intercept: 0.0, effects: vec![vec![0.0]], continuous: vec![] };
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        assert_eq!(mse(&t, &e).unwrap(), 0.5);
        let x = DMatrix::from_element(4, 1, 1.0);
        assert_eq!(mspe(&[1.0], &x, &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(mspe(&[1.0], &x, &[1.0; 4]).unwrap(), 0.0);
        assert!(mspe(&[1.0, 2.0], &x, &[0.0; 4]).is_err());
    }
}
