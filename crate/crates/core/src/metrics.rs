//! Clustering agreement measures in nats, computed from a contingency table.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[a][b]`: examples with true label `a` and predicted label `b`.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    let ids = labels
        .iter()
        .map(|l| seen.binary_search(l).expect("label present"))
        .collect();
    (ids, seen.len())
}

pub fn contingency(true_labels: &[usize], pred_labels: &[usize]) -> Result<ContingencyTable> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::arg(format!(
            "label lengths differ: {} vs {}",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    if true_labels.is_empty() {
        return Err(Error::arg("no labels"));
    }
    let (t, nt) = dense_ids(true_labels);
    let (p, np) = dense_ids(pred_labels);
    let mut counts = vec![vec![0u64; np]; nt];
    for (&a, &b) in t.iter().zip(&p) {
        counts[a][b] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: true_labels.len() as u64,
    })
}

impl ContingencyTable {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols)
            .map(|b| self.counts.iter().map(|r| r[b]).sum())
            .collect()
    }
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn mutual_info(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut mi = 0.0;
    for (a, row) in table.counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[a] as f64 * cols[b] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Harmonic mean of homogeneity and completeness.
///
/// Homogeneity is 1 when the true labels have zero entropy, completeness is 1
/// when the predictions have zero entropy.
pub fn v_measure(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let h_true = entropy(&table.row_sums(), n);
    let h_pred = entropy(&table.col_sums(), n);
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut h_true_given_pred = 0.0;
    let mut h_pred_given_true = 0.0;
    for (a, row) in table.counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                h_true_given_pred -= c / n * (c / cols[b] as f64).ln();
                h_pred_given_true -= c / n * (c / rows[a] as f64).ln();
            }
        }
    }
    let h = if h_true == 0.0 { 1.0 } else { 1.0 - h_true_given_pred / h_true };
    let c = if h_pred == 0.0 { 1.0 } else { 1.0 - h_pred_given_true / h_pred };
    let (h, c) = (h.clamp(0.0, 1.0), c.clamp(0.0, 1.0));
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}

fn pairs(c: u64) -> u64 {
    c * c.saturating_sub(1) / 2
}

/// `TP / sqrt((TP + FP)(TP + FN))` over example pairs.
pub fn fowlkes_mallows(table: &ContingencyTable) -> f64 {
    let tp: u64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let same_pred: u64 = table.col_sums().into_iter().map(pairs).sum();
    let same_true: u64 = table.row_sums().into_iter().map(pairs).sum();
    if same_pred == 0 || same_true == 0 {
        return 0.0;
    }
    tp as f64 / ((same_pred as f64) * (same_true as f64)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterScores {
    pub v_measure: f64,
    pub mutual_info: f64,
    pub fowlkes_mallows: f64,
}

pub fn cluster_scores(true_labels: &[usize], pred_labels: &[usize]) -> Result<ClusterScores> {
    let t = contingency(true_labels, pred_labels)?;
    Ok(ClusterScores {
        v_measure: v_measure(&t),
        mutual_info: mutual_info(&t),
        fowlkes_mallows: fowlkes_mallows(&t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossed_table() {
        let t = contingency(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(mutual_info(&t), 0.0);
        assert_eq!(v_measure(&t), 0.0);
        assert_eq!(fowlkes_mallows(&t), 0.0);
    }

    #[test]
    fn perfect_clustering() {
        let t = contingency(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap();
        assert_eq!(t.counts, vec![vec![0, 2], vec![2, 0]]);
        assert!((mutual_info(&t) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v_measure(&t), 1.0);
        assert_eq!(fowlkes_mallows(&t), 1.0);
    }

    #[test]
    fn single_cluster() {
        let t = contingency(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(v_measure(&t), 0.0);
        assert_eq!(mutual_info(&t), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(contingency(&[0, 1], &[0]).is_err());
        assert!(contingency(&[], &[]).is_err());
    }
}
