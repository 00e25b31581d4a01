//! Clustering and map quality measures.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::measures::column;

/// Cluster labels, one per sample. Ids need not be contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("partition is empty".into()));
        }
        Ok(Partition { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels mapped to `0..C` in order of first appearance.
    fn dense(&self) -> (Vec<usize>, usize) {
        let mut ids = BTreeMap::new();
        let dense = self
            .labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(*l).or_insert(next)
            })
            .collect();
        (dense, ids.len())
    }
}

fn contingency(pred: &Partition, truth: &Partition) -> Result<DMatrix<f64>> {
    check_len("partition length", truth.len(), pred.len())?;
    let (p, np) = pred.dense();
    let (t, nt) = truth.dense();
    let mut table = DMatrix::zeros(np, nt);
    for (a, b) in p.iter().zip(&t) {
        table[(*a, *b)] += 1.0;
    }
    Ok(table)
}

/// Minimum-cost perfect matching on a square cost matrix (row `i` is
/// matched to column `out[i]`), using the potentials form of the Hungarian
/// method.
fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    // owner[j] is the row matched to column j (1-based, 0 = free).
    let mut owner = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[owner[j] - 1] = j - 1;
    }
    out
}

/// Best agreement fraction over one-to-one matchings of predicted to true
/// cluster ids.
pub fn cluster_accuracy(pred: &Partition, truth: &Partition) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = table.nrows().max(table.ncols());
    let mut cost = DMatrix::zeros(n, n);
    for r in 0..table.nrows() {
        for c in 0..table.ncols() {
            cost[(r, c)] = -table[(r, c)];
        }
    }
    let matching = hungarian(&cost);
    let hits: f64 = matching
        .iter()
        .enumerate()
        .map(|(r, &c)| -cost[(r, c)])
        .sum();
    Ok(hits / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the entropies
/// (natural log).
pub fn nmi(pred: &Partition, truth: &Partition) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let total = pred.len() as f64;
    let rows: Vec<f64> = table.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = table.column_iter().map(|c| c.sum()).collect();
    let hp = entropy(rows.iter().copied(), total);
    let ht = entropy(cols.iter().copied(), total);
    if hp == 0.0 || ht == 0.0 {
        let (p, _) = pred.dense();
        let (t, _) = truth.dense();
        return Ok(if p == t { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for r in 0..table.nrows() {
        for c in 0..table.ncols() {
            let n = table[(r, c)];
            if n > 0.0 {
                mi += n / total * (n * total / (rows[r] * cols[c])).ln();
            }
        }
    }
    Ok((mi.max(0.0) / (hp * ht).sqrt()).min(1.0))
}

/// `σ_max / σ_min` over the `min(M, N)` singular values; infinite when
/// `σ_min < 1e-14·σ_max`.
pub fn conditioning(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() || a.iter().all(|v| *v == 0.0) {
        return Err(Error::Numeric("conditioning of a zero map".into()));
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min < 1e-14 * max {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Mean of `|cos|` over unordered pairs of distinct rows.
pub fn coherence(a: &DMatrix<f64>) -> Result<f64> {
    let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|n| *n == 0.0) {
        return Err(Error::Numeric(format!("coherence: row {i} is zero")));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y).sum();
            sum += (dot.abs() / (norms[i] * norms[j])).min(1.0);
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Conditioning and coherence of a learned map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapDiagnostics {
    pub kappa: f64,
    pub mu: f64,
}

impl MapDiagnostics {
    pub fn of(a: &DMatrix<f64>) -> Result<Self> {
        Ok(MapDiagnostics {
            kappa: conditioning(a)?,
            mu: coherence(a)?,
        })
    }
}

/// Exact k-nearest-neighbour majority vote. Samples are columns. Equal
/// distances prefer the lower training index and tied votes the smaller
/// label.
pub fn knn_classify(
    train: &DMatrix<f64>,
    train_labels: &Partition,
    test: &DMatrix<f64>,
    k: usize,
) -> Result<Partition> {
    check_len("training labels", train.ncols(), train_labels.len())?;
    check_len("k-NN dimension", train.nrows(), test.nrows())?;
    if k == 0 || k > train.ncols() {
        return Err(Error::Config(format!(
            "k must lie in 1..={}, got {k}",
            train.ncols()
        )));
    }
    if test.ncols() == 0 {
        return Err(Error::Data("no test samples".into()));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(train.ncols());
    let labels = (0..test.ncols())
        .map(|t| {
            let probe = column(test, t);
            order.clear();
            order.extend((0..train.ncols()).map(|i| {
                let d: f64 = column(train, i)
                    .iter()
                    .zip(probe)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, i)
            }));
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for &(_, i) in &order[..k] {
                *votes.entry(train_labels.labels()[i]).or_default() += 1;
            }
            let top = *votes.values().max().expect("k ≥ 1");
            *votes.iter().find(|(_, &v)| v == top).expect("nonempty").0
        })
        .collect();
    Partition::new(labels)
}
