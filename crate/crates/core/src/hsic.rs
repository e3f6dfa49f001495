//! Normalized Hilbert-Schmidt independence criterion between variable groups
//! and threshold clustering of the resulting dependence matrix.
//!
//! Each group's columns are standardized, a Gaussian kernel with
//! median-heuristic bandwidth is applied, and the biased estimator
//! `trace(K H L H) / (n - 1)^2` is normalized by the geometric mean of the two
//! self-dependences so that identical inputs score exactly one.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetTable;
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Rows beyond which the median heuristic works on a seeded subsample.
pub const MEDIAN_SUBSAMPLE: usize = 2000;
const MEDIAN_SEED: u64 = 0x5eed_4d15;

/// Median pairwise Euclidean distance between rows; 1 when that median is 0.
pub fn median_heuristic(points: ArrayView2<f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut idx = sample(&mut rng_from(MEDIAN_SEED), n, MEDIAN_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = points.row(i).iter().zip(points.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { (dists[m / 2 - 1] + dists[m / 2]) / 2.0 };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// Zero-mean, unit-variance columns; constant columns are dropped.
fn standardize(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows() as f64;
    let mut keep = Vec::new();
    for col in x.columns() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            keep.push(col.mapv(|v| (v - mean) / sd));
        }
    }
    if keep.is_empty() {
        return Err(Error::DegenerateVariable);
    }
    let views: Vec<_> = keep.iter().map(|c| c.view().insert_axis(Axis(1))).collect();
    Ok(ndarray::concatenate(Axis(1), &views).expect("equal lengths"))
}

/// Doubly-centered Gaussian Gram matrix `H K H` of a standardized block,
/// together with the bandwidth used.
fn centered_gram(x: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    let z = standardize(x)?;
    let sigma = median_heuristic(z.view())?;
    let n = z.nrows();
    let denom = 2.0 * sigma * sigma;
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in i + 1..n {
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (-d2 / denom).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    let row_means = k.mean_axis(Axis(1)).expect("n > 0");
    let grand = row_means.mean().expect("n > 0");
    for i in 0..n {
        for j in 0..n {
            k[[i, j]] += grand - row_means[i] - row_means[j];
        }
    }
    Ok((k, sigma))
}

/// `sum_ij Kc_ij Lc_ij / (n - 1)^2`, equal to `trace(K H L H) / (n - 1)^2`.
fn hsic_from_centered(kc: &Array2<f64>, lc: &Array2<f64>) -> f64 {
    let n = kc.nrows() as f64;
    kc.iter().zip(lc.iter()).map(|(a, b)| a * b).sum::<f64>() / ((n - 1.0) * (n - 1.0))
}

/// Biased HSIC of two blocks with the bandwidths chosen by the median
/// heuristic after standardization.
pub fn hsic_biased(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let (kc, _) = centered_gram(a)?;
    let (lc, _) = centered_gram(b)?;
    Ok(hsic_from_centered(&kc, &lc))
}

fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::LengthMismatch(a.nrows(), b.nrows()));
    }
    if a.nrows() < 4 {
        return Err(Error::invalid("HSIC needs at least four observations"));
    }
    Ok(())
}

fn normalize(ab: f64, aa: f64, bb: f64) -> f64 {
    ab / (aa * bb).sqrt()
}

/// `HSIC(A, B) / sqrt(HSIC(A, A) HSIC(B, B))`.
pub fn normalized_hsic(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let (kc, _) = centered_gram(a)?;
    let (lc, _) = centered_gram(b)?;
    Ok(normalize(
        hsic_from_centered(&kc, &lc),
        hsic_from_centered(&kc, &kc),
        hsic_from_centered(&lc, &lc),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicMatrix {
    pub group_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub bandwidths: Vec<f64>,
}

impl HsicMatrix {
    /// Header row of group names followed by one row per group.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["group".to_string()];
        header.extend(self.group_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.group_names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairwise normalized HSIC between the column blocks of `groups`.
pub fn hsic_matrix<S: AsRef<str> + Sync>(table: &DatasetTable, groups: &[S]) -> Result<HsicMatrix> {
    if groups.len() < 2 {
        return Err(Error::invalid("HSIC matrix needs at least two groups"));
    }
    if table.n() < 4 {
        return Err(Error::invalid("HSIC needs at least four observations"));
    }
    let grams: Vec<(Array2<f64>, f64)> = groups
        .par_iter()
        .map(|g| centered_gram(table.select_columns(&[g.as_ref()], false)?.view()))
        .collect::<Result<_>>()?;
    let g = groups.len();
    let selfs: Vec<f64> = grams.iter().map(|(k, _)| hsic_from_centered(k, k)).collect();
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|i| (i + 1..g).map(move |j| (i, j))).collect();
    let off: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ij = normalize(hsic_from_centered(&grams[i].0, &grams[j].0), selfs[i], selfs[j]);
            let ji = normalize(hsic_from_centered(&grams[j].0, &grams[i].0), selfs[j], selfs[i]);
            (ij + ji) / 2.0
        })
        .collect();
    let mut values = vec![vec![0.0; g]; g];
    for i in 0..g {
        values[i][i] = normalize(selfs[i], selfs[i], selfs[i]);
    }
    for (&(i, j), v) in pairs.iter().zip(off) {
        values[i][j] = v;
        values[j][i] = v;
    }
    Ok(HsicMatrix {
        group_names: groups.iter().map(|s| s.as_ref().to_string()).collect(),
        values,
        bandwidths: grams.iter().map(|(_, s)| *s).collect(),
    })
}

/// A group and every other group whose dependence with it reaches the
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub seed: String,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn member_sets(&self) -> Vec<BTreeSet<String>> {
        self.clusters.iter().map(|c| c.members.clone()).collect()
    }

    /// Seed first, then the other members in matrix order.
    pub fn to_name_lists(&self, order: &[String]) -> Vec<Vec<String>> {
        self.clusters
            .iter()
            .map(|c| {
                let mut v = vec![c.seed.clone()];
                v.extend(order.iter().filter(|n| **n != c.seed && c.members.contains(*n)).cloned());
                v
            })
            .collect()
    }
}

/// One cluster per group: the group plus all groups with value `>= tau`.
/// Duplicate clusters are kept.
pub fn threshold_clusters(matrix: &HsicMatrix, tau: f64) -> Result<ClusterSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("threshold {tau} outside (0, 1]")));
    }
    let names = &matrix.group_names;
    let clusters = names
        .iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut members: BTreeSet<String> = [seed.clone()].into();
            for (j, other) in names.iter().enumerate() {
                if j != i && matrix.values[i][j] >= tau {
                    members.insert(other.clone());
                }
            }
            Cluster { seed: seed.clone(), members }
        })
        .collect();
    Ok(ClusterSet { threshold: tau, clusters })
}

/// Reads a JSON list of name lists.
pub fn load_clusters_json<R: std::io::Read>(source: R) -> Result<Vec<BTreeSet<String>>> {
    let lists: Vec<Vec<String>> = serde_json::from_reader(source)?;
    Ok(lists.into_iter().map(|l| l.into_iter().collect()).collect())
}
