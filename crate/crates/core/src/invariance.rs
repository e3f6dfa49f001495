//! The invariant-target-prediction test of `Y ⟂ E | X_S`.
//!
//! Two forests are fitted per cross-validation fold, one on `X_S` alone and
//! one on `X_S` plus the environment `E`. Their out-of-fold scores are pooled
//! over all folds and compared with DeLong's test: if the environment adds
//! nothing once `X_S` is known, both arms rank the observations equally well.
//!
//! Folds are always built at event level so that no event contributes rows to
//! both sides of a split. Two schemes are provided: events dealt randomly to
//! folds, and events clustered by k-means on their coordinates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetTable;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict_proba, ForestConfig};
use crate::roctest::{auc_midrank, delong_paired_test_with, Alternative};
use crate::seed::{derive_seed, derive_seed_tagged, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    EventRandom,
    SpatialKmeans,
}

/// Event-level cross-validation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub scheme: FoldScheme,
    pub k: usize,
    pub event_to_fold: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Fold index of every row of `table`.
    pub fn row_folds(&self, table: &DatasetTable) -> Result<Vec<usize>> {
        table
            .event_ids()
            .iter()
            .map(|e| {
                self.event_to_fold
                    .get(e)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("event {e} has no fold")))
            })
            .collect()
    }

    /// Checks that every fold is usable: its test split holds both classes and
    /// so does the complementary training split.
    pub fn validate(&self, table: &DatasetTable) -> Result<()> {
        if self.event_to_fold.values().any(|&f| f >= self.k) {
            return Err(Error::invalid("fold index out of range"));
        }
        let folds = self.row_folds(table)?;
        let mut counts = vec![[0usize; 2]; self.k];
        for (&f, &y) in folds.iter().zip(table.target()) {
            counts[f][y as usize] += 1;
        }
        let total = [
            counts.iter().map(|c| c[0]).sum::<usize>(),
            counts.iter().map(|c| c[1]).sum::<usize>(),
        ];
        for (fold, c) in counts.iter().enumerate() {
            if c[0] == 0 || c[1] == 0 {
                return Err(Error::DegenerateFold {
                    fold,
                    reason: format!("test split has {} negatives and {} positives", c[0], c[1]),
                });
            }
            if total[0] == c[0] || total[1] == c[1] {
                return Err(Error::DegenerateFold { fold, reason: "training split is single-class".into() });
            }
        }
        Ok(())
    }

    /// Writes `event_id,fold`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["event_id", "fold"])?;
        for (e, f) in &self.event_to_fold {
            w.write_record([e.as_str(), &f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shuffles the distinct events with `seed` and deals them round-robin into
/// `k` folds.
pub fn event_folds(table: &DatasetTable, k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut events = table.distinct_events();
    if k < 2 {
        return Err(Error::invalid("at least two folds are required"));
    }
    if events.len() < k {
        return Err(Error::TooFewEvents { events: events.len(), k });
    }
    events.shuffle(&mut rng_from(seed));
    let event_to_fold = events.into_iter().enumerate().map(|(i, e)| (e, i % k)).collect();
    let folds = FoldAssignment { scheme: FoldScheme::EventRandom, k, event_to_fold, seed };
    folds.validate(table)?;
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 100, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// `k` rows of point dimension.
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut crate::seed::Rng) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut centroids = vec![points[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> KMeansResult {
    let dim = points[0].len();
    let mut rng = rng_from(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            changed |= labels[i] != c;
            labels[i] = c;
            inertia += d;
            dists.push(d);
        }
        if let Some(&prev) = trace.last() {
            debug_assert!(inertia <= prev + 1e-9 * (1.0 + prev), "k-means inertia increased");
        }
        trace.push(inertia);
        let converged = !changed
            || (trace.len() >= 2 && trace[trace.len() - 2] - inertia <= opts.tol * (1.0 + inertia));
        if converged && trace.len() > 1 {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = BTreeSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("m >= k");
                taken.insert(far);
                centroids[c] = points[far].clone();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
    KMeansResult { centroids, labels, inertia, inertia_trace: trace }
}

/// Lloyd's algorithm from k-means++ seeding; the lowest-inertia restart wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("points must be finite and of equal dimension"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..opts.restarts.max(1) {
        let result = lloyd(points, k, derive_seed(seed, r as u64), opts);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Folds from k-means clusters of the event coordinates.
pub fn spatial_folds(table: &DatasetTable, k: usize, seed: u64) -> Result<FoldAssignment> {
    let events = table.distinct_events();
    if k < 2 {
        return Err(Error::invalid("at least two folds are required"));
    }
    if events.len() < k {
        return Err(Error::TooFewEvents { events: events.len(), k });
    }
    let coords = table.event_coords();
    let points: Vec<Vec<f64>> = events
        .iter()
        .map(|e| {
            coords
                .get(e)
                .map(|&(lat, lon)| vec![lat, lon])
                .ok_or_else(|| Error::MissingCoordinates(e.clone()))
        })
        .collect::<Result<_>>()?;
    let distinct: BTreeSet<(u64, u64)> = points.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    if distinct.len() < k {
        return Err(Error::DegenerateGeometry(format!(
            "{} distinct event locations cannot form {k} spatial folds",
            distinct.len()
        )));
    }
    let km = kmeans(&points, k, seed, &KMeansOptions::default())?;
    // Relabel clusters by first appearance so fold numbering is canonical.
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &c in &km.labels {
        if relabel[c] == usize::MAX {
            relabel[c] = next;
            next += 1;
        }
    }
    if next < k {
        return Err(Error::DegenerateGeometry(format!("k-means produced only {next} non-empty clusters")));
    }
    let event_to_fold = events.into_iter().zip(&km.labels).map(|(e, &c)| (e, relabel[c])).collect();
    let folds = FoldAssignment { scheme: FoldScheme::SpatialKmeans, k, event_to_fold, seed };
    folds.validate(table)?;
    Ok(folds)
}

/// Outcome of one conditional independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CITestResult {
    pub subset: Vec<String>,
    pub p_value: f64,
    pub auc_without_env: f64,
    pub auc_with_env: f64,
    pub z_statistic: f64,
    pub n_oof: usize,
    pub degenerate: bool,
}

/// A conditional independence test of `Y ⟂ E | X_S` indexed by the subset `S`.
pub trait IndependenceTest: Sync {
    fn test(&self, subset: &BTreeSet<String>) -> Result<CITestResult>;
}

const ARM_WITHOUT_ENV: u64 = 0;
const ARM_WITH_ENV: u64 = 1;

/// Pooled out-of-fold scores of forests fitted on `design`.
fn out_of_fold_scores(
    design: &Array2<f64>,
    target: &[u8],
    row_folds: &[usize],
    k: usize,
    config: &ForestConfig,
    arm: u64,
) -> Result<Vec<f64>> {
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..target.len()).filter(|&i| row_folds[i] != fold).collect();
            let test: Vec<usize> = (0..target.len()).filter(|&i| row_folds[i] == fold).collect();
            let y_train: Vec<u8> = train.iter().map(|&i| target[i]).collect();
            let cfg = config.with_seed(derive_seed_tagged(config.seed, fold as u64, arm));
            let model = fit_forest(design.select(Axis(0), &train).view(), &y_train, &cfg)?;
            let scores = predict_proba(&model, design.select(Axis(0), &test).view())?;
            Ok((test, scores))
        })
        .collect::<Result<_>>()?;
    let mut pooled = vec![f64::NAN; target.len()];
    for (rows, scores) in per_fold {
        for (i, s) in rows.into_iter().zip(scores) {
            pooled[i] = s;
        }
    }
    debug_assert!(pooled.iter().all(|s| !s.is_nan()));
    Ok(pooled)
}

/// Runs the paired-forest test of `Y ⟂ E | X_S` for one subset.
pub fn ci_test<S: AsRef<str>>(
    table: &DatasetTable,
    subset: &[S],
    folds: &FoldAssignment,
    config: &ForestConfig,
) -> Result<CITestResult> {
    ci_test_with(table, subset, folds, config, Alternative::TwoSided)
}

pub fn ci_test_with<S: AsRef<str>>(
    table: &DatasetTable,
    subset: &[S],
    folds: &FoldAssignment,
    config: &ForestConfig,
    alternative: Alternative,
) -> Result<CITestResult> {
    folds.validate(table)?;
    let row_folds = folds.row_folds(table)?;
    let without = table.select_columns(subset, false)?;
    let with = table.select_columns(subset, true)?;
    let y = table.target();
    let scores_without = out_of_fold_scores(&without, y, &row_folds, folds.k, config, ARM_WITHOUT_ENV)?;
    let scores_with = out_of_fold_scores(&with, y, &row_folds, folds.k, config, ARM_WITH_ENV)?;
    let cmp = delong_paired_test_with(&scores_with, &scores_without, y, alternative)?;
    let names: BTreeSet<&str> = subset.iter().map(|s| s.as_ref()).collect();
    Ok(CITestResult {
        subset: names.into_iter().map(str::to_string).collect(),
        p_value: cmp.p_value,
        auc_without_env: cmp.auc_b,
        auc_with_env: cmp.auc_a,
        z_statistic: cmp.z_statistic,
        n_oof: y.len(),
        degenerate: cmp.degenerate,
    })
}

/// The forest-based test bound to a table, folds and forest configuration.
#[derive(Debug, Clone)]
pub struct ForestCiTest<'a> {
    pub table: &'a DatasetTable,
    pub folds: &'a FoldAssignment,
    pub config: ForestConfig,
    pub alternative: Alternative,
}

impl<'a> ForestCiTest<'a> {
    pub fn new(table: &'a DatasetTable, folds: &'a FoldAssignment, config: ForestConfig) -> Self {
        Self { table, folds, config, alternative: Alternative::TwoSided }
    }
}

impl IndependenceTest for ForestCiTest<'_> {
    fn test(&self, subset: &BTreeSet<String>) -> Result<CITestResult> {
        let names: Vec<&String> = subset.iter().collect();
        ci_test_with(self.table, &names, self.folds, &self.config, self.alternative)
    }
}

/// One point of a validation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStep {
    pub step: usize,
    pub removed: Option<String>,
    pub remaining: Vec<String>,
    pub mean_auc_event: f64,
    pub std_auc_event: f64,
    pub mean_auc_spatial: f64,
    pub std_auc_spatial: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn per_fold_aucs(
    table: &DatasetTable,
    groups: &[String],
    folds: &FoldAssignment,
    config: &ForestConfig,
) -> Result<Vec<f64>> {
    let row_folds = folds.row_folds(table)?;
    let design = table.select_columns(groups, false)?;
    let y = table.target();
    (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| row_folds[i] != fold).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| row_folds[i] == fold).collect();
            let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let y_test: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            let cfg = config.with_seed(derive_seed_tagged(config.seed, fold as u64, ARM_WITHOUT_ENV));
            let model = fit_forest(design.select(Axis(0), &train).view(), &y_train, &cfg)?;
            let scores = predict_proba(&model, design.select(Axis(0), &test).view())?;
            auc_midrank(&scores, &y_test)
        })
        .collect()
}

/// Mean and standard deviation of per-fold out-of-sample AUC of
/// environment-free forests while groups are removed in `exclusion_order`,
/// under both event-random and spatial folds.
///
/// Statistics pool the per-fold AUCs over all `seeds`; each seed builds its
/// own folds and forests. The standard deviation uses an `n - 1` divisor.
pub fn generalization_curve(
    table: &DatasetTable,
    exclusion_order: &[String],
    config: &ForestConfig,
    seeds: &[u64],
    k: usize,
) -> Result<Vec<CurveStep>> {
    let all = table.group_names();
    let distinct: BTreeSet<&String> = exclusion_order.iter().collect();
    if distinct.len() != exclusion_order.len() {
        return Err(Error::invalid("exclusion order repeats a group"));
    }
    if let Some(g) = exclusion_order.iter().find(|g| !all.contains(g)) {
        return Err(Error::UnknownGroup(g.clone()));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let schemes = seeds
        .iter()
        .map(|&s| Ok((event_folds(table, k, s)?, spatial_folds(table, k, s)?, config.with_seed(derive_seed(config.seed, s)))))
        .collect::<Result<Vec<_>>>()?;

    (0..=exclusion_order.len())
        .map(|t| {
            let removed: BTreeSet<&String> = exclusion_order[..t].iter().collect();
            let remaining: Vec<String> = all.iter().filter(|g| !removed.contains(g)).cloned().collect();
            let mut event = Vec::new();
            let mut spatial = Vec::new();
            for (ev, sp, cfg) in &schemes {
                event.extend(per_fold_aucs(table, &remaining, ev, cfg)?);
                spatial.extend(per_fold_aucs(table, &remaining, sp, cfg)?);
            }
            let (mean_auc_event, std_auc_event) = mean_std(&event);
            let (mean_auc_spatial, std_auc_spatial) = mean_std(&spatial);
            Ok(CurveStep {
                step: t,
                removed: t.checked_sub(1).map(|i| exclusion_order[i].clone()),
                remaining,
                mean_auc_event,
                std_auc_event,
                mean_auc_spatial,
                std_auc_spatial,
            })
        })
        .collect()
}

/// Writes one row per curve step.
pub fn write_curve_csv<W: Write>(curve: &[CurveStep], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["step", "removed", "mean_auc_event", "std_auc_event", "mean_auc_spatial", "std_auc_spatial"])?;
    for s in curve {
        w.write_record([
            s.step.to_string(),
            s.removed.clone().unwrap_or_default(),
            s.mean_auc_event.to_string(),
            s.std_auc_event.to_string(),
            s.mean_auc_spatial.to_string(),
            s.std_auc_spatial.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TableParts;
    use crate::seed::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    /// `n_events` events of `per` rows; labels alternate within each event.
    fn toy_table(n_events: usize, per: usize, coords: impl Fn(usize) -> (f64, f64)) -> DatasetTable {
        let n = n_events * per;
        let mut rng = rng_from(4);
        DatasetTable::new(TableParts {
            obs_ids: (0..n).map(|i| format!("o{i}")).collect(),
            event_ids: (0..n).map(|i| format!("e{:03}", i / per)).collect(),
            target: (0..n).map(|i| (i % 2) as u8).collect(),
            env_names: vec!["lat".into(), "lon".into()],
            environment: Array2::from_shape_fn((n, 2), |(i, j)| {
                let (a, b) = coords(i / per);
                if j == 0 { a } else { b }
            }),
            feature_names: vec!["a__mean".into(), "b__mean".into()],
            features: Array2::from_shape_fn((n, 2), |_| rng.random::<f64>()),
            event_coords: BTreeMap::new(),
        })
        .unwrap()
    }

    #[test]
    fn event_folds_are_balanced_and_deterministic() {
        let t = toy_table(10, 4, |e| (e as f64, 0.0));
        let f = event_folds(&t, 5, 3).unwrap();
        for fold in 0..5 {
            assert_eq!(f.event_to_fold.values().filter(|&&v| v == fold).count(), 2);
        }
        assert_eq!(f, event_folds(&t, 5, 3).unwrap());
        let small = toy_table(3, 4, |e| (e as f64, 0.0));
        assert!(matches!(event_folds(&small, 5, 3), Err(Error::TooFewEvents { .. })));
    }

    #[test]
    fn single_class_fold_is_rejected() {
        let mut t = toy_table(10, 2, |e| (e as f64, 0.0));
        // Make event e000 all positives and give it its own fold.
        let mut parts_target = t.target().to_vec();
        parts_target[0] = 1;
        t = DatasetTable::new(TableParts {
            obs_ids: t.obs_ids().to_vec(),
            event_ids: t.event_ids().to_vec(),
            target: parts_target,
            env_names: t.env_names().to_vec(),
            environment: t.environment().clone(),
            feature_names: t.feature_names().to_vec(),
            features: t.features().clone(),
            event_coords: t.event_coords().clone(),
        })
        .unwrap();
        let mut map: BTreeMap<String, usize> = t.distinct_events().into_iter().map(|e| (e, 1)).collect();
        map.insert("e000".into(), 0);
        let f = FoldAssignment { scheme: FoldScheme::EventRandom, k: 2, event_to_fold: map, seed: 0 };
        let err = f.validate(&t).unwrap_err();
        assert!(matches!(err, Error::DegenerateFold { fold: 0, .. }), "{err}");
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = rng_from(9);
        let mut pts = Vec::new();
        for i in 0..40 {
            let c = if i % 2 == 0 { 0.0 } else { 100.0 };
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            pts.push(vec![c + 0.1 * dx, c + 0.1 * dy]);
        }
        let r = kmeans(&pts, 2, 1, &KMeansOptions::default()).unwrap();
        // Oracle: each point's label must be its brute-force nearest centroid,
        // and the partition must match the generating blob.
        for (i, p) in pts.iter().enumerate() {
            let d: Vec<f64> = r.centroids.iter().map(|c| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).collect();
            let nearest = if d[0] <= d[1] { 0 } else { 1 };
            assert_eq!(r.labels[i], nearest);
            assert_eq!(r.labels[i] == r.labels[0], i % 2 == 0);
        }
        let recomputed: f64 = pts.iter().zip(&r.labels).map(|(p, &c)| sq_dist(p, &r.centroids[c])).sum();
        assert!((recomputed - r.inertia).abs() < 1e-9);
        assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let same = vec![vec![2.0, 3.0]; 7];
        let r = kmeans(&same, 1, 0, &KMeansOptions::default()).unwrap();
        assert_eq!(r.centroids[0], vec![2.0, 3.0]);
        assert_eq!(r.inertia, 0.0);

        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 0, &KMeansOptions::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut cents = r.centroids.clone();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, pts);
        assert!(kmeans(&pts, 7, 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn spatial_folds_follow_locations() {
        let centers = [(0.0, 0.0), (50.0, 0.0), (0.0, 50.0), (50.0, 50.0), (100.0, 100.0)];
        let t = toy_table(20, 2, |e| {
            let (a, b) = centers[e % 5];
            (a + 0.01 * (e / 5) as f64, b)
        });
        let f = spatial_folds(&t, 5, 2).unwrap();
        for (e, fold) in &f.event_to_fold {
            let idx: usize = e[1..].parse().unwrap();
            let first_of_location = format!("e{:03}", idx % 5);
            assert_eq!(*fold, f.event_to_fold[&first_of_location]);
        }
        assert_eq!(f.event_to_fold.values().collect::<BTreeSet<_>>().len(), 5);
        assert_eq!(f, spatial_folds(&t, 5, 2).unwrap());

        let flat = toy_table(10, 2, |_| (1.0, 1.0));
        assert!(matches!(spatial_folds(&flat, 5, 0), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn folds_never_split_an_event() {
        let t = toy_table(15, 3, |e| ((e % 5) as f64 * 10.0, (e / 5) as f64));
        for folds in [event_folds(&t, 5, 1).unwrap(), spatial_folds(&t, 5, 1).unwrap()] {
            let rows = folds.row_folds(&t).unwrap();
            for fold in 0..5 {
                let test: BTreeSet<&String> =
                    t.event_ids().iter().zip(&rows).filter(|(_, &f)| f == fold).map(|(e, _)| e).collect();
                let train: BTreeSet<&String> =
                    t.event_ids().iter().zip(&rows).filter(|(_, &f)| f != fold).map(|(e, _)| e).collect();
                assert!(test.is_disjoint(&train));
            }
        }
    }

    #[test]
    fn identical_arms_give_unit_p_value() {
        // With no environment columns both arms see the same design matrix and
        // differ only by forest seed; a deterministic single tree removes that.
        let t = toy_table(10, 6, |e| (e as f64, 0.0));
        let stripped = DatasetTable::new(TableParts {
            obs_ids: t.obs_ids().to_vec(),
            event_ids: t.event_ids().to_vec(),
            target: t.target().to_vec(),
            env_names: vec![],
            environment: Array2::zeros((t.n(), 0)),
            feature_names: t.feature_names().to_vec(),
            features: t.features().clone(),
            event_coords: t.event_coords().clone(),
        })
        .unwrap();
        let folds = event_folds(&stripped, 5, 0).unwrap();
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            features_per_split: crate::forest::FeaturesPerSplit::All,
            ..Default::default()
        };
        let r = ci_test(&stripped, &["a", "b"], &folds, &cfg).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_oof, stripped.n());
    }

    #[test]
    fn ci_test_is_deterministic() {
        let t = toy_table(10, 6, |e| (e as f64, 1.0));
        let folds = event_folds(&t, 5, 0).unwrap();
        let cfg = ForestConfig { n_trees: 10, ..Default::default() };
        let a = ci_test(&t, &["a"], &folds, &cfg).unwrap();
        let b = ci_test(&t, &["a"], &folds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subset, vec!["a".to_string()]);
    }

    #[test]
    fn curve_length_and_identity_step() {
        let t = toy_table(10, 6, |e| ((e % 5) as f64 * 10.0, (e / 5) as f64));
        let cfg = ForestConfig { n_trees: 5, ..Default::default() };
        let order = vec!["b".to_string()];
        let curve = generalization_curve(&t, &order, &cfg, &[1], 5).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].removed, None);
        assert_eq!(curve[1].remaining, vec!["a".to_string()]);
        // Step 0 is the full model under the same folds and seeds.
        let full = per_fold_aucs(&t, &t.group_names(), &event_folds(&t, 5, 1).unwrap(), &cfg.with_seed(derive_seed(cfg.seed, 1))).unwrap();
        assert_eq!(curve[0].mean_auc_event, mean_std(&full).0);
    }
}
