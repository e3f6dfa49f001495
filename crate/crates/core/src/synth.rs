//! Synthetic structural causal models with known causal sets.
//!
//! Every event draws an environment (a location from a mixture of regions
//! plus a day of year). Candidate groups are driven by the environment and by
//! a shared event-level shift; the target depends on the causal groups only,
//! and descendant groups are in turn driven by the target. The generator has
//! no edge from the environment to the target unless
//! [`ScmSpec::env_to_y_strength`] is set, which deliberately breaks the
//! invariance assumption.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetTable, TableParts};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::icp::{exhaustive_icp, Memoized};
use crate::invariance::{event_folds, FoldAssignment, ForestCiTest};
use crate::roctest::auc_midrank;
use crate::seed::{derive_seed, derive_seed_tagged, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    /// `signal * sum(x)`.
    LinearLogit,
    /// `signal * sum(sign(x))`.
    Threshold,
    /// `signal * prod(x)`.
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Logistic,
    Normal,
}

fn default_signal() -> f64 {
    1.5
}
fn default_descendant_strength() -> f64 {
    1.0
}
fn default_regions() -> usize {
    5
}
fn default_region_spread() -> f64 {
    1.0
}

/// A synthetic model. Group indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub p: usize,
    pub group_width: usize,
    pub causal_set: Vec<usize>,
    pub env_dim: usize,
    /// Coefficient of the environment in each group's latent value.
    pub env_to_x_strength: Vec<f64>,
    /// Noise added to the extra columns of a group around its latent value.
    pub x_noise_scale: f64,
    pub link: Link,
    pub noise: NoiseFamily,
    #[serde(default = "default_signal")]
    pub signal: f64,
    #[serde(default)]
    pub y_descendant_set: Vec<usize>,
    #[serde(default = "default_descendant_strength")]
    pub descendant_strength: f64,
    /// Standard deviation of the per-event shift shared by an event's rows.
    #[serde(default)]
    pub event_shift_scale: f64,
    /// Direct environment effect on the target; zero in a well-specified model.
    #[serde(default)]
    pub env_to_y_strength: f64,
    #[serde(default = "default_regions")]
    pub n_regions: usize,
    #[serde(default = "default_region_spread")]
    pub region_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScmSpec {
    pub fn group_name(j: usize) -> String {
        format!("x{j}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.group_width == 0 {
            return Err(Error::invalid("p and group_width must be positive"));
        }
        if self.causal_set.is_empty() {
            return Err(Error::invalid("causal_set must be non-empty"));
        }
        let in_range = |s: &[usize]| s.iter().all(|&j| (1..=self.p).contains(&j));
        if !in_range(&self.causal_set) || !in_range(&self.y_descendant_set) {
            return Err(Error::invalid("group index outside 1..=p"));
        }
        let causal: BTreeSet<_> = self.causal_set.iter().collect();
        if self.y_descendant_set.iter().any(|j| causal.contains(j)) {
            return Err(Error::invalid("causal_set and y_descendant_set overlap"));
        }
        if self.env_dim < 2 {
            return Err(Error::invalid("env_dim must be at least 2 (latitude, longitude)"));
        }
        if self.env_to_x_strength.len() != self.p {
            return Err(Error::invalid("env_to_x_strength needs one entry per group"));
        }
        if self.n_regions == 0 {
            return Err(Error::invalid("n_regions must be positive"));
        }
        Ok(())
    }

    /// Whether the generator contains an environment-to-target edge.
    pub fn env_affects_y_directly(&self) -> bool {
        self.env_to_y_strength != 0.0
    }

    pub fn causal_names(&self) -> Vec<String> {
        let mut v: Vec<usize> = self.causal_set.clone();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(Self::group_name).collect()
    }

    pub fn descendant_names(&self) -> Vec<String> {
        let mut v: Vec<usize> = self.y_descendant_set.clone();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(Self::group_name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub causal_set: Vec<String>,
    pub y_descendant_set: Vec<String>,
    pub spec: ScmSpec,
}

#[derive(Debug, Clone)]
pub struct SynthResult {
    pub table: DatasetTable,
    pub truth: Truth,
}

const MAX_ATTEMPTS: u64 = 10;
const MIN_PREVALENCE: f64 = 0.05;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn logistic(rng: &mut Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    (u / (1.0 - u)).ln()
}

fn region_center(r: usize, n_regions: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * r as f64 / n_regions as f64;
    (40.0 + 10.0 * angle.cos(), -120.0 + 10.0 * angle.sin())
}

/// Draws `n_events` events of `obs_per_event` observations each.
pub fn sample_scm(spec: &ScmSpec, n_events: usize, obs_per_event: usize) -> Result<SynthResult> {
    spec.validate()?;
    if n_events < 5 {
        return Err(Error::invalid("at least five events are required"));
    }
    if obs_per_event == 0 {
        return Err(Error::invalid("obs_per_event must be positive"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let seed = if attempt == 0 { spec.seed } else { derive_seed(spec.seed, attempt) };
        let table = draw(spec, n_events, obs_per_event, seed);
        let prevalence = table.target().iter().map(|&y| y as f64).sum::<f64>() / table.n() as f64;
        if (MIN_PREVALENCE..=1.0 - MIN_PREVALENCE).contains(&prevalence) {
            return Ok(SynthResult {
                table,
                truth: Truth {
                    causal_set: spec.causal_names(),
                    y_descendant_set: spec.descendant_names(),
                    spec: spec.clone(),
                },
            });
        }
    }
    Err(Error::invalid(format!("label prevalence stayed outside [0.05, 0.95] after {MAX_ATTEMPTS} attempts")))
}

fn draw(spec: &ScmSpec, n_events: usize, per: usize, seed: u64) -> DatasetTable {
    let mut rng = rng_from(seed);
    let p = spec.p;
    let q = spec.env_dim;
    // Direction through which the environment drives each group.
    let directions: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let v: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let causal: Vec<usize> = spec.causal_names().iter().map(|n| n[1..].parse::<usize>().unwrap() - 1).collect();
    let descendants: BTreeSet<usize> = spec.y_descendant_set.iter().map(|j| j - 1).collect();

    let n = n_events * per;
    let w = spec.group_width;
    let mut env_names = vec!["lat".to_string(), "lon".to_string()];
    if q >= 3 {
        env_names.push("date".into());
    }
    env_names.extend((3..q).map(|i| format!("e{i}")));

    let mut features = Array2::<f64>::zeros((n, p * w));
    let mut environment = Array2::<f64>::zeros((n, q));
    let mut target = Vec::with_capacity(n);
    let mut obs_ids = Vec::with_capacity(n);
    let mut event_ids = Vec::with_capacity(n);
    let mut coords = BTreeMap::new();

    for e in 0..n_events {
        let event = format!("ev{e:04}");
        let (clat, clon) = region_center(rng.random_range(0..spec.n_regions), spec.n_regions);
        let lat = clat + spec.region_spread * normal(&mut rng);
        let lon = clon + spec.region_spread * normal(&mut rng);
        let mut raw_env = vec![lat, lon];
        let mut std_env = vec![(lat - 40.0) / 10.0, (lon + 120.0) / 10.0];
        if q >= 3 {
            let day = rng.random_range(0.0..365.0);
            raw_env.push(day);
            std_env.push((day - 182.5) / 105.0);
        }
        for _ in 3..q {
            let v = normal(&mut rng);
            raw_env.push(v);
            std_env.push(v);
        }
        coords.insert(event.clone(), (lat, lon));
        let env_drive: Vec<f64> = directions
            .iter()
            .zip(&spec.env_to_x_strength)
            .map(|(d, s)| s * d.iter().zip(&std_env).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let shifts: Vec<f64> = (0..p).map(|_| spec.event_shift_scale * normal(&mut rng)).collect();

        for o in 0..per {
            let row = e * per + o;
            let mut latent: Vec<f64> = (0..p).map(|j| env_drive[j] + shifts[j] + normal(&mut rng)).collect();
            let xs: Vec<f64> = causal.iter().map(|&j| latent[j]).collect();
            let g = spec.signal
                * match spec.link {
                    Link::LinearLogit => xs.iter().sum::<f64>(),
                    Link::Threshold => xs.iter().map(|x| x.signum()).sum::<f64>(),
                    Link::Interaction => xs.iter().product::<f64>(),
                };
            let eps = match spec.noise {
                NoiseFamily::Logistic => logistic(&mut rng),
                NoiseFamily::Normal => normal(&mut rng),
            };
            let y = (g + spec.env_to_y_strength * std_env[0] + eps > 0.0) as u8;
            for &j in &descendants {
                latent[j] += spec.descendant_strength * (2.0 * y as f64 - 1.0);
            }
            for j in 0..p {
                features[[row, j * w]] = latent[j];
                for c in 1..w {
                    features[[row, j * w + c]] = latent[j] + spec.x_noise_scale * normal(&mut rng);
                }
            }
            for (c, v) in raw_env.iter().enumerate() {
                environment[[row, c]] = *v;
            }
            target.push(y);
            obs_ids.push(format!("{event}_{o:03}"));
            event_ids.push(event.clone());
        }
    }
    let feature_names = (1..=p)
        .flat_map(|j| (0..w).map(move |c| format!("{}__f{c}", ScmSpec::group_name(j))))
        .collect();
    DatasetTable::new(TableParts {
        obs_ids,
        event_ids,
        target,
        env_names,
        environment,
        feature_names,
        features,
        event_coords: coords,
    })
    .expect("generator output is well formed")
}

/// Paired sign-flip permutation p-value for `|AUC(a) - AUC(b)|`.
///
/// Each round swaps the two scores of every observation independently with
/// probability 1/2, which leaves the joint law unchanged when both score
/// vectors are equally informative.
pub fn permutation_oracle(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    rounds: usize,
    seed: u64,
) -> Result<f64> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    if rounds < 1000 {
        return Err(Error::invalid("the permutation oracle needs at least 1000 rounds"));
    }
    let observed = (auc_midrank(scores_a, labels)? - auc_midrank(scores_b, labels)?).abs();
    let mut rng = rng_from(seed);
    let mut a = scores_a.to_vec();
    let mut b = scores_b.to_vec();
    let mut hits = 0usize;
    for _ in 0..rounds {
        for i in 0..a.len() {
            if rng.random_bool(0.5) {
                a[i] = scores_b[i];
                b[i] = scores_a[i];
            } else {
                a[i] = scores_a[i];
                b[i] = scores_b[i];
            }
        }
        let t = (auc_midrank(&a, labels)? - auc_midrank(&b, labels)?).abs();
        if t >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (rounds + 1) as f64)
}

/// Settings of a coverage experiment besides the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub runs: usize,
    pub alpha: f64,
    pub min_size: usize,
    pub n_events: usize,
    pub obs_per_event: usize,
    pub k_folds: usize,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        Self { runs: 100, alpha: 0.05, min_size: 1, n_events: 50, obs_per_event: 10, k_folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    pub run: usize,
    pub seed: u64,
    pub intersection: Vec<String>,
    pub accepted: usize,
    pub no_accepted: bool,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage_fraction: f64,
    pub runs: Vec<CoverageRun>,
    pub misspecified: bool,
}

const FOLD_ATTEMPTS: u64 = 20;
const FOLD_TAG: u64 = 2;

/// Event folds for one coverage run. Small samples can put a single class in
/// some test fold; the shuffle is then redrawn rather than the run aborted.
fn coverage_folds(table: &DatasetTable, k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut attempt = 0;
    loop {
        let fold_seed = if attempt == 0 { seed } else { derive_seed_tagged(seed, attempt, FOLD_TAG) };
        match event_folds(table, k, fold_seed) {
            Err(Error::DegenerateFold { .. }) if attempt + 1 < FOLD_ATTEMPTS => attempt += 1,
            other => return other,
        }
    }
}

/// Repeats exhaustive ICP on fresh samples of `spec` and records how often
/// the estimated set lies inside the true causal set.
pub fn coverage_experiment(
    spec: &ScmSpec,
    options: &CoverageOptions,
    forest: &ForestConfig,
) -> Result<CoverageReport> {
    spec.validate()?;
    if options.runs < 20 {
        return Err(Error::invalid("coverage experiments need at least 20 runs"));
    }
    let truth: BTreeSet<String> = spec.causal_names().into_iter().collect();
    let runs = (0..options.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(spec.seed, run as u64);
            let sample = sample_scm(&ScmSpec { seed, ..spec.clone() }, options.n_events, options.obs_per_event)?;
            let table = &sample.table;
            let folds = coverage_folds(table, options.k_folds, seed)?;
            let tester = ForestCiTest::new(table, &folds, forest.with_seed(derive_seed(forest.seed, seed)));
            let memo = Memoized::new(&tester);
            let outcome = exhaustive_icp(&memo, &table.group_names(), options.min_size, options.alpha)?;
            let covered = outcome.intersection_set().is_subset(&truth);
            Ok(CoverageRun {
                run,
                seed,
                accepted: outcome.accepted_sets.len(),
                intersection: outcome.intersection,
                no_accepted: outcome.no_accepted,
                covered,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let covered = runs.iter().filter(|r| r.covered).count();
    Ok(CoverageReport {
        coverage_fraction: covered as f64 / runs.len() as f64,
        runs,
        misspecified: spec.env_affects_y_directly(),
    })
}

/// A table where one group (`proxy`) is a region-level attribute of each
/// event and the target has region-specific base rates on top of a causal
/// group; a pure-noise group rides along.
///
/// Under event-level folds the proxy recovers the base rate of every region
/// seen in training. Under spatial folds the held-out region's proxy value is
/// unseen and constant, so every held-out row takes the same side of every
/// proxy split and the proxy carries no transferable signal.
pub fn env_proxy_table(n_events: usize, obs_per_event: usize, seed: u64) -> Result<DatasetTable> {
    const REGIONS: usize = 5;
    const BASE_RATES: [f64; REGIONS] = [-2.0, 1.0, -1.0, 2.0, 0.0];
    const ELEVATION: [f64; REGIONS] = [300.0, 1200.0, 700.0, 1500.0, 900.0];
    const NOISE: usize = 3;
    if n_events < 2 * REGIONS || obs_per_event == 0 {
        return Err(Error::invalid("env proxy table needs at least 10 events"));
    }
    let mut rng = rng_from(seed);
    let n = n_events * obs_per_event;
    let mut features = Array2::<f64>::zeros((n, 2 + NOISE));
    let mut environment = Array2::<f64>::zeros((n, 2));
    let mut target = Vec::with_capacity(n);
    let mut obs_ids = Vec::with_capacity(n);
    let mut event_ids = Vec::with_capacity(n);
    let mut coords = BTreeMap::new();
    for e in 0..n_events {
        let region = e % REGIONS;
        let (clat, clon) = region_center(region, REGIONS);
        let lat = clat + 0.5 * normal(&mut rng);
        let lon = clon + 0.5 * normal(&mut rng);
        let event = format!("ev{e:04}");
        coords.insert(event.clone(), (lat, lon));
        for o in 0..obs_per_event {
            let row = e * obs_per_event + o;
            let cause = normal(&mut rng);
            let y = (1.5 * cause + BASE_RATES[region] + logistic(&mut rng) > 0.0) as u8;
            features[[row, 0]] = cause;
            for c in 0..NOISE {
                features[[row, 1 + c]] = normal(&mut rng);
            }
            features[[row, 1 + NOISE]] = ELEVATION[region];
            environment[[row, 0]] = lat;
            environment[[row, 1]] = lon;
            target.push(y);
            obs_ids.push(format!("{event}_{o:03}"));
            event_ids.push(event.clone());
        }
    }
    let mut feature_names = vec!["cause__mean".to_string()];
    feature_names.extend((0..NOISE).map(|c| format!("noise__f{c}")));
    feature_names.push("proxy__elevation".into());
    DatasetTable::new(TableParts {
        obs_ids,
        event_ids,
        target,
        env_names: vec!["lat".into(), "lon".into()],
        environment,
        feature_names,
        features,
        event_coords: coords,
    })
}
