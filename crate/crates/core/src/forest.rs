//! Random-forest probability classifier.
//!
//! Trees are grown on bootstrap samples, splitting on the weighted Gini
//! impurity with class weights that balance the two labels. Split thresholds
//! are midpoints between consecutive distinct feature values, so fitted
//! partitions depend only on the ranks of each feature.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from, Rng};

/// Number of features examined at every split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturesPerSplit {
    /// `ceil(sqrt(d))`.
    Sqrt,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Fixed(k) => k.clamp(1, d.max(1)),
        }
        .min(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    /// Reweight samples so both classes carry equal total weight.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            class_weighting: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { prob: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

/// A binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// A tree consisting of a single leaf.
    pub fn leaf(prob: f64) -> Self {
        Self { nodes: vec![Node::Leaf { prob }] }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { prob } => return prob,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
            }
        }
        go(self, 0)
    }

    fn to_json(&self, i: usize) -> Value {
        match self.nodes[i] {
            Node::Leaf { prob } => json!({ "leaf": prob }),
            Node::Split { feature, threshold, left, right } => json!({
                "feature": feature,
                "threshold": threshold,
                "left": self.to_json(left as usize),
                "right": self.to_json(right as usize),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    config: ForestConfig,
    n_features: usize,
}

impl ForestModel {
    /// Assembles a model from prebuilt trees.
    pub fn from_trees(trees: Vec<Tree>, n_features: usize, config: ForestConfig) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        for t in &trees {
            for node in &t.nodes {
                if let Node::Split { feature, .. } = node {
                    if *feature >= n_features {
                        return Err(Error::invalid(format!("split on feature {feature} of {n_features}")));
                    }
                }
            }
        }
        Ok(Self { trees, config, n_features })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// Debug dump with nested node records. Not a stable format.
    pub fn to_json(&self) -> Value {
        json!({
            "n_features": self.n_features,
            "config": self.config,
            "trees": self.trees.iter().map(|t| t.to_json(0)).collect::<Vec<_>>(),
        })
    }
}

/// `1 - p0^2 - p1^2` for weighted class counts.
pub fn gini_impurity(w0: f64, w1: f64) -> Result<f64> {
    let total = w0 + w1;
    if w0 < 0.0 || w1 < 0.0 || total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("gini impurity needs positive total weight"));
    }
    let (p0, p1) = (w0 / total, w1 / total);
    Ok(1.0 - p0 * p0 - p1 * p1)
}

/// Per-sample weights `n / (2 n_c)` giving each class total weight `n / 2`.
pub fn balanced_sample_weights(y: &[u8]) -> Result<Vec<f64>> {
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateLabels);
    }
    let n = y.len() as f64;
    let w = [n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)];
    Ok(y.iter().map(|&v| w[v as usize]).collect())
}

/// Fits a forest to the rows of `x` and binary labels `y`.
///
/// `x` may have zero columns, in which case every tree is a single leaf
/// holding the weighted class prior.
pub fn fit_forest(x: ArrayView2<f64>, y: &[u8], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    if n < 2 || n1 == 0 || n1 == n {
        return Err(Error::DegenerateLabels);
    }
    for ((r, c), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row: r, column: c });
        }
    }
    let columns: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let data = TrainingData { columns: &columns, y, n };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&data, config, derive_seed(config.seed, t as u64)))
        .collect();
    Ok(ForestModel { trees, config: config.clone(), n_features: d })
}

/// Mean leaf probability across trees for each row of `x`.
pub fn predict_proba(model: &ForestModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::DimensionMismatch { expected: model.n_features, actual: x.ncols() });
    }
    let t = model.trees.len() as f64;
    Ok(x
        .rows()
        .into_iter()
        .map(|row| {
            let row = row.to_vec();
            model.trees.iter().map(|tree| tree.predict_row(&row)).sum::<f64>() / t
        })
        .collect())
}

struct TrainingData<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [u8],
    n: usize,
}

struct Builder<'a> {
    data: &'a TrainingData<'a>,
    config: &'a ForestConfig,
    /// Weight of one draw of a sample, by sample index.
    weight: Vec<f64>,
    /// Number of bootstrap draws of each sample.
    count: Vec<u32>,
    mtry: usize,
    rng: Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

fn grow_tree(data: &TrainingData, config: &ForestConfig, seed: u64) -> Tree {
    let mut rng = rng_from(seed);
    let n = data.n;
    let mut count = vec![0u32; n];
    if config.bootstrap {
        // A draw holding a single class carries no information about the
        // other one; such draws are rejected and redrawn.
        loop {
            count.fill(0);
            for _ in 0..n {
                count[rng.random_range(0..n)] += 1;
            }
            let mut seen = [false; 2];
            for (i, &c) in count.iter().enumerate() {
                seen[data.y[i] as usize] |= c > 0;
            }
            if seen[0] && seen[1] {
                break;
            }
        }
    } else {
        count.fill(1);
    }
    // Balanced weights proportional to n / (2 n_c) over the drawn sample. The
    // class weights are the opposite class counts, which keeps root totals
    // exactly equal in floating point.
    let mut drawn = [0u64; 2];
    for (i, &c) in count.iter().enumerate() {
        drawn[data.y[i] as usize] += u64::from(c);
    }
    let class_weight = if config.class_weighting && drawn[0] > 0 && drawn[1] > 0 {
        [drawn[1] as f64, drawn[0] as f64]
    } else {
        [1.0, 1.0]
    };
    let weight: Vec<f64> = data.y.iter().map(|&v| class_weight[v as usize]).collect();
    let mut idx: Vec<usize> = (0..n).filter(|&i| count[i] > 0).collect();

    let mut b = Builder {
        data,
        config,
        weight,
        count,
        mtry: config.features_per_split.resolve(data.columns.len()),
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(idx.len()),
    };
    b.build(&mut idx, 0);
    Tree { nodes: b.nodes }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn class_totals(&self, idx: &[usize]) -> ([f64; 2], u64) {
        let mut w = [0.0; 2];
        let mut draws = 0u64;
        for &i in idx {
            let c = self.count[i];
            w[self.data.y[i] as usize] += self.weight[i] * f64::from(c);
            draws += u64::from(c);
        }
        (w, draws)
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let (w, draws) = self.class_totals(idx);
        let prob = w[1] / (w[0] + w[1]);
        self.nodes.push(Node::Leaf { prob });

        let pure = w[0] == 0.0 || w[1] == 0.0;
        if pure || depth >= self.config.max_depth || draws < self.config.min_samples_split as u64 || self.mtry == 0 {
            return id;
        }
        let Some(split) = self.best_split(idx, w) else {
            return id;
        };
        let col = &self.data.columns[split.feature];
        let mut cut = 0;
        for k in 0..idx.len() {
            if col[idx[k]] <= split.threshold {
                idx.swap(cut, k);
                cut += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(cut);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[id as usize] =
            Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    fn best_split(&mut self, idx: &[usize], total: [f64; 2]) -> Option<SplitChoice> {
        let d = self.data.columns.len();
        let mut features = sample(&mut self.rng, d, self.mtry).into_vec();
        features.sort_unstable();

        let w_all = total[0] + total[1];
        // Maximising sum over children of (w0^2 + w1^2) / W is equivalent to
        // maximising the weighted Gini decrease.
        let parent_score = (total[0] * total[0] + total[1] * total[1]) / w_all;
        let mut best_score = parent_score + 1e-12 * parent_score;
        let mut best: Option<SplitChoice> = None;

        for f in features {
            let col = &self.data.columns[f];
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (col[i], i)));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0.0f64; 2];
            for k in 0..self.scratch.len() - 1 {
                let (v, i) = self.scratch[k];
                left[self.data.y[i] as usize] += self.weight[i] * f64::from(self.count[i]);
                let next = self.scratch[k + 1].0;
                if next == v {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let wl = left[0] + left[1];
                let wr = right[0] + right[1];
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let score = (left[0] * left[0] + left[1] * left[1]) / wl
                    + (right[0] * right[0] + right[1] * right[1]) / wr;
                if score > best_score {
                    best_score = score;
                    let mut threshold = v + (next - v) / 2.0;
                    // Guard against the midpoint rounding up onto `next`.
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(SplitChoice { feature: f, threshold });
                }
            }
        }
        best
    }
}
