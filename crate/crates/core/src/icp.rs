//! Invariant causal prediction estimators.
//!
//! * [`greedy_icp`] eliminates one group at a time, always dropping the group
//!   whose removal leaves the most invariant subset (largest p-value).
//! * [`exhaustive_icp`] tests every subset above a minimum size and
//!   intersects the accepted ones.
//! * [`cluster_icp`] does the same over unions of (possibly overlapping)
//!   clusters of groups.
//!
//! All estimators are generic over [`IndependenceTest`], so the forest-based
//! test can be swapped for a scripted one in tests.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::Mutex;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariance::{CITestResult, IndependenceTest};

pub type Subset = BTreeSet<String>;

/// Caches test results by subset within a run.
pub struct Memoized<'a, T: IndependenceTest> {
    inner: &'a T,
    cache: Mutex<HashMap<Subset, CITestResult>>,
}

impl<'a, T: IndependenceTest> Memoized<'a, T> {
    pub fn new(inner: &'a T) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    /// Number of distinct subsets tested so far.
    pub fn len(&self) -> usize {
        self.cache.lock().expect("poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: IndependenceTest> IndependenceTest for Memoized<'_, T> {
    fn test(&self, subset: &Subset) -> Result<CITestResult> {
        if let Some(hit) = self.cache.lock().expect("poisoned").get(subset) {
            return Ok(hit.clone());
        }
        let result = self.inner.test(subset)?;
        self.cache.lock().expect("poisoned").insert(subset.clone(), result.clone());
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub removed_group: String,
    /// Largest p-value among all candidate removals at this step.
    pub p_value_of_removal: f64,
    pub auc_with_env: f64,
    pub auc_without_env: f64,
    pub remaining_after: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub initial: Vec<String>,
    pub steps: Vec<GreedyStep>,
    /// The last group left; it has no p-value because removing it would
    /// leave the empty set.
    pub final_group: String,
}

impl GreedyTrace {
    /// Groups in elimination order, ending with the final group.
    pub fn exclusion_order(&self) -> Vec<String> {
        let mut order: Vec<String> = self.steps.iter().map(|s| s.removed_group.clone()).collect();
        order.push(self.final_group.clone());
        order
    }

    /// Writes `step,removed,p_value,auc_with_env,auc_without_env`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["step", "removed", "p_value", "auc_with_env", "auc_without_env"])?;
        for (i, s) in self.steps.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                s.removed_group.clone(),
                s.p_value_of_removal.to_string(),
                s.auc_with_env.to_string(),
                s.auc_without_env.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Backward elimination down to a single group.
///
/// At every step each remaining group `i` is tentatively removed and the
/// subset `S \ {i}` tested; the group with the largest p-value is dropped
/// (ties go to the lexicographically smallest name). The full trace is always
/// computed so any significance level can be applied afterwards with
/// [`extract_accepted_at_alpha`].
pub fn greedy_icp<T: IndependenceTest>(tester: &T, groups: &[String]) -> Result<GreedyTrace> {
    let mut current: Subset = groups.iter().cloned().collect();
    if current.len() != groups.len() {
        return Err(Error::invalid("duplicate group names"));
    }
    if current.len() < 2 {
        return Err(Error::invalid("greedy search needs at least two groups"));
    }
    let memo = Memoized::new(tester);
    let mut steps = Vec::with_capacity(current.len() - 1);
    while current.len() > 1 {
        let candidates: Vec<(String, Subset)> = current
            .iter()
            .map(|g| {
                let mut s = current.clone();
                s.remove(g);
                (g.clone(), s)
            })
            .collect();
        let results: Vec<CITestResult> =
            candidates.par_iter().map(|(_, s)| memo.test(s)).collect::<Result<_>>()?;
        // Candidates are in name order, so the first maximum wins ties.
        let mut best = 0;
        for (i, r) in results.iter().enumerate() {
            if r.p_value > results[best].p_value {
                best = i;
            }
        }
        let (removed, remaining) = candidates.into_iter().nth(best).expect("non-empty");
        let r = &results[best];
        steps.push(GreedyStep {
            removed_group: removed,
            p_value_of_removal: r.p_value,
            auc_with_env: r.auc_with_env,
            auc_without_env: r.auc_without_env,
            remaining_after: remaining.iter().cloned().collect(),
        });
        current = remaining;
    }
    Ok(GreedyTrace {
        initial: groups.to_vec(),
        steps,
        final_group: current.into_iter().next().expect("one group left"),
    })
}

/// Groups still in play when the first p-value below `alpha` is computed.
///
/// If no step falls below `alpha`, only the final group remains; if the
/// first step already does, the full initial set is returned.
pub fn extract_accepted_at_alpha(trace: &GreedyTrace, alpha: f64) -> Subset {
    match trace.steps.iter().position(|s| s.p_value_of_removal < alpha) {
        None => [trace.final_group.clone()].into(),
        Some(0) => trace.initial.iter().cloned().collect(),
        Some(t) => trace.steps[t - 1].remaining_after.iter().cloned().collect(),
    }
}

/// Orders subsets by size descending, then lexicographically.
fn enumeration_order(a: &Subset, b: &Subset) -> std::cmp::Ordering {
    b.len().cmp(&a.len()).then_with(|| a.iter().cmp(b.iter()))
}

/// All subsets of `base` with at least `min_size` elements, largest first and
/// lexicographic within a size.
pub fn enumerate_subsets(base: &[String], min_size: usize) -> Result<Vec<Subset>> {
    let sorted: Vec<&String> = base.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if sorted.len() != base.len() {
        return Err(Error::invalid("duplicate names in base set"));
    }
    if min_size < 1 || min_size > sorted.len() {
        return Err(Error::invalid(format!("min_size {min_size} outside 1..={}", sorted.len())));
    }
    let mut out = Vec::new();
    for size in (min_size..=sorted.len()).rev() {
        for combo in sorted.iter().combinations(size) {
            out.push(combo.into_iter().map(|s| (*s).clone()).collect());
        }
    }
    Ok(out)
}

/// Distinct unions of at least `min_size` clusters, in enumeration order.
pub fn cluster_subsets(clusters: &[Subset], min_size: usize) -> Result<Vec<Subset>> {
    if clusters.is_empty() || clusters.iter().any(|c| c.is_empty()) {
        return Err(Error::invalid("clusters must be non-empty"));
    }
    if min_size < 1 || min_size > clusters.len() {
        return Err(Error::invalid(format!("min_size {min_size} outside 1..={}", clusters.len())));
    }
    let mut unique: BTreeSet<Subset> = BTreeSet::new();
    for size in min_size..=clusters.len() {
        for combo in (0..clusters.len()).combinations(size) {
            unique.insert(combo.iter().flat_map(|&i| clusters[i].iter().cloned()).collect());
        }
    }
    let mut out: Vec<Subset> = unique.into_iter().collect();
    out.sort_by(enumeration_order);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedSet {
    pub subset: Vec<String>,
    pub p_value: f64,
    pub auc_with_env: f64,
    pub auc_without_env: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpOutcome {
    pub alpha: f64,
    pub tested_sets: Vec<TestedSet>,
    /// Tested sets with `p > alpha`, in test order.
    pub accepted_sets: Vec<Vec<String>>,
    pub intersection: Vec<String>,
    pub defining_sets: Vec<Vec<String>>,
    pub no_accepted: bool,
}

impl IcpOutcome {
    pub fn intersection_set(&self) -> Subset {
        self.intersection.iter().cloned().collect()
    }
}

/// Inclusion-minimal members of `accepted`, deduplicated, ordered by size and
/// then lexicographically.
pub fn defining_sets(accepted: &[Subset]) -> Vec<Subset> {
    let unique: BTreeSet<&Subset> = accepted.iter().collect();
    let mut out: Vec<Subset> = unique
        .iter()
        .filter(|s| !unique.iter().any(|t| t.len() < s.len() && t.is_subset(s)))
        .map(|s| (*s).clone())
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.iter().cmp(b.iter())));
    out
}

/// Tests every set and intersects the accepted ones.
pub fn test_sets<T: IndependenceTest>(tester: &T, sets: &[Subset], alpha: f64) -> Result<IcpOutcome> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    let results: Vec<CITestResult> = sets.par_iter().map(|s| tester.test(s)).collect::<Result<_>>()?;
    let tested_sets: Vec<TestedSet> = sets
        .iter()
        .zip(&results)
        .map(|(s, r)| TestedSet {
            subset: s.iter().cloned().collect(),
            p_value: r.p_value,
            auc_with_env: r.auc_with_env,
            auc_without_env: r.auc_without_env,
        })
        .collect();
    let accepted: Vec<Subset> =
        sets.iter().zip(&results).filter(|(_, r)| r.p_value > alpha).map(|(s, _)| s.clone()).collect();
    let intersection: Subset = match accepted.split_first() {
        None => Subset::new(),
        Some((first, rest)) => rest.iter().fold(first.clone(), |acc, s| &acc & s),
    };
    debug_assert!(accepted.iter().all(|s| intersection.is_subset(s)));
    Ok(IcpOutcome {
        alpha,
        no_accepted: accepted.is_empty(),
        defining_sets: defining_sets(&accepted).into_iter().map(|s| s.into_iter().collect()).collect(),
        accepted_sets: accepted.into_iter().map(|s| s.into_iter().collect()).collect(),
        intersection: intersection.into_iter().collect(),
        tested_sets,
    })
}

/// Tests all subsets of `base` of size at least `min_size`.
pub fn exhaustive_icp<T: IndependenceTest>(
    tester: &T,
    base: &[String],
    min_size: usize,
    alpha: f64,
) -> Result<IcpOutcome> {
    test_sets(tester, &enumerate_subsets(base, min_size)?, alpha)
}

/// Tests every distinct union of at least `min_size` clusters.
pub fn cluster_icp<T: IndependenceTest>(
    tester: &T,
    clusters: &[Subset],
    min_size: usize,
    alpha: f64,
) -> Result<IcpOutcome> {
    test_sets(tester, &cluster_subsets(clusters, min_size)?, alpha)
}
