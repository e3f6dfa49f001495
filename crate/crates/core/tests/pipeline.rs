use icp_core::dataset::{load_features_csv, write_features_csv};
use icp_core::forest::ForestConfig;
use icp_core::icp::{exhaustive_icp, greedy_icp, Memoized};
use icp_core::invariance::{ci_test, event_folds, ForestCiTest, IndependenceTest};
use icp_core::synth::{sample_scm, Link, NoiseFamily, ScmSpec};

fn spec(env_to_y: f64, seed: u64) -> ScmSpec {
    ScmSpec {
        p: 3,
        group_width: 1,
        causal_set: vec![1],
        env_dim: 2,
        env_to_x_strength: vec![1.0; 3],
        x_noise_scale: 0.3,
        link: Link::LinearLogit,
        noise: NoiseFamily::Logistic,
        signal: 2.0,
        y_descendant_set: vec![],
        descendant_strength: 1.0,
        event_shift_scale: 0.3,
        env_to_y_strength: env_to_y,
        n_regions: 5,
        region_spread: 1.0,
        seed,
    }
}

fn forest() -> ForestConfig {
    ForestConfig { n_trees: 30, max_depth: 6, seed: 9, ..Default::default() }
}

#[test]
fn csv_round_trip_preserves_synthetic_table() {
    let table = sample_scm(&spec(0.0, 1), 12, 4).unwrap().table;
    let mut buf = Vec::new();
    write_features_csv(&table, &mut buf).unwrap();
    let back = load_features_csv(buf.as_slice()).unwrap();
    assert_eq!(back, table);
}

#[test]
fn ci_test_is_reproducible() {
    let table = sample_scm(&spec(0.0, 2), 30, 6).unwrap().table;
    let folds = event_folds(&table, 5, 3).unwrap();
    let a = ci_test(&table, &["x1", "x2"], &folds, &forest()).unwrap();
    let b = ci_test(&table, &["x1", "x2"], &folds, &forest()).unwrap();
    assert_eq!(a, b);
    let c = ci_test(&table, &["x1", "x2"], &folds, &forest().with_seed(10)).unwrap();
    assert_ne!(a.p_value, c.p_value);
}

#[test]
fn direct_environment_effect_is_detected() {
    let table = sample_scm(&spec(3.0, 4), 60, 10).unwrap().table;
    let folds = event_folds(&table, 5, 1).unwrap();
    let r = ci_test(&table, &["x1"], &folds, &forest()).unwrap();
    assert!(r.auc_with_env > r.auc_without_env);
    assert!(r.p_value < 0.01, "p = {}", r.p_value);
}

#[test]
fn searches_agree_on_memoized_tester() {
    let table = sample_scm(&spec(0.0, 5), 40, 8).unwrap().table;
    let folds = event_folds(&table, 5, 2).unwrap();
    let tester = ForestCiTest::new(&table, &folds, forest());
    let memo = Memoized::new(&tester);
    let groups = table.group_names();

    let outcome = exhaustive_icp(&memo, &groups, 1, 0.05).unwrap();
    assert_eq!(outcome.tested_sets.len(), 7);
    assert_eq!(memo.len(), 7);

    // Every subset greedy visits was already tested, so the cache does not grow.
    let trace = greedy_icp(&memo, &groups).unwrap();
    assert_eq!(memo.len(), 7);
    for step in &trace.steps {
        let subset = step.remaining_after.iter().cloned().collect();
        assert_eq!(memo.test(&subset).unwrap().p_value, step.p_value_of_removal);
    }
}
