//! Command-line front end: argument model, command runners and report
//! emission. The `icp` binary is a thin wrapper around [`execute`].

pub mod args;
pub mod figures;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use icp_core::dataset::{
    assemble_table, load_event_coords_csv, load_features_csv, load_grids_csv, load_observations_csv,
    write_features_csv, AggregationSpec, DatasetTable,
};
use icp_core::forest::ForestConfig;
use icp_core::hsic::{hsic_matrix, load_clusters_json, threshold_clusters};
use icp_core::icp::{cluster_icp, exhaustive_icp, extract_accepted_at_alpha, greedy_icp, IcpOutcome, Memoized};
use icp_core::invariance::{
    event_folds, generalization_curve, spatial_folds, write_curve_csv, FoldAssignment, ForestCiTest,
};
use icp_core::seed::derive_seed;
use icp_core::synth::{coverage_experiment, sample_scm, CoverageOptions, ScmSpec};
use serde::Serialize;
use serde_json::{json, Value};

pub use args::{Cli, Command};
use args::{FoldArgs, SchemeArg};

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with the invocation or its inputs rather than with the toolkit.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Exit status for an error: 2 for invalid input, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<icp_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub toolkit_version: &'static str,
    pub command: &'static str,
    pub config: Cli,
    pub wall_clock_seconds: f64,
    pub payload: Value,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

/// Files written by a run, removed again if the run fails.
pub struct Outputs {
    dir: PathBuf,
    created: Vec<PathBuf>,
    created_dir: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), created: Vec::new(), created_dir })
    }

    pub fn write_at<F>(&mut self, path: &Path, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.created.push(path.to_path_buf());
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        self.write_at(&path, body)
    }

    pub fn write_str(&mut self, name: &str, contents: &str) -> Result<()> {
        self.write(name, |w| Ok(w.write_all(contents.as_bytes())?))
    }

    pub fn names(&self) -> Vec<String> {
        self.created
            .iter()
            .map(|p| p.strip_prefix(&self.dir).unwrap_or(p).display().to_string())
            .collect()
    }

    pub fn cleanup(&mut self) {
        for p in self.created.drain(..) {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(UsageError(format!("input file not found: {}", path.display())).into())
        }
        Err(e) => Err(e).with_context(|| format!("opening {}", path.display())),
    }
}

fn load_table(path: &Path, coords: Option<&PathBuf>) -> Result<DatasetTable> {
    let table = load_features_csv(open_input(path)?).with_context(|| format!("reading {}", path.display()))?;
    match coords {
        Some(c) => {
            let coords = load_event_coords_csv(open_input(c)?).with_context(|| format!("reading {}", c.display()))?;
            Ok(table.with_event_coords(coords)?)
        }
        None => Ok(table),
    }
}

fn build_folds(table: &DatasetTable, args: &FoldArgs, seed: u64) -> Result<FoldAssignment> {
    let folds = match args.scheme {
        SchemeArg::Event => event_folds(table, args.k, seed)?,
        SchemeArg::Spatial => spatial_folds(table, args.k, seed)?,
    };
    folds.validate(table)?;
    Ok(folds)
}

fn outcome_csv(outcome: &IcpOutcome, w: &mut impl Write) -> Result<()> {
    let accepted: BTreeSet<&Vec<String>> = outcome.accepted_sets.iter().collect();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subset", "p_value", "auc_with_env", "auc_without_env", "accepted"])?;
    for t in &outcome.tested_sets {
        out.write_record([
            t.subset.join(";"),
            t.p_value.to_string(),
            t.auc_with_env.to_string(),
            t.auc_without_env.to_string(),
            accepted.contains(&t.subset).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn outcome_warnings(outcome: &IcpOutcome, warnings: &mut Vec<String>) {
    if outcome.no_accepted {
        warnings.push("no subset was accepted; the intersection is reported as empty".into());
    }
}

fn icp_payload(outcome: &IcpOutcome) -> Value {
    json!({
        "alpha": outcome.alpha,
        "tested": outcome.tested_sets.len(),
        "accepted": outcome.accepted_sets.len(),
        "intersection": outcome.intersection,
        "defining_sets": outcome.defining_sets,
        "accepted_sets": outcome.accepted_sets,
        "no_accepted": outcome.no_accepted,
        "tested_sets": outcome.tested_sets,
    })
}

fn ci_config(forest: &ForestConfig) -> Value {
    json!({
        "forest": forest,
        "arm_seeds": "independent per fold and arm",
        "alternative": "two-sided",
    })
}

/// Runs one command, writing its files through `outputs`.
pub fn run(cli: &Cli, outputs: &mut Outputs) -> Result<(Value, Vec<String>)> {
    let seed = cli.common.seed;
    let forest = cli.common.forest.config(seed)?;
    let mut warnings = Vec::new();
    let payload = match &cli.command {
        Command::Aggregate { grids, events, obs, out } => {
            let grid_obs = load_grids_csv(open_input(grids)?).with_context(|| format!("reading {}", grids.display()))?;
            let coords = load_event_coords_csv(open_input(events)?)?;
            let (env_names, meta) = load_observations_csv(open_input(obs)?)?;
            let table = assemble_table(&grid_obs, &env_names, &meta, Some(&coords), &AggregationSpec::default())?;
            outputs.write_at(out, |w| Ok(write_features_csv(&table, w)?))?;
            json!({
                "observations": table.n(),
                "features": table.feature_names().len(),
                "groups": table.group_names(),
                "events": table.distinct_events().len(),
            })
        }
        Command::Folds { features, folds } => {
            let table = load_table(features, folds.coords.as_ref())?;
            let assignment = build_folds(&table, folds, seed)?;
            outputs.write("folds.csv", |w| Ok(assignment.write_csv(w)?))?;
            let rows = assignment.row_folds(&table)?;
            let sizes: Vec<usize> = (0..assignment.k).map(|f| rows.iter().filter(|&&r| r == f).count()).collect();
            json!({ "assignment": assignment, "rows_per_fold": sizes })
        }
        Command::Greedy { features, alpha, folds, curve, curve_seeds } => {
            let table = load_table(features, folds.coords.as_ref())?;
            let assignment = build_folds(&table, folds, seed)?;
            let tester = ForestCiTest::new(&table, &assignment, forest.clone());
            let trace = greedy_icp(&tester, &table.group_names())?;
            outputs.write("trace.csv", |w| Ok(trace.write_csv(w)?))?;
            let accepted = extract_accepted_at_alpha(&trace, *alpha);
            let mut payload = json!({
                "test": ci_config(&forest),
                "trace": trace,
                "exclusion_order": trace.exclusion_order(),
                "accepted_at_alpha": accepted,
            });
            if *curve {
                let seeds: Vec<u64> = (0..*curve_seeds as u64).map(|s| derive_seed(seed, s)).collect();
                let steps = generalization_curve(&table, &trace.exclusion_order(), &forest, &seeds, folds.k)?;
                outputs.write("curve.csv", |w| Ok(write_curve_csv(&steps, w)?))?;
                payload["curve"] = serde_json::to_value(&steps)?;
            }
            for (name, body) in figures::greedy_figures(&trace, *alpha) {
                outputs.write_str(&name, &body)?;
            }
            payload
        }
        Command::Exhaustive { features, base, min_size, alpha, folds } => {
            let table = load_table(features, folds.coords.as_ref())?;
            let base = base.clone().unwrap_or_else(|| table.group_names());
            let assignment = build_folds(&table, folds, seed)?;
            let tester = ForestCiTest::new(&table, &assignment, forest.clone());
            let outcome = exhaustive_icp(&Memoized::new(&tester), &base, *min_size, *alpha)?;
            outputs.write("tested_sets.csv", |w| outcome_csv(&outcome, w))?;
            outcome_warnings(&outcome, &mut warnings);
            let mut p = icp_payload(&outcome);
            p["test"] = ci_config(&forest);
            p
        }
        Command::ClusterIcp { features, clusters, min_size, alpha, folds } => {
            let table = load_table(features, folds.coords.as_ref())?;
            let clusters = load_clusters_json(open_input(clusters)?)?;
            let assignment = build_folds(&table, folds, seed)?;
            let tester = ForestCiTest::new(&table, &assignment, forest.clone());
            let outcome = cluster_icp(&Memoized::new(&tester), &clusters, *min_size, *alpha)?;
            outputs.write("tested_sets.csv", |w| outcome_csv(&outcome, w))?;
            outcome_warnings(&outcome, &mut warnings);
            let mut p = icp_payload(&outcome);
            p["test"] = ci_config(&forest);
            p["clusters"] = serde_json::to_value(&clusters)?;
            p
        }
        Command::Hsic { features, threshold, groups } => {
            let table = load_table(features, None)?;
            let groups = groups.clone().unwrap_or_else(|| table.group_names());
            let matrix = hsic_matrix(&table, &groups)?;
            let clusters = threshold_clusters(&matrix, *threshold)?;
            outputs.write("hsic_matrix.csv", |w| Ok(matrix.write_csv(w)?))?;
            let lists = clusters.to_name_lists(&matrix.group_names);
            outputs.write("clusters.json", |w| Ok(serde_json::to_writer_pretty(w, &lists)?))?;
            for (name, body) in figures::hsic_figures(&matrix) {
                outputs.write_str(&name, &body)?;
            }
            json!({ "matrix": matrix, "clusters": clusters, "cluster_lists": lists })
        }
        Command::Synth { spec, events, obs } => {
            let mut spec: ScmSpec = serde_json::from_reader(open_input(spec)?).context("parsing model spec")?;
            spec.seed = seed;
            let result = sample_scm(&spec, *events, *obs)?;
            outputs.write("features.csv", |w| Ok(write_features_csv(&result.table, w)?))?;
            outputs.write("truth.json", |w| Ok(serde_json::to_writer_pretty(w, &result.truth)?))?;
            let positives = result.table.target().iter().filter(|&&y| y == 1).count();
            if spec.env_affects_y_directly() {
                warnings.push("the model has a direct environment-to-target edge".into());
            }
            json!({
                "truth": result.truth,
                "observations": result.table.n(),
                "prevalence": positives as f64 / result.table.n() as f64,
            })
        }
        Command::Coverage { spec, runs, alpha, min_size, events, obs, k } => {
            let mut spec: ScmSpec = serde_json::from_reader(open_input(spec)?).context("parsing model spec")?;
            spec.seed = seed;
            let options = CoverageOptions {
                runs: *runs,
                alpha: *alpha,
                min_size: *min_size,
                n_events: *events,
                obs_per_event: *obs,
                k_folds: *k,
            };
            let report = coverage_experiment(&spec, &options, &forest)?;
            outputs.write("coverage.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["run", "seed", "accepted", "no_accepted", "covered", "intersection"])?;
                for r in &report.runs {
                    out.write_record([
                        r.run.to_string(),
                        r.seed.to_string(),
                        r.accepted.to_string(),
                        r.no_accepted.to_string(),
                        r.covered.to_string(),
                        r.intersection.join(";"),
                    ])?;
                }
                out.flush()?;
                Ok(())
            })?;
            if report.misspecified {
                warnings.push("the model has a direct environment-to-target edge; coverage is not guaranteed".into());
            }
            json!({ "spec": spec, "options": options, "report": report })
        }
    };
    Ok((payload, warnings))
}

/// Runs a command end to end and writes report.json.
/// On failure every file written so far is removed.
pub fn execute(cli: Cli) -> Result<RunReport> {
    let cli = cli.resolve()?;
    if let Some(n) = cli.common.threads {
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut outputs = Outputs::new(&cli.common.out_dir)?;
    let started = Instant::now();
    let result = run(&cli, &mut outputs).and_then(|(payload, warnings)| {
        let mut report = RunReport {
            schema_version: SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name(),
            config: cli.clone(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            payload,
            warnings,
            files: Vec::new(),
        };
        report.files = outputs.names();
        report.files.push("report.json".into());
        outputs.write("report.json", |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
        Ok(report)
    });
    if result.is_err() {
        outputs.cleanup();
    }
    result
}
