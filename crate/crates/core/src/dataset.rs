//! Grouped feature tables, CSV ingestion and per-grid aggregation.
//!
//! A [`DatasetTable`] holds the feature matrix `X`, the binary target `Y`,
//! the environment matrix `E` and per-observation event identifiers. Feature
//! columns are organised into [`VariableGroup`]s: every vector-valued
//! variable contributes several columns (its aggregations) that are always
//! included or excluded together. Group membership is encoded in column names
//! as `<group>__<stat>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between the group name and the statistic in a column name.
pub const GROUP_SEPARATOR: &str = "__";
/// Prefix of environment columns in the feature CSV.
pub const ENV_PREFIX: &str = "env_";
/// Prefix used for categorical distribution columns (`<group>__cat_<value>`).
pub const CATEGORY_PREFIX: &str = "cat_";

/// One summary statistic of a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Statistic {
    Mean,
    /// Population standard deviation (divisor `m`).
    Std,
    Min,
    Max,
    /// Quantile at the given percent level, linearly interpolated.
    Quantile(u8),
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::Mean => "mean".into(),
            Statistic::Std => "std".into(),
            Statistic::Min => "min".into(),
            Statistic::Max => "max".into(),
            Statistic::Quantile(p) => format!("q{p:02}"),
        }
    }
}

/// The fixed list of statistics computed for every continuous grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub statistics: Vec<Statistic>,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        let mut statistics = vec![Statistic::Mean, Statistic::Std, Statistic::Min, Statistic::Max];
        statistics.extend([1, 5, 25, 50, 75, 95, 99].map(Statistic::Quantile));
        Self { statistics }
    }
}

impl AggregationSpec {
    /// Output column names for a variable, in statistic order.
    pub fn column_names(&self, variable: &str) -> Vec<String> {
        self.statistics
            .iter()
            .map(|s| format!("{variable}{GROUP_SEPARATOR}{}", s.name()))
            .collect()
    }

    /// Computes every statistic of `values` in order.
    pub fn aggregate(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / m;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        Ok(self
            .statistics
            .iter()
            .map(|s| match s {
                Statistic::Mean => mean,
                Statistic::Std => var.sqrt(),
                Statistic::Min => sorted[0],
                Statistic::Max => sorted[sorted.len() - 1],
                Statistic::Quantile(p) => quantile_sorted(&sorted, f64::from(*p) / 100.0),
            })
            .collect())
    }
}

/// Linear interpolation between the closest order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridValues {
    Continuous(Vec<f64>),
    Categorical(Vec<String>),
}

/// The pixel values of one variable for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridObservation {
    pub obs_id: String,
    pub variable: String,
    pub values: GridValues,
}

/// Aggregates a continuous grid into the statistics of `spec`.
pub fn aggregate_grid(grid: &GridObservation, spec: &AggregationSpec) -> Result<Vec<f64>> {
    match &grid.values {
        GridValues::Continuous(values) => spec.aggregate(values),
        GridValues::Categorical(_) => Err(Error::invalid(format!(
            "variable {} is categorical",
            grid.variable
        ))),
    }
}

/// Relative frequency of each vocabulary entry among the pixels.
pub fn aggregate_categorical<S: AsRef<str>>(pixels: &[S], vocabulary: &[String]) -> Result<Vec<f64>> {
    if pixels.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let index: HashMap<&str, usize> =
        vocabulary.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut counts = vec![0usize; vocabulary.len()];
    for p in pixels {
        let p = p.as_ref();
        let i = index.get(p).ok_or_else(|| Error::UnknownCategory(p.to_string()))?;
        counts[*i] += 1;
    }
    let m = pixels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / m).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    ContinuousAggregated,
    CategoricalDistribution,
}

/// A vector-valued variable: the feature columns that enter a model jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableGroup {
    pub name: String,
    pub column_indices: Vec<usize>,
    pub kind: GroupKind,
}

/// Observations with grouped features, binary target, environment and events.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    obs_ids: Vec<String>,
    event_ids: Vec<String>,
    target: Vec<u8>,
    env_names: Vec<String>,
    environment: Array2<f64>,
    feature_names: Vec<String>,
    features: Array2<f64>,
    groups: Vec<VariableGroup>,
    event_coords: BTreeMap<String, (f64, f64)>,
}

/// Raw parts of a [`DatasetTable`]; validated by [`DatasetTable::new`].
#[derive(Debug, Clone, Default)]
pub struct TableParts {
    pub obs_ids: Vec<String>,
    pub event_ids: Vec<String>,
    pub target: Vec<u8>,
    pub env_names: Vec<String>,
    pub environment: Array2<f64>,
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    /// When empty, coordinates are taken from `env_lat`/`env_lon` if present.
    pub event_coords: BTreeMap<String, (f64, f64)>,
}

impl DatasetTable {
    pub fn new(parts: TableParts) -> Result<Self> {
        let n = parts.target.len();
        for (what, len) in [
            ("obs_ids", parts.obs_ids.len()),
            ("event_ids", parts.event_ids.len()),
            ("features", parts.features.nrows()),
            ("environment", parts.environment.nrows()),
        ] {
            if len != n {
                return Err(Error::invalid(format!("{what} has {len} rows, target has {n}")));
            }
        }
        if parts.feature_names.len() != parts.features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: parts.feature_names.len(),
                actual: parts.features.ncols(),
            });
        }
        if parts.env_names.len() != parts.environment.ncols() {
            return Err(Error::DimensionMismatch {
                expected: parts.env_names.len(),
                actual: parts.environment.ncols(),
            });
        }
        if parts.target.iter().any(|&y| y > 1) {
            return Err(Error::invalid("target must be binary"));
        }
        for ((r, c), v) in parts.features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row: r, column: c });
            }
        }
        if parts.environment.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite environment value"));
        }
        let groups = infer_groups(&parts.feature_names)?;

        let mut event_coords = parts.event_coords;
        if event_coords.is_empty() {
            let lat = parts.env_names.iter().position(|c| c == "lat");
            let lon = parts.env_names.iter().position(|c| c == "lon");
            if let (Some(lat), Some(lon)) = (lat, lon) {
                for (i, e) in parts.event_ids.iter().enumerate() {
                    event_coords
                        .entry(e.clone())
                        .or_insert((parts.environment[[i, lat]], parts.environment[[i, lon]]));
                }
            }
        }
        if !event_coords.is_empty() {
            if let Some(e) = parts.event_ids.iter().find(|e| !event_coords.contains_key(*e)) {
                return Err(Error::MissingCoordinates(e.clone()));
            }
        }

        Ok(Self {
            obs_ids: parts.obs_ids,
            event_ids: parts.event_ids,
            target: parts.target,
            env_names: parts.env_names,
            environment: parts.environment,
            feature_names: parts.feature_names,
            features: parts.features,
            groups,
            event_coords,
        })
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn obs_ids(&self) -> &[String] {
        &self.obs_ids
    }

    pub fn event_ids(&self) -> &[String] {
        &self.event_ids
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn environment(&self) -> &Array2<f64> {
        &self.environment
    }

    /// Environment column names without the `env_` prefix.
    pub fn env_names(&self) -> &[String] {
        &self.env_names
    }

    pub fn groups(&self) -> &[VariableGroup] {
        &self.groups
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn group(&self, name: &str) -> Option<&VariableGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn event_coords(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.event_coords
    }

    /// Distinct event identifiers in sorted order.
    pub fn distinct_events(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.event_ids.iter().collect();
        set.into_iter().cloned().collect()
    }

    /// Replaces the event coordinates, checking that every event is covered.
    pub fn with_event_coords(mut self, coords: BTreeMap<String, (f64, f64)>) -> Result<Self> {
        if let Some(e) = self.event_ids.iter().find(|e| !coords.contains_key(*e)) {
            return Err(Error::MissingCoordinates(e.clone()));
        }
        self.event_coords = coords;
        Ok(self)
    }

    /// Feature columns of the named groups (in table group order), optionally
    /// followed by the environment columns.
    ///
    /// An empty selection is legal: with `include_environment` it yields the
    /// environment-only design matrix, without it a zero-width matrix.
    pub fn select_columns<S: AsRef<str>>(
        &self,
        group_names: &[S],
        include_environment: bool,
    ) -> Result<Array2<f64>> {
        let wanted: BTreeSet<&str> = group_names.iter().map(|s| s.as_ref()).collect();
        for name in &wanted {
            if self.group(name).is_none() {
                return Err(Error::UnknownGroup(name.to_string()));
            }
        }
        let mut columns: Vec<usize> = Vec::new();
        for g in &self.groups {
            if wanted.contains(g.name.as_str()) {
                columns.extend(&g.column_indices);
            }
        }
        let mut out = self.features.select(Axis(1), &columns);
        if include_environment {
            out = ndarray::concatenate(Axis(1), &[out.view(), self.environment.view()])
                .expect("row counts agree");
        }
        Ok(out)
    }

    /// The rows of `rows` as a new table. Event coordinates are kept.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &[String]| rows.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Self::new(TableParts {
            obs_ids: pick(&self.obs_ids),
            event_ids: pick(&self.event_ids),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            env_names: self.env_names.clone(),
            environment: self.environment.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), rows),
            event_coords: self.event_coords.clone(),
        })
    }
}

/// Groups feature columns by the prefix before [`GROUP_SEPARATOR`], in order
/// of first appearance.
fn infer_groups(feature_names: &[String]) -> Result<Vec<VariableGroup>> {
    let mut groups: Vec<VariableGroup> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut seen = BTreeSet::new();
    for (col, name) in feature_names.iter().enumerate() {
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!("duplicate column {name}")));
        }
        let (group, stat) = name
            .split_once(GROUP_SEPARATOR)
            .ok_or_else(|| Error::invalid(format!("column {name} lacks a group prefix")))?;
        if group.is_empty() || stat.is_empty() {
            return Err(Error::invalid(format!("column {name} has an empty group or statistic")));
        }
        let kind = if stat.starts_with(CATEGORY_PREFIX) {
            GroupKind::CategoricalDistribution
        } else {
            GroupKind::ContinuousAggregated
        };
        match position.get(group) {
            Some(&g) => {
                if groups[g].kind != kind {
                    return Err(Error::invalid(format!("group {group} mixes categorical and continuous columns")));
                }
                groups[g].column_indices.push(col);
            }
            None => {
                position.insert(group, groups.len());
                groups.push(VariableGroup { name: group.to_string(), column_indices: vec![col], kind });
            }
        }
    }
    Ok(groups)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, message: message.into() }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads a feature table with header
/// `obs_id,event_id,label,env_<name>...,<group>__<stat>...`.
pub fn load_features_csv<R: Read>(source: R) -> Result<DatasetTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "obs_id" || cols[1] != "event_id" || cols[2] != "label" {
        return Err(parse_err(1, "header must start with obs_id,event_id,label"));
    }
    let mut env_names = Vec::new();
    let mut feature_names = Vec::new();
    for c in &cols[3..] {
        if let Some(e) = c.strip_prefix(ENV_PREFIX) {
            if !feature_names.is_empty() {
                return Err(parse_err(1, format!("environment column {c} after feature columns")));
            }
            env_names.push(e.to_string());
        } else if c.contains(GROUP_SEPARATOR) {
            feature_names.push(c.to_string());
        } else {
            return Err(parse_err(1, format!("column {c} is neither env_* nor <group>__<stat>")));
        }
    }
    let (q, d) = (env_names.len(), feature_names.len());

    let mut obs_ids = Vec::new();
    let mut event_ids = Vec::new();
    let mut target = Vec::new();
    let mut env = Vec::new();
    let mut feats = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != cols.len() {
            return Err(parse_err(line, format!("ragged row: {} fields, expected {}", record.len(), cols.len())));
        }
        obs_ids.push(record[0].to_string());
        event_ids.push(record[1].to_string());
        match record[2].trim() {
            "0" => target.push(0),
            "1" => target.push(1),
            _ => return Err(parse_err(line, "non-binary label")),
        }
        for (j, field) in record.iter().enumerate().skip(3) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number {field:?} in column {}", cols[j])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column {}", cols[j])));
            }
            if j < 3 + q {
                env.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let n = target.len();
    DatasetTable::new(TableParts {
        obs_ids,
        event_ids,
        target,
        env_names,
        environment: Array2::from_shape_vec((n, q), env).expect("shape"),
        feature_names,
        features: Array2::from_shape_vec((n, d), feats).expect("shape"),
        event_coords: BTreeMap::new(),
    })
}

/// Writes the table in the format read by [`load_features_csv`].
///
/// Numbers use the shortest representation that round-trips exactly.
pub fn write_features_csv<W: Write>(table: &DatasetTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["obs_id".to_string(), "event_id".into(), "label".into()];
    header.extend(table.env_names.iter().map(|e| format!("{ENV_PREFIX}{e}")));
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..table.n() {
        let mut row = vec![table.obs_ids[i].clone(), table.event_ids[i].clone(), table.target[i].to_string()];
        row.extend(table.environment.row(i).iter().map(|v| v.to_string()));
        row.extend(table.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `event_id,lat,lon`.
pub fn load_event_coords_csv<R: Read>(source: R) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["event_id", "lat", "lon"] {
        return Err(parse_err(1, "header must be event_id,lat,lon"));
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let num = |i: usize| -> Result<f64> {
            record[i].trim().parse().map_err(|_| parse_err(line, format!("invalid coordinate {:?}", &record[i])))
        };
        out.insert(record[0].to_string(), (num(1)?, num(2)?));
    }
    Ok(out)
}

/// Reads long-form grids `obs_id,variable,v0,...,v{m-1}`.
///
/// A variable whose values do not all parse as numbers is categorical.
pub fn load_grids_csv<R: Read>(source: R) -> Result<Vec<GridObservation>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "obs_id" || &header[1] != "variable" {
        return Err(parse_err(1, "header must start with obs_id,variable"));
    }
    let mut raw = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != header.len() {
            return Err(parse_err(line, "ragged row"));
        }
        let values: Vec<String> = record.iter().skip(2).map(|s| s.trim().to_string()).collect();
        raw.push((record[0].to_string(), record[1].to_string(), values));
    }
    let mut categorical = BTreeSet::new();
    for (_, var, values) in &raw {
        if values.iter().any(|v| v.parse::<f64>().is_err()) {
            categorical.insert(var.clone());
        }
    }
    Ok(raw
        .into_iter()
        .map(|(obs_id, variable, values)| {
            let values = if categorical.contains(&variable) {
                GridValues::Categorical(values)
            } else {
                GridValues::Continuous(values.iter().map(|v| v.parse().expect("checked")).collect())
            };
            GridObservation { obs_id, variable, values }
        })
        .collect())
}

/// Per-observation metadata used when assembling a table from grids.
#[derive(Debug, Clone)]
pub struct ObservationMeta {
    pub obs_id: String,
    pub event_id: String,
    pub label: u8,
    pub env: Vec<f64>,
}

/// Reads `obs_id,event_id,label,env_<name>...`; returns env names and rows.
pub fn load_observations_csv<R: Read>(source: R) -> Result<(Vec<String>, Vec<ObservationMeta>)> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "obs_id" || &header[1] != "event_id" || &header[2] != "label" {
        return Err(parse_err(1, "header must start with obs_id,event_id,label"));
    }
    let mut env_names = Vec::new();
    for c in header.iter().skip(3) {
        let e = c
            .strip_prefix(ENV_PREFIX)
            .ok_or_else(|| parse_err(1, format!("column {c} is not an env_* column")))?;
        env_names.push(e.to_string());
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let label = match record[2].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(parse_err(line, "non-binary label")),
        };
        let env = record
            .iter()
            .skip(3)
            .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(line, format!("invalid number {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ObservationMeta {
            obs_id: record[0].to_string(),
            event_id: record[1].to_string(),
            label,
            env,
        });
    }
    Ok((env_names, rows))
}

/// Builds a feature table by aggregating every grid of every observation.
///
/// Variables appear in order of first appearance in `grids`. Continuous
/// variables yield the statistics of `spec`; categorical ones yield the
/// distribution over their sorted vocabulary. When `coords` is given and the
/// observations carry no `lat`/`lon` environment columns, those are appended
/// from the event coordinates.
pub fn assemble_table(
    grids: &[GridObservation],
    env_names: &[String],
    observations: &[ObservationMeta],
    coords: Option<&BTreeMap<String, (f64, f64)>>,
    spec: &AggregationSpec,
) -> Result<DatasetTable> {
    let mut variables: Vec<String> = Vec::new();
    let mut vocab: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut by_key: HashMap<(&str, &str), &GridObservation> = HashMap::new();
    for g in grids {
        if !variables.contains(&g.variable) {
            variables.push(g.variable.clone());
        }
        if let GridValues::Categorical(vals) = &g.values {
            vocab.entry(g.variable.clone()).or_default().extend(vals.iter().cloned());
        }
        if by_key.insert((&g.obs_id, &g.variable), g).is_some() {
            return Err(Error::invalid(format!("duplicate grid for {} / {}", g.obs_id, g.variable)));
        }
    }
    let vocab: BTreeMap<String, Vec<String>> =
        vocab.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();

    let mut feature_names = Vec::new();
    for v in &variables {
        match vocab.get(v) {
            Some(cats) => feature_names
                .extend(cats.iter().map(|c| format!("{v}{GROUP_SEPARATOR}{CATEGORY_PREFIX}{c}"))),
            None => feature_names.extend(spec.column_names(v)),
        }
    }

    let rows: Vec<Vec<f64>> = observations
        .par_iter()
        .map(|obs| {
            let mut row = Vec::with_capacity(feature_names.len());
            for v in &variables {
                let grid = by_key
                    .get(&(obs.obs_id.as_str(), v.as_str()))
                    .ok_or_else(|| Error::invalid(format!("missing grid for {} / {v}", obs.obs_id)))?;
                match &grid.values {
                    GridValues::Continuous(_) => row.extend(aggregate_grid(grid, spec)?),
                    GridValues::Categorical(vals) => row.extend(aggregate_categorical(vals, &vocab[v])?),
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut env_names = env_names.to_vec();
    let mut env_rows: Vec<Vec<f64>> = observations.iter().map(|o| o.env.clone()).collect();
    let has_coords = env_names.iter().any(|e| e == "lat") && env_names.iter().any(|e| e == "lon");
    if let (Some(coords), false) = (coords, has_coords) {
        env_names.extend(["lat".to_string(), "lon".to_string()]);
        for (row, obs) in env_rows.iter_mut().zip(observations) {
            let (lat, lon) = coords
                .get(&obs.event_id)
                .ok_or_else(|| Error::MissingCoordinates(obs.event_id.clone()))?;
            row.extend([*lat, *lon]);
        }
    }

    let n = observations.len();
    let q = env_names.len();
    let d = feature_names.len();
    if env_rows.iter().any(|r| r.len() != q) {
        return Err(Error::invalid("observation rows have inconsistent environment widths"));
    }
    DatasetTable::new(TableParts {
        obs_ids: observations.iter().map(|o| o.obs_id.clone()).collect(),
        event_ids: observations.iter().map(|o| o.event_id.clone()).collect(),
        target: observations.iter().map(|o| o.label).collect(),
        env_names,
        environment: Array2::from_shape_vec((n, q), env_rows.concat()).expect("shape"),
        feature_names,
        features: Array2::from_shape_vec((n, d), rows.concat()).expect("shape"),
        event_coords: coords.cloned().unwrap_or_default(),
    })
}
