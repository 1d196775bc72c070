//! Datasets: synthetic generation with ground truth, CSV ingestion,
//! train/test splits and feature standardization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Bernoulli;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mask::{check_binary, CausalPopulation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    feature_names: Vec<String>,
    treatment: Vec<u8>,
    y_obs: Vec<u8>,
    potential: Option<(Vec<u8>, Vec<u8>)>,
    populations: Option<Vec<CausalPopulation>>,
}

impl Dataset {
    /// Builds a dataset and checks its row-wise invariants. Overlap (both
    /// treatment groups present) is checked separately by
    /// [`Dataset::validate_overlap`], since subsets may legitimately lack it.
    pub fn new(
        features: Array2<f64>,
        treatment: Vec<u8>,
        y_obs: Vec<u8>,
        potential: Option<(Vec<u8>, Vec<u8>)>,
    ) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(features, names, treatment, y_obs, potential)
    }

    pub fn with_names(
        features: Array2<f64>,
        feature_names: Vec<String>,
        treatment: Vec<u8>,
        y_obs: Vec<u8>,
        potential: Option<(Vec<u8>, Vec<u8>)>,
    ) -> Result<Self> {
        let n = features.nrows();
        if treatment.len() != n || y_obs.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} treatments and {} outcomes",
                treatment.len(),
                y_obs.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Data("feature name count does not match columns".into()));
        }
        if let Some((i, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature at row {}", i.0)));
        }
        for i in 0..n {
            check_binary("treatment", treatment[i]).map_err(|e| row_err(i, e))?;
            check_binary("outcome", y_obs[i]).map_err(|e| row_err(i, e))?;
        }
        let populations = match &potential {
            None => None,
            Some((y0, y1)) => {
                if y0.len() != n || y1.len() != n {
                    return Err(Error::Data("potential outcome length mismatch".into()));
                }
                let mut pops = Vec::with_capacity(n);
                for i in 0..n {
                    let pop = CausalPopulation::from_potential_outcomes(y0[i], y1[i])
                        .map_err(|e| row_err(i, e))?;
                    if pop.outcome(treatment[i]) != y_obs[i] {
                        return Err(Error::Data(format!(
                            "row {i}: observed outcome {} differs from y{} = {}",
                            y_obs[i],
                            treatment[i],
                            pop.outcome(treatment[i])
                        )));
                    }
                    pops.push(pop);
                }
                Some(pops)
            }
        };
        Ok(Dataset {
            features,
            feature_names,
            treatment,
            y_obs,
            potential,
            populations,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn y_obs(&self) -> &[u8] {
        &self.y_obs
    }

    pub fn y0(&self) -> Option<&[u8]> {
        self.potential.as_ref().map(|(y0, _)| y0.as_slice())
    }

    pub fn y1(&self) -> Option<&[u8]> {
        self.potential.as_ref().map(|(_, y1)| y1.as_slice())
    }

    pub fn populations(&self) -> Option<&[CausalPopulation]> {
        self.populations.as_deref()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.potential.is_some()
    }

    /// `y1 - y0` per row, when potential outcomes are known.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        self.potential.as_ref().map(|(y0, y1)| {
            y0.iter()
                .zip(y1)
                .map(|(&a, &b)| b as f64 - a as f64)
                .collect()
        })
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        let treated = self.treatment.iter().filter(|&&t| t == 1).count();
        (self.len() - treated, treated)
    }

    pub fn has_overlap(&self) -> bool {
        let (control, treated) = self.group_sizes();
        control > 0 && treated > 0
    }

    pub fn validate_overlap(&self) -> Result<()> {
        if self.has_overlap() {
            Ok(())
        } else {
            let (control, treated) = self.group_sizes();
            Err(Error::Data(format!(
                "overlap violated: {control} control and {treated} treated rows"
            )))
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(Axis(0), indices);
        let pick = |v: &[u8]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            features,
            feature_names: self.feature_names.clone(),
            treatment: pick(&self.treatment),
            y_obs: pick(&self.y_obs),
            potential: self.potential.as_ref().map(|(a, b)| (pick(a), pick(b))),
            populations: self
                .populations
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Same rows with replaced features (e.g. after standardization).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.dim() != self.features.dim() {
            return Err(Error::config("replacement features have a different shape"));
        }
        let mut out = self.clone();
        out.features = features;
        Ok(out)
    }

    /// Schema describing the columns written by [`Dataset::save_csv`].
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            features: self.feature_names.clone(),
            treatment: "t".into(),
            outcome: "y".into(),
            y0: self.potential.as_ref().map(|_| "y0".into()),
            y1: self.potential.as_ref().map(|_| "y1".into()),
            categorical: BTreeMap::new(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["t", "y"]);
        if self.potential.is_some() {
            header.extend(["y0", "y1"]);
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let mut cells: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            cells.push(self.treatment[i].to_string());
            cells.push(self.y_obs[i].to_string());
            if let Some((y0, y1)) = &self.potential {
                cells.push(y0[i].to_string());
                cells.push(y1[i].to_string());
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn row_err(row: usize, e: Error) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!("row {row}: {msg}")),
        other => other,
    }
}

/// Column roles of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns, in order. Categorical ones are one-hot expanded.
    pub features: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1: Option<String>,
    /// Categorical feature column -> its levels (one indicator per level, in this order).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categorical: BTreeMap<String, Vec<String>>,
}

impl CsvSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

/// Parses CSV text per `schema`. Line numbers in errors are 1-based and
/// count the header as line 1.
pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    if schema.y0.is_some() != schema.y1.is_some() {
        return Err(Error::config("schema must name both y0 and y1 or neither"));
    }
    for col in schema.categorical.keys() {
        if !schema.features.contains(col) {
            return Err(Error::config(format!(
                "categorical column {col:?} is not listed among the features"
            )));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>>>()?;
    let t_col = column(&schema.treatment)?;
    let y_col = column(&schema.outcome)?;
    let po_cols = match (&schema.y0, &schema.y1) {
        (Some(a), Some(b)) => Some((column(a)?, column(b)?)),
        _ => None,
    };

    let mut feature_names = Vec::new();
    for f in &schema.features {
        match schema.categorical.get(f) {
            Some(levels) => feature_names.extend(levels.iter().map(|l| format!("{f}={l}"))),
            None => feature_names.push(f.clone()),
        }
    }
    let width = feature_names.len();

    let mut values = Vec::new();
    let mut treatment = Vec::new();
    let mut y_obs = Vec::new();
    let (mut y0, mut y1) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        for (name, &idx) in schema.features.iter().zip(&feature_cols) {
            let raw = cell(idx);
            match schema.categorical.get(name) {
                Some(levels) => {
                    let hit = levels.iter().position(|l| l == raw).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("unknown level {raw:?} for categorical column {name:?}"),
                    })?;
                    values.extend((0..levels.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                }
                None => {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("column {name:?}: {raw:?} is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line,
                            message: format!("column {name:?}: non-finite value"),
                        });
                    }
                    values.push(v);
                }
            }
        }
        treatment.push(parse_binary(cell(t_col), &schema.treatment, line)?);
        y_obs.push(parse_binary(cell(y_col), &schema.outcome, line)?);
        if let Some((a, b)) = po_cols {
            let v0 = parse_binary(cell(a), "y0", line)?;
            let v1 = parse_binary(cell(b), "y1", line)?;
            let t = *treatment.last().expect("pushed");
            let observed = *y_obs.last().expect("pushed");
            if (if t == 0 { v0 } else { v1 }) != observed {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "observed outcome {observed} contradicts potential outcomes ({v0}, {v1}) under t={t}"
                    ),
                });
            }
            y0.push(v0);
            y1.push(v1);
        }
    }
    let n = treatment.len();
    if n == 0 {
        return Err(Error::Data("CSV contains no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, width), values).expect("row widths are uniform");
    let potential = po_cols.map(|_| (y0, y1));
    let ds = Dataset::with_names(features, feature_names, treatment, y_obs, potential)?;
    ds.validate_overlap()?;
    Ok(ds)
}

fn parse_binary(raw: &str, name: &str, line: u64) -> Result<u8> {
    match raw.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(Error::Parse {
            line,
            message: format!("column {name:?} must be 0 or 1, got {raw:?}"),
        }),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub d: usize,
    /// Probabilities of R, D, S, A.
    pub population_weights: [f64; 4],
    pub cluster_separation: f64,
    pub treatment_rate: f64,
    pub seed: u64,
    /// Give each population a second cluster at the mirrored mean, so that
    /// population membership is not linearly separable.
    #[serde(default)]
    pub mirrored_clusters: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 2000,
            d: 10,
            population_weights: [0.25; 4],
            cluster_separation: 3.0,
            treatment_rate: 0.5,
            seed: 0,
            mirrored_clusters: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::config("generator n and d must be positive"));
        }
        if self.population_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::config("population_weights must be nonnegative"));
        }
        let total: f64 = self.population_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "population_weights must sum to 1, got {total}"
            )));
        }
        if !(self.treatment_rate > 0.0 && self.treatment_rate < 1.0) {
            return Err(Error::config("treatment_rate must lie strictly inside (0, 1)"));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::config("cluster_separation must be nonnegative"));
        }
        Ok(())
    }

    /// Cluster centres, one per population (R, D, S, A). Pairwise distances
    /// are at least `cluster_separation * sqrt(d)`, including the distance
    /// between a centre and its mirror image.
    pub fn cluster_means(&self) -> [Vec<f64>; 4] {
        let d = self.d;
        let gap = self.cluster_separation * (d as f64).sqrt();
        std::array::from_fn(|k| {
            if d >= 4 {
                // orthogonal unit directions supported on disjoint coordinate sets
                let members = (0..d).filter(|j| j % 4 == k).count() as f64;
                let scale = gap / 2f64.sqrt() / members.sqrt();
                (0..d)
                    .map(|j| if j % 4 == k { scale } else { 0.0 })
                    .collect()
            } else {
                // collinear fallback: mirrored centres sit at negative offsets
                let mut m = vec![0.0; d];
                m[0] = gap * (k as f64 + 1.0);
                m
            }
        })
    }
}

/// Samples a dataset with known potential outcomes.
///
/// Each row draws a population from `population_weights`, features from a
/// unit spherical Gaussian around that population's centre, and treatment
/// from an independent coin with `treatment_rate`.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    if config.population_weights.iter().any(|&w| w >= 1.0) {
        warn!("a single population carries all the weight; per-group baselines may be untrainable");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pick = WeightedIndex::new(config.population_weights).map_err(|e| Error::config(e.to_string()))?;
    let coin = Bernoulli::new(config.treatment_rate).map_err(|e| Error::config(e.to_string()))?;
    let means = config.cluster_means();
    let (n, d) = (config.n, config.d);

    let mut features = Array2::zeros((n, d));
    let mut treatment = Vec::with_capacity(n);
    let mut y_obs = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let pop = CausalPopulation::ALL[pick.sample(&mut rng)];
        let sign = if config.mirrored_clusters && rng.random_bool(0.5) {
            -1.0
        } else {
            1.0
        };
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[(i, j)] = sign * means[pop.index()][j] + noise;
        }
        let t = u8::from(coin.sample(&mut rng));
        let (a, b) = pop.potential_outcomes();
        treatment.push(t);
        y_obs.push(pop.outcome(t));
        y0.push(a);
        y1.push(b);
    }
    let ds = Dataset::new(features, treatment, y_obs, Some((y0, y1)))?;
    if !ds.has_overlap() {
        warn!("generated dataset has an empty treatment group");
    }
    Ok(ds)
}

/// Seeded shuffle, then the first `round(n * test_fraction)` rows go to test.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction must lie strictly inside (0, 1)"));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Data("cannot split fewer than two rows".into()));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = dataset.subset(&train_idx);
    let test = dataset.subset(&test_idx);
    if !train.has_overlap() || !test.has_overlap() {
        warn!("split leaves a treatment group empty in the train or test part");
    }
    Ok((train, test))
}

/// Per-feature affine map `(x - mean) * inv_std`; constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Data("cannot standardize an empty training set".into()));
        }
        let n = features.nrows() as f64;
        let mean = features.sum_axis(Axis(0)) / n;
        let var = features
            .rows()
            .into_iter()
            .fold(Array1::zeros(features.ncols()), |acc, row| {
                acc + (&row - &mean).mapv(|v| v * v)
            })
            / n;
        let inv_std = var.mapv(|v: f64| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 });
        Ok(Standardizer { mean, inv_std })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dim),
            inv_std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::config(format!(
                "standardizer expects {} features, got {}",
                self.dim(),
                features.ncols()
            )));
        }
        Ok((features - &self.mean) * &self.inv_std)
    }

    pub fn apply_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        dataset.with_features(self.apply(dataset.features())?)
    }
}

/// Standardizes both parts with statistics of `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train.features())?;
    Ok((s.apply_dataset(train)?, s.apply_dataset(test)?, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_config(weights: [f64; 4], n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n,
            d: 5,
            population_weights: weights,
            cluster_separation: 2.0,
            treatment_rate: 0.5,
            seed: 17,
            mirrored_clusters: false,
        }
    }

    #[test]
    fn all_responders_have_outcome_equal_to_treatment() {
        let ds = generate_synthetic(&small_config([1.0, 0.0, 0.0, 0.0], 200)).unwrap();
        assert!(ds.populations().unwrap().iter().all(|&p| p == CausalPopulation::Responder));
        assert_eq!(ds.y_obs(), ds.treatment());
    }

    #[test]
    fn all_survivors_always_succeed() {
        let ds = generate_synthetic(&small_config([0.0, 0.0, 1.0, 0.0], 200)).unwrap();
        assert!(ds.y_obs().iter().all(|&y| y == 1));
    }

    #[test]
    fn population_frequencies_pass_goodness_of_fit() {
        let weights = [0.1, 0.2, 0.3, 0.4];
        let n = 10_000;
        let ds = generate_synthetic(&small_config(weights, n)).unwrap();
        let mut counts = [0usize; 4];
        for p in ds.populations().unwrap() {
            counts[p.index()] += 1;
        }
        let chi2: f64 = (0..4)
            .map(|k| {
                let expected = weights[k] * n as f64;
                (counts[k] as f64 - expected).powi(2) / expected
            })
            .sum();
        // chi-square, 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.266, "counts {counts:?}, chi2 {chi2}");
    }

    #[test]
    fn generated_rows_are_consistent() {
        let mut cfg = small_config([0.25; 4], 500);
        cfg.mirrored_clusters = true;
        let ds = generate_synthetic(&cfg).unwrap();
        let (y0, y1) = (ds.y0().unwrap(), ds.y1().unwrap());
        for i in 0..ds.len() {
            let t = ds.treatment()[i];
            assert_eq!(ds.y_obs()[i], if t == 0 { y0[i] } else { y1[i] });
            assert_eq!(ds.populations().unwrap()[i].potential_outcomes(), (y0[i], y1[i]));
        }
    }

    #[test]
    fn cluster_means_are_separated() {
        for d in [2, 4, 10, 13] {
            let cfg = GeneratorConfig {
                d,
                cluster_separation: 1.5,
                ..GeneratorConfig::default()
            };
            let means = cfg.cluster_means();
            let gap = 1.5 * (d as f64).sqrt();
            let dist = |a: &[f64], b: &[f64], sb: f64| {
                a.iter().zip(b).map(|(x, y)| (x - sb * y).powi(2)).sum::<f64>().sqrt()
            };
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        assert!(dist(&means[a], &means[b], 1.0) >= gap - 1e-9);
                        assert!(dist(&means[a], &means[b], -1.0) >= gap - 1e-9);
                    }
                }
                assert!(dist(&means[a], &means[a], -1.0) >= gap - 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = small_config([0.25; 4], 100);
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn invalid_generator_configs() {
        assert!(generate_synthetic(&small_config([0.5, 0.5, 0.5, 0.0], 10)).is_err());
        let mut cfg = small_config([0.25; 4], 10);
        cfg.treatment_rate = 1.0;
        assert!(generate_synthetic(&cfg).is_err());
    }

    const SCHEMA_JSON: &str = r#"{"features": ["age", "color"], "treatment": "t", "outcome": "y",
        "categorical": {"color": ["red", "blue"]}}"#;

    #[test]
    fn three_row_fixture_parses_exactly() {
        let schema: CsvSchema = serde_json::from_str(SCHEMA_JSON).unwrap();
        let text = "age,color,t,y\n1.5,red,1,0\n-2,blue,0,1\n0,red,0,0\n";
        let ds = parse_csv(text, &schema).unwrap();
        assert_eq!(
            ds.features(),
            &array![[1.5, 1.0, 0.0], [-2.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        assert_eq!(ds.treatment(), &[1, 0, 0]);
        assert_eq!(ds.y_obs(), &[0, 1, 0]);
        assert_eq!(ds.feature_names(), &["age", "color=red", "color=blue"]);
        assert!(!ds.has_ground_truth());
    }

    #[test]
    fn bad_treatment_names_its_line() {
        let schema: CsvSchema = serde_json::from_str(SCHEMA_JSON).unwrap();
        let text = "age,color,t,y\n1,red,1,0\n2,red,0,0\n3,red,1,1\n4,red,2,0\n";
        match parse_csv(text, &schema).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("\"t\""), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_potential_outcomes_rejected() {
        let schema = CsvSchema {
            features: vec!["a".into()],
            treatment: "t".into(),
            outcome: "y".into(),
            y0: Some("y0".into()),
            y1: Some("y1".into()),
            categorical: BTreeMap::new(),
        };
        let text = "a,t,y,y0,y1\n1,1,1,0,1\n2,0,1,0,1\n";
        let err = parse_csv(text, &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn missing_column_and_ragged_rows() {
        let schema: CsvSchema = serde_json::from_str(SCHEMA_JSON).unwrap();
        let err = parse_csv("age,t,y\n1,1,0\n", &schema).unwrap_err();
        assert!(err.to_string().contains("color"));
        let err = parse_csv("age,color,t,y\n1,red,1,0\n2,red,0\n", &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip_preserves_contents() {
        let ds = generate_synthetic(&small_config([0.25; 4], 50)).unwrap();
        let back = parse_csv(&ds.to_csv_string(), &ds.schema()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_sizes_partition_and_determinism() {
        let ds = generate_synthetic(&small_config([0.25; 4], 100)).unwrap();
        let (train, test) = split(&ds, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let (train2, test2) = split(&ds, 0.2, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // every original row appears exactly once (rows are distinct almost surely)
        let mut rows: Vec<Vec<u64>> = train
            .features()
            .rows()
            .into_iter()
            .chain(test.features().rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = ds
            .features()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let train = Dataset::new(
            array![[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [5.0, 5.0, 9.0]],
            vec![0, 1, 0],
            vec![0, 0, 1],
            None,
        )
        .unwrap();
        let test = Dataset::new(array![[7.0, 1.0, 5.0]], vec![1], vec![1], None).unwrap();
        let (tr, te, s) = standardize(&train, &test).unwrap();
        // column 0: mean 3, var 8/3; column 1 constant; column 2: mean 5, var 26/3
        let sd0 = (8.0f64 / 3.0).sqrt();
        let sd2 = (26.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(tr.features()[(0, 0)], -2.0 / sd0, epsilon = 1e-12);
        assert_abs_diff_eq!(te.features()[(0, 0)], 4.0 / sd0, epsilon = 1e-12);
        assert_abs_diff_eq!(te.features()[(0, 2)], 0.0 / sd2, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.features()[(2, 2)], 4.0 / sd2, epsilon = 1e-12);
        assert!(tr.features().column(1).iter().all(|&v| v == 0.0));
        assert_eq!(te.features()[(0, 1)], 0.0);
        assert_eq!(s.inv_std[1], 0.0);
        for col in [0, 2] {
            let c = tr.features().column(col);
            assert_abs_diff_eq!(c.mean().unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn standard_train_is_near_identity() {
        let x = array![[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]];
        let s = Standardizer::fit(&x).unwrap();
        let y = s.apply(&x).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn treatment_is_uncorrelated_with_features() {
        let seeds = [1u64, 2, 3];
        let mut mean_corr = [0.0; 5];
        for &seed in &seeds {
            let mut cfg = small_config([0.25; 4], 10_000);
            cfg.seed = seed;
            let ds = generate_synthetic(&cfg).unwrap();
            let t: Vec<f64> = ds.treatment().iter().map(|&v| v as f64).collect();
            for (j, c) in mean_corr.iter_mut().enumerate() {
                let col = ds.features().column(j).to_vec();
                *c += pearson(&t, &col) / seeds.len() as f64;
            }
        }
        let worst = mean_corr.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        assert!(worst < 0.05, "max |corr| = {worst}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
