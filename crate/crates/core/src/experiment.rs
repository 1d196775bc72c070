//! End-to-end experiment drivers behind the `cae` command-line tool:
//! `generate`, `train`, `evaluate` and `benchmark`.
//!
//! Every command is a pure function of its [`ExperimentConfig`]; all
//! artifacts are JSON or CSV and can be read back by this crate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_t_learner, BaselineConfig, LearnerKind, TLearner};
use crate::cae::{
    argmax_population, cate_from_distribution, counterfactual_from_distribution, init_model, CaeConfig,
    CaeModel, TrainConfig, TrainReport,
};
use crate::data::{generate_synthetic, load_csv, split, CsvSchema, Dataset, GeneratorConfig, Standardizer};
use crate::exec::{self, ExecutionMode};
use crate::mask::CausalPopulation;
use crate::metrics::{auuc, pehe, population_accuracy, wilcoxon_signed_rank, UpliftCurve, WilcoxonResult};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "cae-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generator(GeneratorConfig),
    Csv { path: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Cae {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        nodes_per_population: usize,
        #[serde(default)]
        info_nodes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        encoder_hidden_sizes: Option<Vec<usize>>,
        #[serde(default)]
        decoder_batch_norm: bool,
    },
    TLr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    TMlpc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl ModelSpec {
    pub fn cae(nodes_per_population: usize, info_nodes: usize) -> Self {
        ModelSpec::Cae {
            name: None,
            nodes_per_population,
            info_nodes,
            encoder_hidden_sizes: None,
            decoder_batch_norm: false,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::Cae { name: Some(n), .. }
            | ModelSpec::TLr { name: Some(n) }
            | ModelSpec::TMlpc { name: Some(n) } => n.clone(),
            ModelSpec::Cae {
                nodes_per_population: r,
                info_nodes: q,
                ..
            } => match (r, q) {
                (r, 0) => format!("CAE_{r}"),
                (1, q) => format!("CAE_info{q}"),
                (r, q) => format!("CAE_{r}_info{q}"),
            },
            ModelSpec::TLr { .. } => "T-LR".into(),
            ModelSpec::TMlpc { .. } => "T-MLPC".into(),
        }
    }

    fn cae_config(&self, train: &TrainConfig) -> Option<CaeConfig> {
        match self {
            ModelSpec::Cae {
                nodes_per_population,
                info_nodes,
                encoder_hidden_sizes,
                decoder_batch_norm,
                ..
            } => Some(CaeConfig {
                nodes_per_population: *nodes_per_population,
                info_nodes: *info_nodes,
                encoder_hidden_sizes: encoder_hidden_sizes.clone(),
                decoder_batch_norm: *decoder_batch_norm,
                train: train.clone(),
            }),
            _ => None,
        }
    }
}

fn default_trials() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub cae_train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub execution: ExecutionMode,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, models: Vec<ModelSpec>) -> Self {
        ExperimentConfig {
            data,
            models,
            cae_train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            trials: default_trials(),
            test_fraction: default_test_fraction(),
            seed: 0,
            out_dir: default_out_dir(),
            execution: ExecutionMode::default(),
        }
    }

    /// Reads a JSON config. Relative CSV paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path: p, schema } = &mut config.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if schema.is_relative() {
                *schema = base.join(&*schema);
            }
        }
        Ok(config)
    }

    /// Replaces the experiment seed, and the generator seed when data is synthetic.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let DataSource::Generator(g) = &mut self.data {
            g.seed = seed;
        }
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie strictly inside (0, 1)"));
        }
        self.cae_train.validate()?;
        self.baseline.validate()?;
        if let DataSource::Generator(g) = &self.data {
            g.validate()?;
        }
        let mut names: Vec<String> = self.models.iter().map(ModelSpec::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("model name {:?} is used twice", w[0])));
        }
        for m in &self.models {
            if let ModelSpec::Cae {
                nodes_per_population,
                ..
            } = m
            {
                if *nodes_per_population == 0 {
                    return Err(Error::config(format!(
                        "model {}: nodes_per_population must be at least 1",
                        m.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks model settings against the feature dimension.
    pub fn validate_for_dim(&self, d: usize) -> Result<()> {
        self.validate()?;
        for m in &self.models {
            if let Some(cfg) = m.cae_config(&self.cae_train) {
                cfg.validate(d)
                    .map_err(|e| Error::config(format!("model {}: {e}", m.name())))?;
            }
        }
        Ok(())
    }

    fn require_models(&self, at_least: usize) -> Result<()> {
        if self.models.len() < at_least {
            return Err(Error::config(format!(
                "config lists {} models, need at least {at_least}",
                self.models.len()
            )));
        }
        Ok(())
    }
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Generator(g) => generate_synthetic(g),
        DataSource::Csv { path, schema } => load_csv(path, &CsvSchema::load(schema)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainedModel {
    Cae(CaeModel),
    TLearner(TLearner),
}

/// On-disk model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    /// Applied to raw features before the model sees them.
    pub standardizer: Standardizer,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(name: String, standardizer: Standardizer, model: TrainedModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            name,
            standardizer,
            model,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                message: format!(
                    "unsupported model file {:?} version {}",
                    file.format, file.version
                ),
            });
        }
        let valid = match &file.model {
            TrainedModel::Cae(m) => m.validate(),
            TrainedModel::TLearner(_) => Ok(()),
        };
        valid.map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn feature_dim(&self) -> usize {
        self.standardizer.dim()
    }
}

/// Per-row outputs of a trained model on already standardized data.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Continuous effect score used for ranking.
    pub effect_score: Vec<f64>,
    /// Outcome under the treatment not received.
    pub counterfactual: Vec<u8>,
    pub populations: Vec<CausalPopulation>,
}

impl Predictions {
    /// `y1_hat - y0_hat` from the observed outcome and the predicted counterfactual.
    pub fn binary_ite(&self, dataset: &Dataset) -> Vec<f64> {
        (0..dataset.len())
            .map(|i| {
                let (y, cf) = (dataset.y_obs()[i] as f64, self.counterfactual[i] as f64);
                if dataset.treatment()[i] == 1 {
                    y - cf
                } else {
                    cf - y
                }
            })
            .collect()
    }
}

impl TrainedModel {
    pub fn predict(&self, dataset: &Dataset, mode: ExecutionMode) -> Result<Predictions> {
        let n = dataset.len();
        match self {
            TrainedModel::Cae(model) => {
                let dists = model.population_distributions_with(dataset.features(), mode)?;
                let mut out = Predictions {
                    effect_score: Vec::with_capacity(n),
                    counterfactual: Vec::with_capacity(n),
                    populations: Vec::with_capacity(n),
                };
                for (i, row) in dists.rows().into_iter().enumerate() {
                    let dist = [row[0], row[1], row[2], row[3]];
                    out.effect_score.push(cate_from_distribution(&dist));
                    out.populations.push(argmax_population(&dist));
                    out.counterfactual.push(counterfactual_from_distribution(
                        &dist,
                        dataset.treatment()[i],
                        dataset.y_obs()[i],
                    )?);
                }
                Ok(out)
            }
            TrainedModel::TLearner(learner) => {
                let (p0, p1) = learner.outcome_probabilities(dataset.features())?;
                let mut out = Predictions {
                    effect_score: (&p1 - &p0).to_vec(),
                    counterfactual: Vec::with_capacity(n),
                    populations: Vec::with_capacity(n),
                };
                for i in 0..n {
                    let t = dataset.treatment()[i];
                    let y = dataset.y_obs()[i];
                    let cf = u8::from(if t == 0 { p1[i] } else { p0[i] } >= 0.5);
                    let (y0, y1) = if t == 0 { (y, cf) } else { (cf, y) };
                    out.counterfactual.push(cf);
                    out.populations.push(CausalPopulation::from_potential_outcomes(y0, y1)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n: usize,
    pub auuc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pehe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_accuracy: Option<f64>,
}

/// Scores `predictions` against `dataset`. PEHE and population accuracy are
/// only reported when the dataset carries potential outcomes.
pub fn evaluate_predictions(name: &str, predictions: &Predictions, dataset: &Dataset) -> Result<(EvalReport, UpliftCurve)> {
    let curve = auuc(&predictions.effect_score, dataset.y_obs(), dataset.treatment())?;
    let pehe_value = match dataset.true_ite() {
        Some(truth) => Some(pehe(&truth, &predictions.binary_ite(dataset))?),
        None => None,
    };
    let accuracy = match dataset.populations() {
        Some(truth) => Some(population_accuracy(&predictions.populations, truth)?),
        None => None,
    };
    Ok((
        EvalReport {
            model: name.to_owned(),
            n: dataset.len(),
            auuc: curve.auuc,
            pehe: pehe_value,
            population_accuracy: accuracy,
        },
        curve,
    ))
}

/// Evaluates a model file on raw (unstandardized) data.
pub fn evaluate_model(file: &ModelFile, raw: &Dataset, mode: ExecutionMode) -> Result<(EvalReport, UpliftCurve)> {
    if raw.dim() != file.feature_dim() {
        return Err(Error::config(format!(
            "model {} expects {} features but the data has {}",
            file.name,
            file.feature_dim(),
            raw.dim()
        )));
    }
    let data = file.standardizer.apply_dataset(raw)?;
    let predictions = file.model.predict(&data, mode)?;
    evaluate_predictions(&file.name, &predictions, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub seed: u64,
    pub n_train: usize,
    /// Empty for baselines.
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

/// Splits with `seed`, standardizes on the train part and fits `spec`.
/// Returns the model file, its training summary and the raw test part.
pub fn fit_model(
    spec: &ModelSpec,
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<(ModelFile, TrainSummary, Dataset)> {
    let (train_raw, test_raw) = split(dataset, config.test_fraction, seed)?;
    let standardizer = Standardizer::fit(train_raw.features())?;
    let train = standardizer.apply_dataset(&train_raw)?;
    let name = spec.name();
    let (model, report): (TrainedModel, Option<TrainReport>) = match spec {
        ModelSpec::Cae { .. } => {
            let mut cfg = spec.cae_config(&config.cae_train).expect("cae spec");
            cfg.train.seed = seed;
            let mut model = init_model(&cfg, dataset.dim(), seed)?;
            let report = model.train(&train)?;
            (TrainedModel::Cae(model), Some(report))
        }
        ModelSpec::TLr { .. } | ModelSpec::TMlpc { .. } => {
            let kind = if matches!(spec, ModelSpec::TLr { .. }) {
                LearnerKind::LogisticRegression
            } else {
                LearnerKind::MlpClassifier
            };
            let cfg = config.baseline.clone().with_seed(seed);
            (TrainedModel::TLearner(train_t_learner(kind, &train, &cfg)?), None)
        }
    };
    let summary = TrainSummary {
        model: name.clone(),
        seed,
        n_train: train.len(),
        epoch_losses: report.as_ref().map(|r| r.epoch_losses.clone()).unwrap_or_default(),
        final_loss: report.map(|r| r.final_loss),
    };
    Ok((ModelFile::new(name, standardizer, model), summary, test_raw))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn model_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{}.model.json", file_stem(name)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub rows: usize,
}

/// Writes `data.csv` and `schema.json` for the configured generator.
pub fn cmd_generate(config: &ExperimentConfig, out_dir: &Path) -> Result<GenerateOutput> {
    let DataSource::Generator(generator) = &config.data else {
        return Err(Error::config("generate needs a generator data source"));
    };
    let dataset = generate_synthetic(generator)?;
    create_dir(out_dir)?;
    let data = out_dir.join("data.csv");
    let schema = out_dir.join("schema.json");
    dataset.save_csv(&data)?;
    dataset.schema().save(&schema)?;
    info!("wrote {} rows to {}", dataset.len(), data.display());
    Ok(GenerateOutput {
        data,
        schema,
        rows: dataset.len(),
    })
}

/// Trains every configured model on the train split and writes
/// `<name>.model.json` plus `<name>.train.json`.
pub fn cmd_train(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<TrainSummary>> {
    config.validate()?;
    config.require_models(1)?;
    let dataset = load_dataset(&config.data)?;
    config.validate_for_dim(dataset.dim())?;
    let fitted = exec::try_map_indexed(config.execution, config.models.len(), |i| {
        fit_model(&config.models[i], config, &dataset, config.seed)
    })?;
    create_dir(out_dir)?;
    let mut summaries = Vec::with_capacity(fitted.len());
    for (file, summary, _) in fitted {
        file.save(&model_path(out_dir, &file.name))?;
        write_json(&out_dir.join(format!("{}.train.json", file_stem(&file.name))), &summary)?;
        info!("trained {}", file.name);
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Evaluates a saved model on the test split and writes
/// `<name>.eval.json` plus `<name>.uplift.csv`.
pub fn cmd_evaluate(config: &ExperimentConfig, model_file: &Path, out_dir: &Path) -> Result<EvalReport> {
    config.validate()?;
    let file = ModelFile::load(model_file)?;
    let dataset = load_dataset(&config.data)?;
    if dataset.dim() != file.feature_dim() {
        return Err(Error::config(format!(
            "model {} expects {} features but the data has {}",
            file.name,
            file.feature_dim(),
            dataset.dim()
        )));
    }
    let (_, test) = split(&dataset, config.test_fraction, config.seed)?;
    let (report, curve) = evaluate_model(&file, &test, config.execution)?;
    create_dir(out_dir)?;
    let stem = file_stem(&file.name);
    write_json(&out_dir.join(format!("{stem}.eval.json")), &report)?;
    write_text(&out_dir.join(format!("{stem}.uplift.csv")), &curve.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricSummary { mean, std, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub auuc: MetricSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pehe: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_accuracy: Option<MetricSummary>,
    /// Paired test of this model's AUUC against the best AUUC model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auuc_vs_best: Option<WilcoxonResult>,
    /// Paired test of this model's PEHE against the best PEHE model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pehe_vs_best: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub trials: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub best_auuc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_pehe: Option<String>,
    pub models: Vec<ModelSummary>,
}

impl BenchmarkReport {
    /// Mean +/- standard deviation per metric, one row per model.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>22} {:>22} {:>20} {:>12}",
            "model", "PEHE", "AUUC", "pop. accuracy", "p(AUUC)"
        );
        let fmt = |m: &Option<MetricSummary>, prec: usize| match m {
            Some(s) => format!("{:.prec$} +/- {:.prec$}", s.mean, s.std),
            None => "-".into(),
        };
        for m in &self.models {
            let star = if m.model == self.best_auuc { " *" } else { "" };
            let p = m
                .auuc_vs_best
                .as_ref()
                .map_or("-".to_string(), |w| format!("{:.4}", w.p_value));
            let _ = writeln!(
                out,
                "{:<16} {:>22} {:>22} {:>20} {:>12}",
                format!("{}{}", m.model, star),
                fmt(&m.pehe, 3),
                fmt(&Some(m.auuc.clone()), 2),
                fmt(&m.population_accuracy, 3),
                p
            );
        }
        out
    }
}

/// Seed used for trial `i`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

pub fn trial_report_path(out_dir: &Path, trial: usize, model: &str) -> PathBuf {
    out_dir
        .join("trials")
        .join(format!("trial_{trial:03}_{}.json", file_stem(model)))
}

/// Runs every model on `trials` fresh splits, writes per-trial reports under
/// `trials/`, the summary to `benchmark.json` and the table to `benchmark.txt`.
pub fn cmd_benchmark(config: &ExperimentConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    config.validate()?;
    config.require_models(2)?;
    let dataset = load_dataset(&config.data)?;
    config.validate_for_dim(dataset.dim())?;

    let per_trial: Vec<Vec<EvalReport>> = exec::try_map_indexed(config.execution, config.trials, |trial| {
        let seed = trial_seed(config.seed, trial);
        config
            .models
            .iter()
            .map(|spec| {
                let (file, _, test) = fit_model(spec, config, &dataset, seed)?;
                let (report, _) = evaluate_model(&file, &test, ExecutionMode::Sequential)?;
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Training(format!("trial {trial} failed: {e}")))
    })?;

    create_dir(&out_dir.join("trials"))?;
    for (trial, reports) in per_trial.iter().enumerate() {
        for r in reports {
            write_json(&trial_report_path(out_dir, trial, &r.model), r)?;
        }
    }
    let report = summarize(config, &per_trial)?;
    write_json(&out_dir.join("benchmark.json"), &report)?;
    write_text(&out_dir.join("benchmark.txt"), &report.table())?;
    Ok(report)
}

fn summarize(config: &ExperimentConfig, per_trial: &[Vec<EvalReport>]) -> Result<BenchmarkReport> {
    let n_models = config.models.len();
    let column = |m: usize, f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<Vec<f64>> {
        per_trial.iter().map(|reports| f(&reports[m])).collect()
    };
    let auucs: Vec<Vec<f64>> = (0..n_models)
        .map(|m| column(m, &|r| Some(r.auuc)).expect("auuc always present"))
        .collect();
    let pehes: Vec<Option<Vec<f64>>> = (0..n_models).map(|m| column(m, &|r| r.pehe)).collect();
    let accs: Vec<Option<Vec<f64>>> = (0..n_models)
        .map(|m| column(m, &|r| r.population_accuracy))
        .collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // first model wins ties
    let best_auuc = (0..n_models).fold(0, |b, m| if mean(&auucs[m]) > mean(&auucs[b]) { m } else { b });
    let best_pehe = if pehes.iter().all(Option::is_some) {
        let p: Vec<&Vec<f64>> = pehes.iter().map(|v| v.as_ref().expect("checked")).collect();
        Some((0..n_models).fold(0, |b, m| if mean(p[m]) < mean(p[b]) { m } else { b }))
    } else {
        None
    };

    let mut models = Vec::with_capacity(n_models);
    for m in 0..n_models {
        let auuc_vs_best = if m == best_auuc {
            None
        } else {
            Some(wilcoxon_signed_rank(&auucs[m], &auucs[best_auuc])?)
        };
        let pehe_vs_best = match (best_pehe, &pehes[m]) {
            (Some(b), Some(values)) if b != m => Some(wilcoxon_signed_rank(
                values,
                pehes[b].as_ref().expect("best has pehe"),
            )?),
            _ => None,
        };
        models.push(ModelSummary {
            model: config.models[m].name(),
            auuc: MetricSummary::from_values(auucs[m].clone()),
            pehe: pehes[m].clone().map(MetricSummary::from_values),
            population_accuracy: accs[m].clone().map(MetricSummary::from_values),
            auuc_vs_best,
            pehe_vs_best,
        });
    }
    Ok(BenchmarkReport {
        trials: per_trial.len(),
        seed: config.seed,
        test_fraction: config.test_fraction,
        best_auuc: config.models[best_auuc].name(),
        best_pehe: best_pehe.map(|b| config.models[b].name()),
        models,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}
