//! T-learner baselines: one classifier for the treated group, one for the
//! control group, and `p1(x) - p0(x)` as the effect estimate.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cae::TrainConfig;
use crate::data::Dataset;
use crate::numcore::{sigmoid, Activation, AdamConfig, AdamState, Mode, Network, NetworkSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LogisticRegression,
    MlpClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            epochs: 500,
            step_size: 0.1,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub logistic: LogisticConfig,
    pub mlp: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            logistic: LogisticConfig::default(),
            mlp: TrainConfig {
                epochs: 100,
                batch_size: 64,
                adam: AdamConfig::default(),
                seed: 0,
            },
        }
    }
}

impl BaselineConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.mlp.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lc = &self.logistic;
        if lc.epochs == 0 || lc.step_size.is_nan() || lc.step_size <= 0.0 || lc.l2.is_nan() || lc.l2 < 0.0 {
            return Err(Error::config(
                "logistic epochs and step_size must be positive, l2 nonnegative",
            ));
        }
        self.mlp.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Array1<f64> {
        (x.dot(&self.weights) + self.intercept).mapv(sigmoid)
    }
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (intercept not penalized).
pub fn logistic_objective(model: &LogisticModel, x: &Array2<f64>, y: &[u8], l2: f64) -> f64 {
    let logits = x.dot(&model.weights) + model.intercept;
    let ce: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &yi)| {
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - yi as f64 * z
        })
        .sum::<f64>()
        / y.len() as f64;
    ce + 0.5 * l2 * model.weights.dot(&model.weights)
}

/// Full-batch gradient descent from zero. Returns the model and the
/// objective before each step plus after the last one.
pub fn fit_logistic(x: &Array2<f64>, y: &[u8], config: &LogisticConfig) -> Result<(LogisticModel, Vec<f64>)> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Training("logistic regression needs matching, non-empty x and y".into()));
    }
    let n = y.len() as f64;
    let target = Array1::from_iter(y.iter().map(|&v| v as f64));
    let mut model = LogisticModel {
        weights: Array1::zeros(x.ncols()),
        intercept: 0.0,
    };
    let mut history = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        history.push(logistic_objective(&model, x, y, config.l2));
        let resid = model.predict_proba(x) - &target;
        let grad_w = x.t().dot(&resid) / n + &model.weights * config.l2;
        let grad_b = resid.sum() / n;
        model.weights.scaled_add(-config.step_size, &grad_w);
        model.intercept -= config.step_size * grad_b;
    }
    let last = logistic_objective(&model, x, y, config.l2);
    if !last.is_finite() {
        return Err(Error::Training("logistic regression diverged".into()));
    }
    history.push(last);
    Ok((model, history))
}

/// Dense net with relu hidden layers `ceil(d/2), ceil(d/4)` (batch norm on
/// each) and a sigmoid head, trained on cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub network: Network,
}

impl MlpClassifier {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.network.predict(x)?.column(0).to_owned())
    }
}

pub fn fit_mlp(x: &Array2<f64>, y: &[u8], config: &TrainConfig) -> Result<MlpClassifier> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Training("mlp classifier needs matching, non-empty x and y".into()));
    }
    config.validate()?;
    let d = x.ncols();
    let spec = NetworkSpec::chain(
        &[d, d.div_ceil(2), d.div_ceil(4), 1],
        Activation::Relu,
        Activation::Sigmoid,
        true,
        false,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::new(spec, &mut rng)?;
    let sizes: Vec<usize> = network.params_mut().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(config.adam, &sizes);
    let target = Array1::from_iter(y.iter().map(|&v| v as f64));
    let mut order: Vec<usize> = (0..y.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
        }
        for batch in batches {
            let xb = x.select(Axis(0), batch);
            let yb = target.select(Axis(0), batch);
            let trace = network.forward(&xb, Mode::Train)?;
            // d(mean BCE)/d(logit) = (p - y) / batch
            let p = trace.output().column(0).to_owned();
            let g = ((p - yb) / batch.len() as f64).insert_axis(Axis(1));
            let (grads, _) = network.backward_from_pre_activation(&trace, &g)?;
            network.commit_batch_stats(&trace);
            let mut params = network.params_mut();
            adam.update(&mut params, &grads.slices())?;
        }
    }
    Ok(MlpClassifier { network })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classifier {
    Logistic(LogisticModel),
    Mlp(MlpClassifier),
}

impl Classifier {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        match self {
            Classifier::Logistic(m) => Ok(m.predict_proba(x)),
            Classifier::Mlp(m) => m.predict_proba(x),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.weights.len(),
            Classifier::Mlp(m) => m.network.input_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLearner {
    pub kind: LearnerKind,
    pub treated: Classifier,
    pub control: Classifier,
    pub config: BaselineConfig,
}

/// Fits the control model on `t = 0` rows and the treated model on `t = 1` rows.
pub fn train_t_learner(kind: LearnerKind, dataset: &Dataset, config: &BaselineConfig) -> Result<TLearner> {
    config.validate()?;
    let (control_rows, treated_rows): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| dataset.treatment()[i] == 0);
    if control_rows.is_empty() || treated_rows.is_empty() {
        return Err(Error::Evaluation(
            "t-learner needs both treatment groups (overlap violated)".into(),
        ));
    }
    let fit = |rows: &[usize], seed_offset: u64| -> Result<Classifier> {
        let x = dataset.features().select(Axis(0), rows);
        let y: Vec<u8> = rows.iter().map(|&i| dataset.y_obs()[i]).collect();
        match kind {
            LearnerKind::LogisticRegression => Ok(Classifier::Logistic(fit_logistic(&x, &y, &config.logistic)?.0)),
            LearnerKind::MlpClassifier => {
                let mut mlp = config.mlp.clone();
                mlp.seed = mlp.seed.wrapping_add(seed_offset);
                Ok(Classifier::Mlp(fit_mlp(&x, &y, &mlp)?))
            }
        }
    };
    Ok(TLearner {
        kind,
        treated: fit(&treated_rows, 1)?,
        control: fit(&control_rows, 0)?,
        config: config.clone(),
    })
}

impl TLearner {
    pub fn feature_dim(&self) -> usize {
        self.treated.input_dim()
    }

    /// `(P(y=1 | x, t=0), P(y=1 | x, t=1))` per row.
    pub fn outcome_probabilities(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if x.ncols() != self.feature_dim() {
            return Err(Error::config(format!(
                "data has {} features, model expects {}",
                x.ncols(),
                self.feature_dim()
            )));
        }
        Ok((self.control.predict_proba(x)?, self.treated.predict_proba(x)?))
    }

    pub fn predict_ite_batch(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let (p0, p1) = self.outcome_probabilities(x)?;
        Ok((p1 - p0).to_vec())
    }

    pub fn predict_ite(&self, x: &[f64]) -> Result<f64> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        Ok(self.predict_ite_batch(&row)?[0])
    }

    /// Outcome under `1 - t`, thresholding the other group's probability at 0.5.
    pub fn predict_counterfactual(&self, x: &[f64], t: u8) -> Result<u8> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        let (p0, p1) = self.outcome_probabilities(&row)?;
        let p = if t == 0 { p1[0] } else { p0[0] };
        Ok(u8::from(p >= 0.5))
    }
}
