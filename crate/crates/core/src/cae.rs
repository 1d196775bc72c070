//! The causal auto-encoder.
//!
//! `encoder -> softmax latent -> mask -> decoder`, trained to reconstruct
//! the features. The mask comes from each sample's `(t, y_obs)` and zeroes
//! the latent blocks of the two populations the observation excludes, so
//! the softmax mass of the surviving blocks is pushed to carry the sample's
//! population. Prediction reads the encoder alone, without a mask.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::exec::{self, ExecutionMode};
use crate::mask::{admissible_populations, build_mask, check_binary, CausalPopulation, LatentLayout};
use crate::numcore::{mse_loss, Activation, AdamConfig, AdamState, Gradients, Mode, Network, NetworkSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    /// `r`: latent nodes per population.
    pub nodes_per_population: usize,
    /// `q`: unconstrained latent nodes.
    #[serde(default)]
    pub info_nodes: usize,
    /// Encoder hidden widths; defaults to `ceil(d/2), ceil(d/4)`. The
    /// decoder mirrors them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hidden_sizes: Option<Vec<usize>>,
    /// Batch norm on decoder hidden layers. Off by default: it rescales the
    /// small residual mass left on masked-out nodes, which lets the decoder
    /// ignore the mask.
    #[serde(default)]
    pub decoder_batch_norm: bool,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig::with_layout(1, 0)
    }
}

impl CaeConfig {
    pub fn with_layout(nodes_per_population: usize, info_nodes: usize) -> Self {
        CaeConfig {
            nodes_per_population,
            info_nodes,
            encoder_hidden_sizes: None,
            decoder_batch_norm: false,
            train: TrainConfig::default(),
        }
    }

    pub fn layout(&self, feature_dim: usize) -> Result<LatentLayout> {
        LatentLayout::new(self.nodes_per_population, self.info_nodes, feature_dim)
    }

    pub fn hidden_sizes(&self, feature_dim: usize) -> Vec<usize> {
        self.encoder_hidden_sizes
            .clone()
            .unwrap_or_else(|| vec![feature_dim.div_ceil(2), feature_dim.div_ceil(4)])
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.layout(feature_dim)?;
        if self.hidden_sizes(feature_dim).contains(&0) {
            return Err(Error::config("encoder_hidden_sizes must be positive"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeModel {
    config: CaeConfig,
    layout: LatentLayout,
    encoder: Network,
    decoder: Network,
}

/// Gradients of the masked reconstruction loss for both halves.
#[derive(Debug, Clone)]
pub struct CaeGradients {
    pub loss: f64,
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl CaeGradients {
    /// Encoder parameters first, then decoder, matching [`CaeModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.encoder.flatten();
        out.extend(self.decoder.flatten());
        out
    }
}

/// Seeded initialization; identical seeds give identical models.
pub fn init_model(config: &CaeConfig, feature_dim: usize, seed: u64) -> Result<CaeModel> {
    config.validate(feature_dim)?;
    let layout = config.layout(feature_dim)?;
    let hidden = config.hidden_sizes(feature_dim);
    let mut enc_sizes = vec![feature_dim];
    enc_sizes.extend(&hidden);
    enc_sizes.push(layout.latent_dim());
    let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
    let enc_spec = NetworkSpec::chain(&enc_sizes, Activation::Relu, Activation::Softmax, true, true)?;
    let dec_spec = NetworkSpec::chain(
        &dec_sizes,
        Activation::Relu,
        Activation::Identity,
        config.decoder_batch_norm,
        false,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Network::new(enc_spec, &mut rng)?;
    let decoder = Network::new(dec_spec, &mut rng)?;
    Ok(CaeModel {
        config: config.clone(),
        layout,
        encoder,
        decoder,
    })
}

/// Row `i` holds the mask gates for `(treatment[i], y_obs[i])`.
pub fn mask_matrix(layout: &LatentLayout, treatment: &[u8], y_obs: &[u8]) -> Result<Array2<f64>> {
    if treatment.len() != y_obs.len() {
        return Err(Error::config("treatment and outcome lengths differ"));
    }
    let p = layout.latent_dim();
    let mut gates = Array2::zeros((treatment.len(), p));
    for (i, (&t, &y)) in treatment.iter().zip(y_obs).enumerate() {
        let mask = build_mask(t, y, layout)?;
        for (j, &g) in mask.gates().iter().enumerate() {
            gates[(i, j)] = g as f64;
        }
    }
    Ok(gates)
}

impl CaeModel {
    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn feature_dim(&self) -> usize {
        self.layout.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        let p = self.layout.latent_dim();
        if self.encoder.output_dim() != p || self.decoder.input_dim() != p {
            return Err(Error::config("encoder/decoder latent size does not match layout"));
        }
        if self.encoder.input_dim() != self.layout.feature_dim
            || self.decoder.output_dim() != self.layout.feature_dim
        {
            return Err(Error::config("encoder/decoder feature size does not match layout"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.encoder.flat_params();
        out.extend(self.decoder.flat_params());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let split = self.encoder.param_count();
        if flat.len() != self.param_count() {
            return Err(Error::config("parameter count mismatch"));
        }
        self.encoder.set_flat_params(&flat[..split])?;
        self.decoder.set_flat_params(&flat[split..])
    }

    /// Train-mode masked reconstruction loss, without touching running statistics.
    pub fn masked_loss(&self, x: &Array2<f64>, gates: &Array2<f64>) -> Result<f64> {
        Ok(self.masked_forward(x, gates)?.0)
    }

    /// Decoder input (the masked latent) for a train-mode pass.
    pub fn masked_latent(&self, x: &Array2<f64>, gates: &Array2<f64>) -> Result<Array2<f64>> {
        let enc = self.encoder.forward(x, Mode::Train)?;
        check_gates(enc.output(), gates)?;
        Ok(enc.output() * gates)
    }

    fn masked_forward(&self, x: &Array2<f64>, gates: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let z_masked = self.masked_latent(x, gates)?;
        let dec = self.decoder.forward(&z_masked, Mode::Train)?;
        let (loss, _) = mse_loss(dec.output(), x)?;
        Ok((loss, z_masked))
    }

    /// Loss and gradients of the masked reconstruction objective on one batch.
    /// The gates are constants: gradient flows through open units only.
    pub fn masked_loss_and_gradients(&self, x: &Array2<f64>, gates: &Array2<f64>) -> Result<CaeGradients> {
        self.step_internals(x, gates).map(|(g, _, _)| g)
    }

    fn step_internals(
        &self,
        x: &Array2<f64>,
        gates: &Array2<f64>,
    ) -> Result<(CaeGradients, crate::numcore::ForwardTrace, crate::numcore::ForwardTrace)> {
        let enc = self.encoder.forward(x, Mode::Train)?;
        check_gates(enc.output(), gates)?;
        let z_masked = enc.output() * gates;
        let dec = self.decoder.forward(&z_masked, Mode::Train)?;
        let (loss, grad_out) = mse_loss(dec.output(), x)?;
        let (decoder_grads, grad_masked) = self.decoder.backward(&dec, &grad_out)?;
        let grad_latent = grad_masked * gates;
        let (encoder_grads, _) = self.encoder.backward(&enc, &grad_latent)?;
        Ok((
            CaeGradients {
                loss,
                encoder: encoder_grads,
                decoder: decoder_grads,
            },
            enc,
            dec,
        ))
    }

    /// Minibatch Adam on the masked reconstruction loss.
    pub fn train(&mut self, dataset: &Dataset) -> Result<TrainReport> {
        let train = self.config.train.clone();
        train.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if dataset.dim() != self.feature_dim() {
            return Err(Error::config(format!(
                "dataset has {} features, model expects {}",
                dataset.dim(),
                self.feature_dim()
            )));
        }
        let gates = mask_matrix(&self.layout, dataset.treatment(), dataset.y_obs())?;
        let x = dataset.features();

        let sizes: Vec<usize> = self
            .encoder
            .params_mut()
            .iter()
            .chain(self.decoder.params_mut().iter())
            .map(|s| s.len())
            .collect();
        let mut adam = AdamState::new(train.adam, &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut epoch_losses = Vec::with_capacity(train.epochs);

        for epoch in 0..train.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in batches(&order, train.batch_size) {
                let xb = x.select(ndarray::Axis(0), batch);
                let gb = gates.select(ndarray::Axis(0), batch);
                let (grads, enc_trace, dec_trace) = self.step_internals(&xb, &gb)?;
                if !grads.loss.is_finite() {
                    return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
                }
                total += grads.loss * batch.len() as f64;
                self.encoder.commit_batch_stats(&enc_trace);
                self.decoder.commit_batch_stats(&dec_trace);
                let grad_slices: Vec<&[f64]> = grads
                    .encoder
                    .slices()
                    .into_iter()
                    .chain(grads.decoder.slices())
                    .collect();
                let mut params: Vec<&mut [f64]> = self.encoder.params_mut();
                params.extend(self.decoder.params_mut());
                adam.update(&mut params, &grad_slices)?;
            }
            epoch_losses.push(total / dataset.len() as f64);
        }
        Ok(TrainReport {
            final_loss: *epoch_losses.last().expect("epochs >= 1"),
            epochs_run: epoch_losses.len(),
            epoch_losses,
            seed: train.seed,
        })
    }

    /// Raw softmax latent (no mask), inference mode.
    pub fn latent(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(x)
    }

    /// Population distribution per row (columns R, D, S, A).
    pub fn population_distributions(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.population_distributions_with(x, ExecutionMode::Sequential)
    }

    /// As [`CaeModel::population_distributions`], evaluating row chunks
    /// according to `mode`.
    pub fn population_distributions_with(&self, x: &Array2<f64>, mode: ExecutionMode) -> Result<Array2<f64>> {
        const CHUNK: usize = 512;
        let n = x.nrows();
        let chunks = n.div_ceil(CHUNK);
        let parts = exec::try_map_indexed(mode, chunks, |c| {
            let rows = x.slice(s![c * CHUNK..((c + 1) * CHUNK).min(n), ..]).to_owned();
            self.latent(&rows)
        })?;
        let mut out = Array2::zeros((n, 4));
        let mut row = 0;
        for part in parts {
            for latent in part.rows() {
                let dist = aggregate_populations(latent.as_slice().expect("standard layout"), &self.layout)?;
                for k in 0..4 {
                    out[(row, k)] = dist[k];
                }
                row += 1;
            }
        }
        Ok(out)
    }

    pub fn encode_population_distribution(&self, x: &[f64]) -> Result<[f64; 4]> {
        if x.len() != self.feature_dim() {
            return Err(Error::config(format!(
                "sample has {} features, model expects {}",
                x.len(),
                self.feature_dim()
            )));
        }
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        let latent = self.latent(&row)?;
        aggregate_populations(latent.row(0).as_slice().expect("standard layout"), &self.layout)
    }

    pub fn predict_population(&self, x: &[f64]) -> Result<CausalPopulation> {
        Ok(argmax_population(&self.encode_population_distribution(x)?))
    }

    pub fn predict_counterfactual(&self, x: &[f64], t: u8, y_obs: u8) -> Result<u8> {
        counterfactual_from_distribution(&self.encode_population_distribution(x)?, t, y_obs)
    }

    pub fn estimate_cate(&self, x: &[f64]) -> Result<f64> {
        Ok(cate_from_distribution(&self.encode_population_distribution(x)?))
    }
}

fn check_gates(latent: &Array2<f64>, gates: &Array2<f64>) -> Result<()> {
    if latent.dim() != gates.dim() {
        return Err(Error::config(format!(
            "mask shape {:?} does not match latent shape {:?}",
            gates.dim(),
            latent.dim()
        )));
    }
    Ok(())
}

/// Consecutive slices of `order`; a trailing batch of one sample is folded
/// into the previous batch, since batch statistics need two rows.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Sums each population's `r` node probabilities and renormalizes by the
/// total population mass, ignoring info nodes.
pub fn aggregate_populations(latent: &[f64], layout: &LatentLayout) -> Result<[f64; 4]> {
    if latent.len() != layout.latent_dim() {
        return Err(Error::config(format!(
            "latent has {} units, layout expects {}",
            latent.len(),
            layout.latent_dim()
        )));
    }
    let mut dist = [0.0; 4];
    for p in CausalPopulation::ALL {
        dist[p.index()] = latent[layout.block(p)].iter().sum();
    }
    let mass: f64 = dist.iter().sum();
    if mass > 0.0 {
        for v in &mut dist {
            *v /= mass;
        }
    } else {
        dist = [0.25; 4];
    }
    Ok(dist)
}

/// Highest-probability population; ties go to the earlier of R, D, S, A.
pub fn argmax_population(dist: &[f64; 4]) -> CausalPopulation {
    let mut best = 0;
    for k in 1..4 {
        if dist[k] > dist[best] {
            best = k;
        }
    }
    CausalPopulation::ALL[best]
}

/// Picks the likelier of the two admissible populations and reads its
/// outcome under the other treatment.
pub fn counterfactual_from_distribution(dist: &[f64; 4], t: u8, y_obs: u8) -> Result<u8> {
    Ok(counterfactual_population(dist, t, y_obs)?.outcome(1 - t))
}

pub fn counterfactual_population(dist: &[f64; 4], t: u8, y_obs: u8) -> Result<CausalPopulation> {
    check_binary("t", t)?;
    check_binary("y_obs", y_obs)?;
    let [a, b] = admissible_populations(t, y_obs)?;
    Ok(if dist[b.index()] > dist[a.index()] { b } else { a })
}

/// `p_R - p_A`.
pub fn cate_from_distribution(dist: &[f64; 4]) -> f64 {
    dist[CausalPopulation::Responder.index()] - dist[CausalPopulation::AntiResponder.index()]
}
