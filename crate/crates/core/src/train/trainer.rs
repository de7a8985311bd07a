use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::gae::GaeConfig;
use crate::heads::HeadConfig;
use crate::losses::{car_loss_from_logits, cox_loss, total_loss, LossBlendConfig, SurvivalLabel};
use crate::model::{CarmilModel, ModelConfig, PreparedSlide};
use crate::numerics::{Matrix, Tape, Var};

/// Learning-rate grid searched by the inner loop.
pub const LEARNING_RATES: [f64; 3] = [0.001, 0.003, 0.01];
/// Epoch grid searched by the inner loop.
pub const EPOCHS: [usize; 2] = [20, 30];

fn default_beta() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    LEARNING_RATES[0]
}
fn default_epochs() -> usize {
    EPOCHS[0]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_k() -> usize {
    8
}
fn default_spatial() -> Option<GaeConfig> {
    Some(GaeConfig::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub head: HeadConfig,
    /// `None` trains the head on raw features with no graph autoencoder.
    #[serde(default = "default_spatial")]
    pub spatial: Option<GaeConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: default_beta(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            seed: 0,
            k: default_k(),
            head: HeadConfig::default(),
            spatial: default_spatial(),
        }
    }
}

impl TrainConfig {
    /// The head on raw features, trained on the survival loss alone.
    pub fn plain(head: HeadConfig) -> Self {
        Self {
            beta: 0.0,
            head,
            spatial: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        LossBlendConfig::new(self.beta)?;
        Adam::new(self.adam())?;
        if self.epochs == 0 || self.k == 0 {
            return Err(Error::InvalidArgument("epochs and k must be positive".into()));
        }
        if self.spatial.is_none() && self.beta != 0.0 {
            return Err(Error::InvalidArgument(
                "a model without graph autoencoder has no reconstruction loss; beta must be 0".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            feature_dim,
            spatial: self.spatial,
            head: self.head,
        }
    }
}

/// Losses after the forward pass of one epoch, before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub mil: f64,
    /// Mean reconstruction loss over slides; absent without a decoder.
    pub car: Option<f64>,
    pub total: f64,
}

/// Nodes of the training objective over a set of slides.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub mil: Var,
    pub car: Option<Var>,
    pub total: Var,
}

/// Records the full-batch objective: Cox loss over every slide's risk and
/// the reconstruction loss averaged over slides.
pub fn objective(tape: &mut Tape, model: &CarmilModel, slides: &[PreparedSlide], beta: f64) -> Result<Objective> {
    let blend = LossBlendConfig::new(beta)?;
    let mut risks = Vec::with_capacity(slides.len());
    let mut cars = Vec::with_capacity(slides.len());
    for s in slides {
        let out = model.forward(tape, s, true)?;
        risks.push(out.head.risk);
        if let Some(logits) = out.reconstruction_logits {
            cars.push(car_loss_from_logits(tape, logits, &s.graph.adjacency)?);
        }
    }
    let labels: Vec<SurvivalLabel> = slides.iter().map(|s| s.label).collect();
    let mil = cox_loss(tape, &risks, &labels)?;
    let (car, total) = if cars.is_empty() {
        if beta != 0.0 {
            return Err(Error::InvalidArgument("beta > 0 needs a graph autoencoder".into()));
        }
        (None, mil)
    } else {
        let stacked = tape.concat_rows(&cars)?;
        let sum = tape.sum(stacked);
        let car = tape.scale(sum, 1.0 / cars.len() as f64)?;
        (Some(car), total_loss(tape, mil, car, &blend)?)
    };
    Ok(Objective { mil, car, total })
}

/// Trains in place, one full-batch Adam step per epoch.
pub fn train_one(model: &mut CarmilModel, slides: &[PreparedSlide], cfg: &TrainConfig) -> Result<Vec<EpochLosses>> {
    Ok(train_with_snapshots(model, slides, cfg, &[])?.0)
}

/// Like [`train_one`], also returning a copy of the model after each epoch
/// listed in `snapshot_at` (1-based).
pub fn train_with_snapshots(
    model: &mut CarmilModel,
    slides: &[PreparedSlide],
    cfg: &TrainConfig,
    snapshot_at: &[usize],
) -> Result<(Vec<EpochLosses>, Vec<(usize, CarmilModel)>)> {
    cfg.validate()?;
    if !slides.iter().any(|s| s.label.event) {
        return Err(Error::UnusableSurvivalData("training set has no observed events".into()));
    }
    let mut adam = Adam::new(cfg.adam())?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let obj = objective(&mut tape, model, slides, cfg.beta)?;
        curve.push(EpochLosses {
            epoch,
            mil: tape.value(obj.mil).item(),
            car: obj.car.map(|c| tape.value(c).item()),
            total: tape.value(obj.total).item(),
        });
        let store = model.store_mut();
        store.zero_grad();
        tape.backward(obj.total, store)?;
        adam.step(store)?;
        if snapshot_at.contains(&epoch) {
            snapshots.push((epoch, model.clone()));
        }
    }
    Ok((curve, snapshots))
}

/// Per-slide risks from a trained model.
pub fn predict(model: &CarmilModel, slides: &[PreparedSlide]) -> Result<Vec<f64>> {
    slides.iter().map(|s| model.risk(s)).collect()
}

/// Per-parameter gradient of `loss` as matrices, in store order.
pub fn gradients_of(model: &CarmilModel, slides: &[PreparedSlide], beta: f64, pick: Pick) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let obj = objective(&mut tape, model, slides, beta)?;
    let root = match pick {
        Pick::Total => obj.total,
        Pick::Mil => obj.mil,
        Pick::Car => obj
            .car
            .ok_or_else(|| Error::InvalidArgument("model has no reconstruction loss".into()))?,
    };
    let mut store = model.store().clone();
    store.zero_grad();
    tape.backward(root, &mut store)?;
    Ok(store.iter().map(|(_, p)| p.grad.clone()).collect())
}

/// Which term of the objective [`gradients_of`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    Total,
    Mil,
    Car,
}
