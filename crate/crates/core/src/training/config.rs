use serde::{Deserialize, Serialize};

use crate::decoder::Activation;
use crate::error::{Error, Result};
use crate::gmm::GmmInit;
use crate::model::Profile;
use crate::optim::LearningRates;

/// How often the mixture-parameter prior enters the objective per epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorWeighting {
    /// Once per pass over the data: each batch carries its share `B/N`.
    #[default]
    PerEpoch,
    /// Once per batch, whatever its size.
    PerBatch,
    /// Once per sample: each batch carries weight `B`.
    PerSample,
}

impl std::str::FromStr for PriorWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-epoch" => Ok(PriorWeighting::PerEpoch),
            "per-batch" => Ok(PriorWeighting::PerBatch),
            "per-sample" => Ok(PriorWeighting::PerSample),
            other => Err(Error::Contract(format!(
                "unknown prior weighting '{other}'"
            ))),
        }
    }
}

/// Everything that controls a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub n_components: usize,
    /// Hidden layer widths of the decoder.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled weight decay on decoder weights.
    pub weight_decay: f64,
    pub gmm: GmmInit,
    pub prior_weighting: PriorWeighting,
    /// Use only each sample's label-assigned component in the latent term.
    pub supervised: bool,
    /// Label id to component; identity when absent.
    pub label_map: Option<Vec<usize>>,
    pub seed: u64,
    /// Epoch at which the decoder learning rate is multiplied by
    /// `lr_milestone_factor`.
    pub lr_milestone: Option<usize>,
    pub lr_milestone_factor: f64,
    /// Store elapsed seconds in the history. Off by default so histories are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl TrainConfig {
    /// Defaults for count data.
    pub fn counts(latent_dim: usize, n_components: usize) -> Self {
        Self {
            profile: Profile::Counts,
            epochs: 800,
            batch_size: 128,
            latent_dim,
            n_components,
            hidden: vec![100, 100, 100],
            hidden_activation: Activation::Relu,
            lr: LearningRates {
                decoder: 1e-3,
                representation: 1e-2,
                gmm: 1e-2,
            },
            beta1: 0.5,
            beta2: 0.7,
            weight_decay: 1e-4,
            gmm: GmmInit {
                scale: 1.0,
                sharpness: 1.0,
                dirichlet_alpha: 1.0,
                sigma: Some(0.02),
                logvar_prior_sd: 1.0,
            },
            prior_weighting: PriorWeighting::PerEpoch,
            supervised: false,
            label_map: None,
            seed: 0,
            lr_milestone: Some(500),
            lr_milestone_factor: 0.1,
            record_wall_time: false,
        }
    }

    /// Defaults for values in `[0, 1]`.
    pub fn binary(latent_dim: usize, n_components: usize) -> Self {
        Self {
            profile: Profile::Binary,
            epochs: 500,
            hidden: vec![100, 100],
            lr: LearningRates::from_decoder(1e-3, 100.0),
            gmm: GmmInit::default(),
            lr_milestone: None,
            ..Self::counts(latent_dim, n_components)
        }
    }

    pub fn for_profile(profile: Profile, latent_dim: usize, n_components: usize) -> Self {
        match profile {
            Profile::Counts => Self::counts(latent_dim, n_components),
            Profile::Binary => Self::binary(latent_dim, n_components),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("n_components", self.n_components),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Contract(
                "hidden layer widths must be positive".into(),
            ));
        }
        let rates = [self.lr.decoder, self.lr.representation, self.lr.gmm];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Contract(format!("invalid learning rates {rates:?}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Contract("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Contract("weight decay must be nonnegative".into()));
        }
        if let Some(map) = &self.label_map {
            if let Some(&c) = map.iter().find(|&&c| c >= self.n_components) {
                return Err(Error::Index {
                    what: "label map component",
                    index: c,
                    limit: self.n_components,
                });
            }
        }
        Ok(())
    }

    /// Decoder layer sizes including input and output.
    pub fn layer_sizes(&self, n_outputs: usize) -> Vec<usize> {
        let mut s = vec![self.latent_dim];
        s.extend_from_slice(&self.hidden);
        s.push(n_outputs);
        s
    }
}
