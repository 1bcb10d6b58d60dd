//! The full generative model: decoder, latent mixture and (for counts) the
//! dispersion head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, DiffArray, Gradients, ReduceOp, Tape, Var};
use crate::data::BatchTargets;
use crate::decoder::{BoundDecoder, DecoderNet};
use crate::error::{Error, Result};
use crate::gmm::{BoundMixture, GaussianMixture};
use crate::likelihood::{bce_elementwise, nb_neg_log_pmf, NegativeBinomialHead};

/// Output distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Bernoulli outputs, values in `[0, 1]`.
    Binary,
    /// Negative binomial outputs over integer counts.
    Counts,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Binary => "binary",
            Profile::Counts => "counts",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Profile::Binary),
            "counts" => Ok(Profile::Counts),
            other => Err(Error::Contract(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgdModel {
    pub decoder: DecoderNet,
    pub gmm: GaussianMixture,
    pub head: Option<NegativeBinomialHead>,
    pub profile: Profile,
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub decoder: BoundDecoder,
    pub gmm: BoundMixture,
    pub head: Option<Var>,
}

impl DgdModel {
    pub fn new(
        decoder: DecoderNet,
        gmm: GaussianMixture,
        head: Option<NegativeBinomialHead>,
        profile: Profile,
    ) -> Result<Self> {
        if decoder.input_dim() != gmm.dim() {
            return Err(Error::dim("DgdModel", &[decoder.input_dim()], &[gmm.dim()]));
        }
        match (profile, &head) {
            (Profile::Counts, Some(h)) if h.n_features() == decoder.output_dim() => {}
            (Profile::Binary, None) => {}
            _ => {
                return Err(Error::Contract(format!(
                    "{profile} profile with inconsistent dispersion head"
                )))
            }
        }
        Ok(Self {
            decoder,
            gmm,
            head,
            profile,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.gmm.dim()
    }

    pub fn n_components(&self) -> usize {
        self.gmm.n_components()
    }

    pub fn n_outputs(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Binds all parameters; `frozen` binds them as constants.
    pub fn bind(&self, tape: &mut Tape, frozen: bool) -> BoundModel {
        if frozen {
            BoundModel {
                decoder: self.decoder.bind_frozen(tape),
                gmm: self.gmm.bind_frozen(tape),
                head: self.head.as_ref().map(|h| h.bind_frozen(tape)),
            }
        } else {
            BoundModel {
                decoder: self.decoder.bind(tape),
                gmm: self.gmm.bind(tape),
                head: self.head.as_ref().map(|h| h.bind(tape)),
            }
        }
    }

    /// Negative log-likelihood of every target entry, `[B × n]`.
    pub fn recon_elementwise(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        pred: Var,
        targets: &BatchTargets,
    ) -> Result<Var> {
        match (self.profile, bound.head, &targets.scale) {
            (Profile::Binary, _, _) => bce_elementwise(tape, pred, &targets.values),
            (Profile::Counts, Some(ld), Some(scale)) => {
                nb_neg_log_pmf(tape, pred, &targets.values, scale, ld)
            }
            _ => Err(Error::Contract(
                "count targets need scaling constants and a dispersion head".into(),
            )),
        }
    }

    /// Per-sample reconstruction loss, `[B]`.
    pub fn recon_per_sample(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        pred: Var,
        targets: &BatchTargets,
    ) -> Result<Var> {
        let e = self.recon_elementwise(tape, bound, pred, targets)?;
        tape.reduce(ReduceOp::Sum, e, Axis::Dim(1))
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundModel) {
        self.decoder.accumulate_grads(grads, &bound.decoder);
        self.gmm.accumulate_grads(grads, &bound.gmm);
        if let (Some(h), Some(v)) = (self.head.as_mut(), bound.head) {
            h.accumulate_grads(grads, v);
        }
    }

    /// Decoder-group parameters (network and dispersion) with decay flags.
    pub fn decoder_params_mut(&mut self) -> Vec<(&mut DiffArray, bool)> {
        let mut p = self.decoder.params_mut();
        if let Some(h) = self.head.as_mut() {
            p.push((&mut h.log_dispersion, false));
        }
        p
    }

    pub fn gmm_params_mut(&mut self) -> Vec<(&mut DiffArray, bool)> {
        self.gmm
            .params_mut()
            .into_iter()
            .map(|p| (p, false))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.decoder.zero_grad();
        self.gmm.zero_grad();
        if let Some(h) = self.head.as_mut() {
            h.log_dispersion.zero_grad();
        }
    }

    /// Per-sample reconstruction loss of `targets` under decoded `pred`
    /// (`[B × n]` plain values).
    pub fn recon_loss_values(&self, pred: &[f64], targets: &BatchTargets) -> Result<Vec<f64>> {
        let n = self.n_outputs();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let p = tape.constant(&[pred.len() / n, n], pred.to_vec())?;
        let r = self.recon_per_sample(&mut tape, &bound, p, targets)?;
        Ok(tape.value(r).to_vec())
    }
}
