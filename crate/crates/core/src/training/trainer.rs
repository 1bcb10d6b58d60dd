use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, History, PriorWeighting, TrainConfig};
use crate::autodiff::{DiffArray, Tape, Var};
use crate::data::{BatchTargets, Dataset};
use crate::decoder::DecoderNet;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::likelihood::NegativeBinomialHead;
use crate::model::{BoundModel, DgdModel};
use crate::optim::OptimizerTrio;

/// One trainable latent vector per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    /// `[N × m]`
    pub z: DiffArray,
}

impl RepresentationSet {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            z: DiffArray::zeros(&[n, m]),
        }
    }

    pub fn from_values(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            z: DiffArray::new(&[n, m], values)?,
        })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    pub fn values(&self) -> &[f64] {
        self.z.values()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: DgdModel,
    pub representations: RepresentationSet,
    pub history: History,
}

/// Sums of the per-sample losses over one epoch.
#[derive(Debug, Clone, Copy, Default)]
struct EpochSums {
    recon: f64,
    latent: f64,
    prior: f64,
}

struct BatchLoss {
    tape: Tape,
    bound: BoundModel,
    z: Var,
    loss: Var,
    recon: Var,
    latent: Var,
    prior: Var,
    prior_weight: f64,
}

/// Drives the training loop one epoch at a time.
pub struct Trainer<'a> {
    data: &'a Dataset,
    config: TrainConfig,
    model: DgdModel,
    reps: RepresentationSet,
    optim: OptimizerTrio,
    rng: ChaCha8Rng,
    assigned: Option<Vec<usize>>,
    history: History,
    epoch: usize,
    started: Instant,
}

impl<'a> Trainer<'a> {
    /// Initialises decoder and mixture from `rng`, which is then reused for
    /// batch shuffling.
    pub fn new(data: &'a Dataset, config: TrainConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if data.profile() != config.profile {
            return Err(Error::ProfileMismatch {
                expected: config.profile.to_string(),
                found: data.profile().to_string(),
            });
        }
        let n = data.n_samples();
        if n == 0 {
            return Err(Error::Data("no samples".into()));
        }
        let assigned = if config.supervised {
            let labels = data.labels().ok_or_else(|| {
                Error::Contract("supervised training needs labels for every sample".into())
            })?;
            let ids = labels.ids();
            let map: Vec<usize> = match &config.label_map {
                Some(m) => m.clone(),
                None => (0..labels.n_classes()).collect(),
            };
            let out = ids
                .iter()
                .map(|&l| match map.get(l) {
                    Some(&c) if c < config.n_components => Ok(c),
                    Some(&c) => Err(Error::Index {
                        what: "label map component",
                        index: c,
                        limit: config.n_components,
                    }),
                    None => Err(Error::Index {
                        what: "label map",
                        index: l,
                        limit: map.len(),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            Some(out)
        } else {
            None
        };

        let sizes = config.layer_sizes(data.n_features());
        let decoder = DecoderNet::new(&sizes, config.hidden_activation, &mut rng)?;
        let gmm = GaussianMixture::new(
            config.n_components,
            config.latent_dim,
            &config.gmm,
            &mut rng,
        )?;
        let head = match config.profile {
            crate::model::Profile::Counts => Some(NegativeBinomialHead::new(data.n_features())),
            crate::model::Profile::Binary => None,
        };
        let model = DgdModel::new(decoder, gmm, head, config.profile)?;
        let optim = OptimizerTrio::new(config.lr, config.beta1, config.beta2, config.weight_decay);
        Ok(Self {
            data,
            reps: RepresentationSet::zeros(n, config.latent_dim),
            config,
            model,
            optim,
            rng,
            assigned,
            history: History::default(),
            epoch: 0,
            started: Instant::now(),
        })
    }

    /// Replaces the freshly initialised model, e.g. to continue from a checkpoint.
    pub fn with_model(mut self, model: DgdModel) -> Result<Self> {
        if model.latent_dim() != self.config.latent_dim
            || model.n_outputs() != self.data.n_features()
            || model.profile != self.config.profile
        {
            return Err(Error::dim(
                "Trainer::with_model",
                &[model.latent_dim(), model.n_outputs()],
                &[self.config.latent_dim, self.data.n_features()],
            ));
        }
        self.model = model;
        Ok(self)
    }

    pub fn with_representations(mut self, reps: RepresentationSet) -> Result<Self> {
        if reps.z.shape() != self.reps.z.shape() {
            return Err(Error::dim(
                "Trainer::with_representations",
                reps.z.shape(),
                self.reps.z.shape(),
            ));
        }
        self.reps = reps;
        Ok(self)
    }

    pub fn model(&self) -> &DgdModel {
        &self.model
    }

    pub fn representations(&self) -> &RepresentationSet {
        &self.reps
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn tag(err: Error, epoch: usize, batch: Option<usize>) -> Error {
        match err {
            Error::TrainingDiverged { group, .. } => Error::TrainingDiverged {
                group,
                epoch: Some(epoch),
                batch,
            },
            other => other,
        }
    }

    /// Builds the tape for one batch: `Σrecon − Σlog p(z) − w·log p(φ)`.
    fn batch_loss(&self, rows: &[usize], targets: &BatchTargets) -> Result<BatchLoss> {
        let m = self.config.latent_dim;
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, false);
        let z = tape.leaf_values(&[rows.len(), m], self.reps.z.gather_rows(rows))?;
        let pred = self.model.decoder.forward(&mut tape, &bound.decoder, z)?;
        let recon = self
            .model
            .recon_per_sample(&mut tape, &bound, pred, targets)?;
        let recon = tape.sum(recon)?;
        let latent = match &self.assigned {
            Some(a) => {
                let idx: Vec<usize> = rows.iter().map(|&r| a[r]).collect();
                self.model
                    .gmm
                    .supervised_log_prob(&mut tape, &bound.gmm, z, &idx)?
            }
            None => self.model.gmm.log_prob(&mut tape, &bound.gmm, z)?,
        };
        let latent = tape.sum(latent)?;
        let prior = self.model.gmm.prior_log_prob(&mut tape, &bound.gmm)?;

        let prior_weight = match self.config.prior_weighting {
            PriorWeighting::PerEpoch => rows.len() as f64 / self.data.n_samples() as f64,
            PriorWeighting::PerBatch => 1.0,
            PriorWeighting::PerSample => rows.len() as f64,
        };
        let weighted_prior = tape.scale(prior, -prior_weight)?;
        let loss = tape.sub(recon, latent)?;
        let loss = tape.add(loss, weighted_prior)?;
        Ok(BatchLoss {
            tape,
            bound,
            z,
            loss,
            recon,
            latent,
            prior,
            prior_weight,
        })
    }

    /// Runs every batch of the next epoch, stepping decoder and mixture after
    /// each one, and leaves the representation gradients accumulated in
    /// `representations().z.grad()` without applying them.
    pub fn accumulate_epoch(&mut self) -> Result<()> {
        let epoch = self.epoch;
        if self.config.lr_milestone == Some(epoch) {
            let lr = self.optim.decoder.config.lr * self.config.lr_milestone_factor;
            self.optim.decoder.set_lr(lr);
        }
        let n = self.data.n_samples();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut sums = EpochSums::default();

        for (b, rows) in order.chunks(self.config.batch_size).enumerate() {
            let targets = self.data.gather(rows);
            let batch = self.batch_loss(rows, &targets).map_err(|e| match e {
                // Inputs are validated on load, so a domain failure here comes
                // from parameters that have run off.
                Error::NumericDomain { .. } => Error::TrainingDiverged {
                    group: "loss".into(),
                    epoch: Some(epoch),
                    batch: Some(b),
                },
                other => other,
            })?;
            let BatchLoss {
                mut tape,
                bound,
                z,
                loss,
                recon,
                latent,
                prior,
                prior_weight,
            } = batch;

            let (r, l, p) = (
                tape.scalar_value(recon),
                tape.scalar_value(latent),
                tape.scalar_value(prior),
            );
            if !(r + l + p).is_finite() {
                return Err(Error::TrainingDiverged {
                    group: "loss".into(),
                    epoch: Some(epoch),
                    batch: Some(b),
                });
            }
            sums.recon += r;
            sums.latent += l;
            sums.prior += prior_weight * p;

            let grads = tape.backward(loss)?;
            self.model.accumulate_grads(&grads, &bound);
            if let Some(g) = grads.get(z) {
                self.reps.z.scatter_add_grad(rows, g);
            }
            self.optim
                .decoder
                .step(&mut self.model.decoder_params_mut())
                .map_err(|e| Self::tag(e, epoch, Some(b)))?;
            self.optim
                .gmm
                .step(&mut self.model.gmm_params_mut())
                .map_err(|e| Self::tag(e, epoch, Some(b)))?;
            self.model.zero_grad();
        }

        let nf = n as f64;
        let recon = sums.recon / nf;
        let gmm_loss = -(sums.latent + sums.prior) / nf;
        self.history.push(EpochRecord {
            epoch,
            total_loss: recon + gmm_loss,
            recon_loss: recon,
            gmm_loss,
            wall_time_s: self
                .config
                .record_wall_time
                .then(|| self.started.elapsed().as_secs_f64()),
        });
        Ok(())
    }

    /// Applies the accumulated representation gradients and clears them.
    pub fn step_representations(&mut self) -> Result<()> {
        let epoch = self.epoch;
        self.optim
            .representation
            .step(&mut [(&mut self.reps.z, false)])
            .map_err(|e| Self::tag(e, epoch, None))?;
        self.reps.z.zero_grad();
        self.epoch += 1;
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.accumulate_epoch()?;
        self.step_representations()?;
        Ok(self.history.epochs.last().expect("epoch recorded"))
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            model: self.model,
            representations: self.reps,
            history: self.history,
        }
    }
}

/// Trains from scratch with a generator seeded from `config.seed`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = Trainer::new(data, config.clone(), rng)?;
    t.run()?;
    Ok(t.finish())
}
