use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffArray, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::model::DgdModel;
use crate::optim::{AdamConfig, AdamState};

/// Starting point for new representations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// The component mean whose decoding reconstructs the sample best.
    #[default]
    ComponentMeans,
    Zeros,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component-means" | "means" => Ok(InitMode::ComponentMeans),
            "zeros" | "zero" => Ok(InitMode::Zeros),
            other => Err(Error::Contract(format!("unknown init mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub init: InitMode,
    /// Independent starts per sample; the one with the lowest final objective
    /// is kept.
    pub n_starts: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            init: InitMode::ComponentMeans,
            n_starts: 1,
            lr: 1e-2,
            beta1: 0.5,
            beta2: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    /// `[M × m]`
    pub z: DiffArray,
    /// Component chosen for each sample's first start (component-means mode).
    pub init_component: Option<Vec<usize>>,
    /// Final `recon − log p(z)` per sample.
    pub objective: Vec<f64>,
}

/// Reconstruction loss of every sample under every decoded component mean,
/// `[M × K]`. Each mean is decoded once.
fn loss_per_component(model: &DgdModel, data: &Dataset) -> Result<Vec<f64>> {
    let (k, n) = (model.n_components(), model.n_outputs());
    let decoded = model.decoder.decode(model.gmm.means.values())?;
    let rows = data.n_samples();
    let mut out = vec![0.0; rows * k];
    let all: Vec<usize> = (0..rows).collect();
    for chunk in all.chunks(256) {
        let targets = data.gather(chunk);
        for c in 0..k {
            let mean_out = &decoded[c * n..(c + 1) * n];
            let pred: Vec<f64> = (0..chunk.len())
                .flat_map(|_| mean_out.iter().copied())
                .collect();
            let loss = model.recon_loss_values(&pred, &targets)?;
            for (j, &r) in chunk.iter().enumerate() {
                out[r * k + c] = loss[j];
            }
        }
    }
    Ok(out)
}

/// Per-sample objective `recon − log p(z)` under the frozen model.
fn objective(model: &DgdModel, data: &Dataset, z: &[f64]) -> Result<Vec<f64>> {
    let m = model.latent_dim();
    let rows = data.n_samples();
    let mut out = Vec::with_capacity(rows);
    let all: Vec<usize> = (0..rows).collect();
    for chunk in all.chunks(256) {
        let zc: Vec<f64> = chunk
            .iter()
            .flat_map(|&r| z[r * m..(r + 1) * m].iter().copied())
            .collect();
        let pred = model.decoder.decode(&zc)?;
        let recon = model.recon_loss_values(&pred, &data.gather(chunk))?;
        let lp = model.gmm.log_prob_values(&zc)?;
        out.extend(recon.iter().zip(&lp).map(|(r, l)| r - l));
    }
    Ok(out)
}

fn optimise<R: Rng + ?Sized>(
    model: &DgdModel,
    data: &Dataset,
    config: &InferConfig,
    z: &mut DiffArray,
    rng: &mut R,
) -> Result<()> {
    let m = model.latent_dim();
    let n = data.n_samples();
    let mut adam = AdamState::new(
        "representation",
        AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    );
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for rows in order.chunks(config.batch_size) {
            let targets = data.gather(rows);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let zv = tape.leaf_values(&[rows.len(), m], z.gather_rows(rows))?;
            let pred = model.decoder.forward(&mut tape, &bound.decoder, zv)?;
            let recon = model.recon_per_sample(&mut tape, &bound, pred, &targets)?;
            let recon = tape.sum(recon)?;
            let lp = model.gmm.log_prob(&mut tape, &bound.gmm, zv)?;
            let lp = tape.sum(lp)?;
            let loss = tape.sub(recon, lp)?;
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::TrainingDiverged {
                    group: "representation".into(),
                    epoch: Some(epoch),
                    batch: None,
                });
            }
            let grads = tape.backward(loss)?;
            if let Some(g) = grads.get(zv) {
                z.scatter_add_grad(rows, g);
            }
        }
        adam.step(&mut [(&mut *z, false)]).map_err(|e| match e {
            Error::TrainingDiverged { group, .. } => Error::TrainingDiverged {
                group,
                epoch: Some(epoch),
                batch: None,
            },
            other => other,
        })?;
        z.zero_grad();
    }
    Ok(())
}

/// Fits representations for new data with decoder and mixture held fixed.
pub fn infer_representations<R: Rng + ?Sized>(
    model: &DgdModel,
    data: &Dataset,
    config: &InferConfig,
    rng: &mut R,
) -> Result<Inferred> {
    if data.n_features() != model.n_outputs() {
        return Err(Error::dim(
            "infer_representations",
            &[data.n_features()],
            &[model.n_outputs()],
        ));
    }
    if config.batch_size == 0 || config.n_starts == 0 {
        return Err(Error::Contract(
            "batch size and starts must be positive".into(),
        ));
    }
    let (rows, m, k) = (data.n_samples(), model.latent_dim(), model.n_components());
    let means = model.gmm.means.values();

    // Starting points per start: component ranks or mixture draws.
    let ranking: Option<Vec<Vec<usize>>> = match config.init {
        InitMode::ComponentMeans => {
            let losses = loss_per_component(model, data)?;
            Some(
                losses
                    .chunks(k)
                    .map(|row| {
                        let mut idx: Vec<usize> = (0..k).collect();
                        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                        idx
                    })
                    .collect(),
            )
        }
        InitMode::Zeros => None,
    };

    let mut best: Option<(DiffArray, Vec<f64>)> = None;
    for s in 0..config.n_starts {
        let values = match (&ranking, config.init) {
            (Some(rank), _) if s < k => rank
                .iter()
                .flat_map(|r| means[r[s] * m..(r[s] + 1) * m].iter().copied())
                .collect(),
            (_, InitMode::Zeros) if s == 0 => vec![0.0; rows * m],
            _ => model.gmm.sample(rows, rng, None)?,
        };
        let mut z = DiffArray::new(&[rows, m], values)?;
        optimise(model, data, config, &mut z, rng)?;
        let obj = objective(model, data, z.values())?;
        best = Some(match best {
            None => (z, obj),
            Some((mut bz, mut bo)) => {
                for i in 0..rows {
                    if obj[i] < bo[i] {
                        bo[i] = obj[i];
                        bz.row_mut(i).copy_from_slice(z.row(i));
                    }
                }
                (bz, bo)
            }
        });
    }
    let (z, objective) = best.expect("at least one start");
    Ok(Inferred {
        z,
        init_component: ranking.map(|r| r.iter().map(|row| row[0]).collect()),
        objective,
    })
}

/// Component of maximal posterior responsibility for each row of `z`.
pub fn hard_cluster(gmm: &GaussianMixture, z: &[f64]) -> Result<Vec<usize>> {
    gmm.hard_assign(z)
}
