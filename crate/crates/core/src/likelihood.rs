//! Reconstruction likelihoods: Bernoulli (binary cross-entropy) for values in
//! `[0, 1]` and negative binomial with a learned per-feature dispersion for
//! counts.
//!
//! The negative binomial is parameterised by mean `μ` and dispersion `r`:
//!
//! ```text
//! log p(x) = lnΓ(x+r) − lnΓ(r) − lnΓ(x+1) + r·ln(r/(r+μ)) + x·ln(μ/(r+μ))
//! ```
//!
//! Decoder outputs live in `(0, 1)`; the mean for sample `i` is the output
//! times the sample's scaling constant (its largest count).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{DiffArray, Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Floor applied to arguments of `log`.
pub const LOG_FLOOR: f64 = 1e-10;

fn check_same_len(op: &'static str, tape: &Tape, pred: Var, n: usize) -> Result<()> {
    if tape.value(pred).len() != n {
        return Err(Error::dim(op, tape.shape(pred), &[n]));
    }
    Ok(())
}

/// Elementwise `−[t·log p + (1−t)·log(1−p)]`, same shape as `pred`.
pub fn bce_elementwise(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    check_same_len("bce_loss", tape, pred, target.len())?;
    if let Some(bad) = target.iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Contract(format!("BCE target {bad} outside [0, 1]")));
    }
    let shape = tape.shape(pred).to_vec();
    let t = tape.constant(&shape, target.to_vec())?;
    let one_minus_t = tape.constant(&shape, target.iter().map(|t| 1.0 - t).collect())?;

    let p = tape.clamp(pred, LOG_FLOOR, f64::INFINITY)?;
    let log_p = tape.log(p)?;
    let q = tape.neg(pred)?;
    let q = tape.offset(q, 1.0)?;
    let q = tape.clamp(q, LOG_FLOOR, f64::INFINITY)?;
    let log_q = tape.log(q)?;

    let a = tape.mul(t, log_p)?;
    let b = tape.mul(one_minus_t, log_q)?;
    let ll = tape.add(a, b)?;
    tape.neg(ll)
}

/// Summed binary cross-entropy.
pub fn bce_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let e = bce_elementwise(tape, pred, target)?;
    tape.sum(e)
}

/// Binary cross-entropy of one prediction.
pub fn bce_value(p: f64, t: f64) -> f64 {
    -(t * p.max(LOG_FLOOR).ln() + (1.0 - t) * (1.0 - p).max(LOG_FLOOR).ln())
}

/// Gene-wise dispersion of the negative binomial, learned in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeBinomialHead {
    pub log_dispersion: DiffArray,
}

impl NegativeBinomialHead {
    /// Dispersion initialised to 1 for every feature.
    pub fn new(n_features: usize) -> Self {
        Self {
            log_dispersion: DiffArray::zeros(&[n_features]),
        }
    }

    pub fn from_log_dispersion(log_dispersion: DiffArray) -> Result<Self> {
        if log_dispersion.shape().len() != 1 {
            return Err(Error::dim(
                "NegativeBinomialHead",
                log_dispersion.shape(),
                &[],
            ));
        }
        Ok(Self { log_dispersion })
    }

    pub fn n_features(&self) -> usize {
        self.log_dispersion.len()
    }

    pub fn dispersion(&self) -> Vec<f64> {
        self.log_dispersion
            .values()
            .iter()
            .map(|v| v.exp())
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.leaf(&self.log_dispersion)
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Var {
        tape.frozen(&self.log_dispersion)
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: Var) {
        grads.accumulate_into(bound, &mut self.log_dispersion);
    }
}

fn check_counts_and_scale(counts: &[f64], scale: &[f64]) -> Result<()> {
    if let Some((i, s)) = scale.iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
        return Err(Error::Data(format!(
            "sample {i} has scaling constant {s}; samples need at least one count"
        )));
    }
    if let Some(bad) = counts.iter().find(|&&x| !(x >= 0.0) || x.fract() != 0.0) {
        return Err(Error::Data(format!(
            "count {bad} is not a nonnegative integer"
        )));
    }
    Ok(())
}

/// Elementwise negative NB log-pmf, `[B × G]`.
///
/// `pred` is `[B × G]` in normalised space, `scale` holds one constant per
/// row and `log_dispersion` is `[G]`.
pub fn nb_neg_log_pmf(
    tape: &mut Tape,
    pred: Var,
    counts: &[f64],
    scale: &[f64],
    log_dispersion: Var,
) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if shape.len() != 2 || shape[0] != scale.len() {
        return Err(Error::dim("nb_log_likelihood", &shape, &[scale.len()]));
    }
    if tape.shape(log_dispersion) != [shape[1]] {
        return Err(Error::dim(
            "nb_log_likelihood",
            &shape,
            tape.shape(log_dispersion),
        ));
    }
    check_same_len("nb_log_likelihood", tape, pred, counts.len())?;
    check_counts_and_scale(counts, scale)?;

    let b = shape[0];
    let s = tape.constant(&[b, 1], scale.to_vec())?;
    let mu = tape.mul(pred, s)?;
    let x = tape.constant(&shape, counts.to_vec())?;
    let ln_x_fact = tape.constant(&shape, counts.iter().map(|&c| ln_gamma(c + 1.0)).collect())?;

    let r = tape.exp(log_dispersion)?;
    let x_plus_r = tape.add(x, r)?;
    let lg_xr = tape.ln_gamma(x_plus_r)?;
    let lg_r = tape.ln_gamma(r)?;

    let r_plus_mu = tape.add(r, mu)?;
    let r_plus_mu = tape.clamp(r_plus_mu, LOG_FLOOR, f64::INFINITY)?;
    let log_r_plus_mu = tape.log(r_plus_mu)?;
    let mu_c = tape.clamp(mu, LOG_FLOOR, f64::INFINITY)?;
    let log_mu = tape.log(mu_c)?;

    // r·(log r − log(r+μ))
    let t1 = tape.sub(log_dispersion, log_r_plus_mu)?;
    let t1 = tape.mul(r, t1)?;
    // x·(log μ − log(r+μ))
    let t2 = tape.sub(log_mu, log_r_plus_mu)?;
    let t2 = tape.mul(x, t2)?;

    let ll = tape.sub(lg_xr, lg_r)?;
    let ll = tape.sub(ll, ln_x_fact)?;
    let ll = tape.add(ll, t1)?;
    let ll = tape.add(ll, t2)?;
    tape.neg(ll)
}

/// Negative NB log-likelihood summed over the batch and features.
pub fn nb_loss(
    tape: &mut Tape,
    pred: Var,
    counts: &[f64],
    scale: &[f64],
    log_dispersion: Var,
) -> Result<Var> {
    let e = nb_neg_log_pmf(tape, pred, counts, scale, log_dispersion)?;
    tape.sum(e)
}

/// NB log-pmf of a single count.
pub fn nb_log_pmf(x: f64, mu: f64, r: f64) -> f64 {
    let mu = mu.max(LOG_FLOOR);
    let mut lp = ln_gamma(x + r) - ln_gamma(r) - ln_gamma(x + 1.0) - r * (mu / r).ln_1p();
    if x > 0.0 {
        lp += x * (mu.ln() - (r + mu).ln());
    }
    lp
}

/// Space in which reconstruction RMSE is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmseSpace {
    /// Counts against predicted means `pred · scale`.
    Raw,
    /// Decoder outputs against `counts / scale`.
    #[default]
    Normalized,
}

impl std::str::FromStr for RmseSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(RmseSpace::Raw),
            "normalized" | "normalised" => Ok(RmseSpace::Normalized),
            other => Err(Error::Contract(format!("unknown rmse space '{other}'"))),
        }
    }
}

/// Per-sample reconstruction metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMetrics {
    pub nll_per_sample: Vec<f64>,
    pub rmse_per_sample: Vec<f64>,
    /// Root of the mean squared error over all samples.
    pub rmse: f64,
}

fn finish_rmse(sq_err_per_sample: Vec<f64>) -> (Vec<f64>, f64) {
    let n = sq_err_per_sample.len().max(1) as f64;
    let overall = (sq_err_per_sample.iter().sum::<f64>() / n).sqrt();
    (
        sq_err_per_sample.into_iter().map(f64::sqrt).collect(),
        overall,
    )
}

/// NB negative log-likelihood and RMSE per sample for frozen predictions.
pub fn nb_point_metrics(
    pred: &[f64],
    counts: &[f64],
    scale: &[f64],
    dispersion: &[f64],
    space: RmseSpace,
) -> Result<PointMetrics> {
    let g = dispersion.len();
    if pred.len() != counts.len() || pred.len() != scale.len() * g {
        return Err(Error::dim(
            "nb_point_metrics",
            &[pred.len(), counts.len()],
            &[scale.len(), g],
        ));
    }
    check_counts_and_scale(counts, scale)?;
    let mut nll = Vec::with_capacity(scale.len());
    let mut mse = Vec::with_capacity(scale.len());
    for (i, &s) in scale.iter().enumerate() {
        let p = &pred[i * g..(i + 1) * g];
        let x = &counts[i * g..(i + 1) * g];
        let mut acc = 0.0;
        let mut se = 0.0;
        for j in 0..g {
            acc -= nb_log_pmf(x[j], p[j] * s, dispersion[j]);
            let e = match space {
                RmseSpace::Normalized => p[j] - x[j] / s,
                RmseSpace::Raw => p[j] * s - x[j],
            };
            se += e * e;
        }
        nll.push(acc);
        mse.push(se / g.max(1) as f64);
    }
    let (rmse_per_sample, rmse) = finish_rmse(mse);
    Ok(PointMetrics {
        nll_per_sample: nll,
        rmse_per_sample,
        rmse,
    })
}

/// Summed BCE and RMSE per sample.
pub fn bce_point_metrics(pred: &[f64], target: &[f64], n_features: usize) -> Result<PointMetrics> {
    if pred.len() != target.len() || n_features == 0 || !pred.len().is_multiple_of(n_features) {
        return Err(Error::dim(
            "bce_point_metrics",
            &[pred.len()],
            &[target.len(), n_features],
        ));
    }
    let mut nll = Vec::new();
    let mut mse = Vec::new();
    for (p, t) in pred.chunks(n_features).zip(target.chunks(n_features)) {
        nll.push(p.iter().zip(t).map(|(&a, &b)| bce_value(a, b)).sum());
        mse.push(p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n_features as f64);
    }
    let (rmse_per_sample, rmse) = finish_rmse(mse);
    Ok(PointMetrics {
        nll_per_sample: nll,
        rmse_per_sample,
        rmse,
    })
}
