use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{SoftballPrior, HALF_LN_2PI};
use crate::autodiff::{Axis, DiffArray, Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Hyperparameters of the priors on the mixture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    /// Symmetric Dirichlet concentration on the component weights.
    pub dirichlet_alpha: f64,
    /// Mean of the Gaussian prior on each negative log-variance, `−2·log σ`.
    pub logvar_prior_mean: f64,
    pub logvar_prior_sd: f64,
    /// Prior on the component means.
    pub softball: SoftballPrior,
}

/// Initialisation settings for a fresh mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmInit {
    pub scale: f64,
    pub sharpness: f64,
    pub dirichlet_alpha: f64,
    /// Component standard deviation at initialisation; `None` means
    /// `0.2 · scale / K`.
    pub sigma: Option<f64>,
    pub logvar_prior_sd: f64,
}

impl Default for GmmInit {
    fn default() -> Self {
        Self {
            scale: 1.0,
            sharpness: 1.0,
            dirichlet_alpha: 1.0,
            sigma: None,
            logvar_prior_sd: 1.0,
        }
    }
}

impl GmmInit {
    pub fn sigma_for(&self, k: usize) -> f64 {
        self.sigma.unwrap_or(0.2 * self.scale / k as f64)
    }
}

/// Diagonal-covariance Gaussian mixture with learnable means, negative
/// log-variances and pre-softmax mixture coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    /// `[K × m]`
    pub means: DiffArray,
    /// `[K × m]`, the log precision of each dimension.
    pub neg_log_var: DiffArray,
    /// `[K]`, mapped to weights by softmax.
    pub coefficients: DiffArray,
    pub prior: MixturePrior,
}

/// Tape handles for the three parameter blocks of a mixture.
#[derive(Debug, Clone, Copy)]
pub struct BoundMixture {
    pub means: Var,
    pub neg_log_var: Var,
    pub coefficients: Var,
}

impl GaussianMixture {
    /// Means drawn from the softball prior, coefficients all 1, negative
    /// log-variances at `−2·log σ`.
    pub fn new<R: Rng + ?Sized>(
        n_components: usize,
        dim: usize,
        init: &GmmInit,
        rng: &mut R,
    ) -> Result<Self> {
        if n_components == 0 {
            return Err(Error::Contract(
                "mixture needs at least one component".into(),
            ));
        }
        let softball = SoftballPrior::new(dim, init.scale, init.sharpness)?;
        let sigma = init.sigma_for(n_components);
        if !(sigma > 0.0) {
            return Err(Error::Contract(format!("component sd {sigma} must be > 0")));
        }
        if !(init.dirichlet_alpha > 0.0) || !(init.logvar_prior_sd > 0.0) {
            return Err(Error::Contract(
                "dirichlet alpha and log-variance prior sd must be > 0".into(),
            ));
        }
        let nlv0 = -2.0 * sigma.ln();
        let means = DiffArray::new(&[n_components, dim], softball.sample(n_components, rng))?;
        Ok(Self {
            means,
            neg_log_var: DiffArray::filled(&[n_components, dim], nlv0),
            coefficients: DiffArray::filled(&[n_components], 1.0),
            prior: MixturePrior {
                dirichlet_alpha: init.dirichlet_alpha,
                logvar_prior_mean: nlv0,
                logvar_prior_sd: init.logvar_prior_sd,
                softball,
            },
        })
    }

    pub fn from_parts(
        means: DiffArray,
        neg_log_var: DiffArray,
        coefficients: DiffArray,
        prior: MixturePrior,
    ) -> Result<Self> {
        let s = means.shape().to_vec();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::dim("GaussianMixture", &s, &[]));
        }
        if neg_log_var.shape() != s.as_slice() {
            return Err(Error::dim("GaussianMixture", &s, neg_log_var.shape()));
        }
        if coefficients.shape() != [s[0]] {
            return Err(Error::dim("GaussianMixture", &s, coefficients.shape()));
        }
        if prior.softball.dim != s[1] {
            return Err(Error::dim("GaussianMixture", &s, &[prior.softball.dim]));
        }
        Ok(Self {
            means,
            neg_log_var,
            coefficients,
            prior,
        })
    }

    pub fn n_components(&self) -> usize {
        self.means.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.means.shape()[1]
    }

    /// Component weights `softmax(coefficients)`.
    pub fn weights(&self) -> Vec<f64> {
        let c = self.coefficients.values();
        let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = c.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    /// Per-dimension variances `exp(−neg_log_var)`, `[K × m]`.
    pub fn variances(&self) -> Vec<f64> {
        self.neg_log_var
            .values()
            .iter()
            .map(|v| (-v).exp())
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMixture {
        BoundMixture {
            means: tape.leaf(&self.means),
            neg_log_var: tape.leaf(&self.neg_log_var),
            coefficients: tape.leaf(&self.coefficients),
        }
    }

    /// Binds the parameters as constants; nothing flows back into them.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMixture {
        BoundMixture {
            means: tape.frozen(&self.means),
            neg_log_var: tape.frozen(&self.neg_log_var),
            coefficients: tape.frozen(&self.coefficients),
        }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundMixture) {
        grads.accumulate_into(bound.means, &mut self.means);
        grads.accumulate_into(bound.neg_log_var, &mut self.neg_log_var);
        grads.accumulate_into(bound.coefficients, &mut self.coefficients);
    }

    pub fn params_mut(&mut self) -> [&mut DiffArray; 3] {
        [
            &mut self.means,
            &mut self.neg_log_var,
            &mut self.coefficients,
        ]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(DiffArray::zero_grad);
    }

    /// `log wᵏ + log N(z | μᵏ, Σᵏ)` for every row and component, `[B × K]`.
    pub fn component_log_joint(
        &self,
        tape: &mut Tape,
        bound: &BoundMixture,
        z: Var,
    ) -> Result<Var> {
        let (k, m) = (self.n_components(), self.dim());
        let zs = tape.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != m {
            return Err(Error::dim("gmm_log_prob", &zs, &[k, m]));
        }
        let b = zs[0];
        let z3 = tape.reshape(z, &[b, 1, m])?;
        let diff = tape.sub(z3, bound.means)?;
        let sq = tape.square(diff)?;
        let precision = tape.exp(bound.neg_log_var)?;
        let weighted = tape.mul(sq, precision)?;
        let quad = tape.sum_axis(weighted, 2)?;
        let quad = tape.scale(quad, -0.5)?;

        let log_det = tape.sum_axis(bound.neg_log_var, 1)?;
        let log_det = tape.scale(log_det, 0.5)?;
        let log_w = tape.log_softmax(bound.coefficients)?;
        let per_component = tape.add(log_det, log_w)?;
        let per_component = tape.offset(per_component, -(m as f64) * HALF_LN_2PI)?;
        tape.add(quad, per_component)
    }

    /// Mixture log density of each row of `z`, `[B]`.
    pub fn log_prob(&self, tape: &mut Tape, bound: &BoundMixture, z: Var) -> Result<Var> {
        let joint = self.component_log_joint(tape, bound, z)?;
        tape.logsumexp(joint, Axis::Dim(1))
    }

    /// `log wᵏ + log N(z | μᵏ, Σᵏ)` for the assigned component of each row
    /// only; other components get no gradient from this term.
    pub fn supervised_log_prob(
        &self,
        tape: &mut Tape,
        bound: &BoundMixture,
        z: Var,
        assigned: &[usize],
    ) -> Result<Var> {
        let joint = self.component_log_joint(tape, bound, z)?;
        tape.select_last(joint, assigned)
    }

    /// Log prior density of the mixture parameters: softball on means,
    /// Dirichlet on weights and Gaussian on negative log-variances.
    pub fn prior_log_prob(&self, tape: &mut Tape, bound: &BoundMixture) -> Result<Var> {
        let k = self.n_components() as f64;
        let p = &self.prior;

        let means_lp = p.softball.log_prob(tape, bound.means)?;

        let alpha = p.dirichlet_alpha;
        let log_w = tape.log_softmax(bound.coefficients)?;
        let sum_log_w = tape.sum(log_w)?;
        let dir = tape.scale(sum_log_w, alpha - 1.0)?;
        let dir = tape.offset(dir, ln_gamma(k * alpha) - k * ln_gamma(alpha))?;

        let centred = tape.offset(bound.neg_log_var, -p.logvar_prior_mean)?;
        let sq = tape.square(centred)?;
        let sq_sum = tape.sum(sq)?;
        let n = self.neg_log_var.len() as f64;
        let lv = tape.scale(sq_sum, -0.5 / (p.logvar_prior_sd * p.logvar_prior_sd))?;
        let lv = tape.offset(lv, -n * (HALF_LN_2PI + p.logvar_prior_sd.ln()))?;

        let total = tape.add(means_lp, dir)?;
        tape.add(total, lv)
    }

    fn joint_values(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim();
        if !z.len().is_multiple_of(m) {
            return Err(Error::dim("gmm_log_prob", &[z.len()], &[m]));
        }
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let zv = tape.constant(&[z.len() / m, m], z.to_vec())?;
        let j = self.component_log_joint(&mut tape, &bound, zv)?;
        Ok(tape.value(j).to_vec())
    }

    /// Mixture log density of each row of a plain `[B × m]` buffer.
    pub fn log_prob_values(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim();
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let zv = tape.constant(&[z.len() / m, m], z.to_vec())?;
        let lp = self.log_prob(&mut tape, &bound, zv)?;
        Ok(tape.value(lp).to_vec())
    }

    /// Responsibilities `p(k | z)`, `[B × K]`, rows summing to one.
    pub fn component_posteriors(&self, z: &[f64]) -> Result<Vec<f64>> {
        let k = self.n_components();
        let mut joint = self.joint_values(z)?;
        for row in joint.chunks_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        Ok(joint)
    }

    /// Most probable component per row; ties go to the lowest index.
    pub fn hard_assign(&self, z: &[f64]) -> Result<Vec<usize>> {
        let k = self.n_components();
        let joint = self.joint_values(z)?;
        Ok(joint.chunks(k).map(argmax_first).collect())
    }

    /// Draws `n` latent points, from one component if given, otherwise from
    /// the mixture. Returned row-major as `[n × m]`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        component: Option<usize>,
    ) -> Result<Vec<f64>> {
        let (k, m) = (self.n_components(), self.dim());
        if let Some(c) = component {
            if c >= k {
                return Err(Error::Index {
                    what: "mixture component",
                    index: c,
                    limit: k,
                });
            }
        }
        let picker = WeightedIndex::new(self.weights()).map_err(|e| Error::NumericDomain {
            op: "gmm_sample",
            detail: e.to_string(),
        })?;
        let sd: Vec<f64> = self.variances().iter().map(|v| v.sqrt()).collect();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            let c = component.unwrap_or_else(|| picker.sample(rng));
            for d in 0..m {
                let e: f64 = StandardNormal.sample(rng);
                out.push(self.means.values()[c * m + d] + sd[c * m + d] * e);
            }
        }
        Ok(out)
    }
}

pub(crate) fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
