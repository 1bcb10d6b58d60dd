//! Oracles shared by the integration tests. Nothing here calls the code
//! paths it is used to check.
#![allow(dead_code)]

use dgd::autodiff::{DiffArray, Tape};
use dgd::data::BatchTargets;
use dgd::decoder::{Activation, DecoderNet};
use dgd::gmm::{GaussianMixture, GmmInit};
use dgd::likelihood::NegativeBinomialHead;
use dgd::model::{DgdModel, Profile};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Which part of the objective a gradient check differentiates.
#[derive(Debug, Clone)]
pub enum Term {
    /// Decoder forward plus the profile's reconstruction loss.
    Recon,
    /// Mixture log density of the representations.
    GmmLogProb,
    /// Log prior of the mixture parameters.
    Prior,
    /// Assigned-component log density.
    Supervised(Vec<usize>),
}

/// Scalar value of `term`, and optionally all gradients: parameters in the
/// order decoder, head, mixture, then `z`.
fn evaluate(
    model: &DgdModel,
    z: &[f64],
    targets: &BatchTargets,
    term: &Term,
    grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let m = model.latent_dim();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let zv = tape.leaf_values(&[z.len() / m, m], z.to_vec()).unwrap();
    let out = match term {
        Term::Recon => {
            let pred = model
                .decoder
                .forward(&mut tape, &bound.decoder, zv)
                .unwrap();
            let r = model
                .recon_per_sample(&mut tape, &bound, pred, targets)
                .unwrap();
            tape.sum(r).unwrap()
        }
        Term::GmmLogProb => {
            let lp = model.gmm.log_prob(&mut tape, &bound.gmm, zv).unwrap();
            tape.sum(lp).unwrap()
        }
        Term::Prior => model.gmm.prior_log_prob(&mut tape, &bound.gmm).unwrap(),
        Term::Supervised(a) => {
            let lp = model
                .gmm
                .supervised_log_prob(&mut tape, &bound.gmm, zv, a)
                .unwrap();
            tape.sum(lp).unwrap()
        }
    };
    let value = tape.scalar_value(out);
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(out).unwrap();
    let mut sink = model.clone();
    sink.zero_grad();
    sink.accumulate_grads(&g, &bound);
    let mut all: Vec<Vec<f64>> = param_arrays(&mut sink)
        .into_iter()
        .map(|p| p.grad().to_vec())
        .collect();
    all.push(
        g.get(zv)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; z.len()]),
    );
    (value, all)
}

/// Every parameter array: decoder layers, dispersion head, then mixture.
fn param_arrays(model: &mut DgdModel) -> Vec<&mut DiffArray> {
    let mut v: Vec<&mut DiffArray> = model
        .decoder
        .params_mut()
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    if let Some(h) = model.head.as_mut() {
        v.push(&mut h.log_dispersion);
    }
    v.extend(model.gmm.params_mut());
    v
}

fn perturbed(model: &DgdModel, group: usize, idx: usize, delta: f64) -> DgdModel {
    let mut c = model.clone();
    param_arrays(&mut c)[group].values_mut()[idx] += delta;
    c
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest elementwise relative error between backward gradients and
/// central differences over every parameter and every entry of `z`.
pub fn max_grad_error(model: &DgdModel, z: &[f64], targets: &BatchTargets, term: &Term) -> f64 {
    let (_, analytic) = evaluate(model, z, targets, term, true);
    let f = |m: &DgdModel, z: &[f64]| evaluate(m, z, targets, term, false).0;
    let mut worst = 0.0f64;
    let n_param_groups = analytic.len() - 1;
    for (g, grad) in analytic.iter().enumerate().take(n_param_groups) {
        for (i, &a) in grad.iter().enumerate() {
            let up = f(&perturbed(model, g, i, FD_STEP), z);
            let down = f(&perturbed(model, g, i, -FD_STEP), z);
            worst = worst.max(rel_error(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    let zg = &analytic[n_param_groups];
    for (i, &a) in zg.iter().enumerate() {
        let mut zp = z.to_vec();
        zp[i] += FD_STEP;
        let up = f(model, &zp);
        zp[i] -= 2.0 * FD_STEP;
        let down = f(model, &zp);
        worst = worst.max(rel_error(a, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// A small random model of either profile with non-trivial mixture state.
pub fn random_model(profile: Profile, n_out: usize, rng: &mut ChaCha8Rng) -> DgdModel {
    let (m, k) = (2, 3);
    let decoder = DecoderNet::new(&[m, 4, n_out], Activation::Relu, rng).unwrap();
    let init = GmmInit {
        dirichlet_alpha: 1.0 + rng.random::<f64>(),
        sigma: Some(0.5),
        ..GmmInit::default()
    };
    let mut gmm = GaussianMixture::new(k, m, &init, rng).unwrap();
    for v in gmm.neg_log_var.values_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    for v in gmm.coefficients.values_mut() {
        *v += rng.random_range(-1.0..1.0);
    }
    let head = match profile {
        Profile::Counts => {
            let mut h = NegativeBinomialHead::new(n_out);
            for v in h.log_dispersion.values_mut() {
                *v = rng.random_range(-1.0..2.0);
            }
            Some(h)
        }
        Profile::Binary => None,
    };
    DgdModel::new(decoder, gmm, head, profile).unwrap()
}

pub fn random_targets(
    profile: Profile,
    b: usize,
    n_out: usize,
    rng: &mut ChaCha8Rng,
) -> BatchTargets {
    match profile {
        Profile::Binary => BatchTargets {
            values: (0..b * n_out).map(|_| rng.random::<f64>()).collect(),
            scale: None,
        },
        Profile::Counts => {
            let values: Vec<f64> = (0..b * n_out)
                .map(|_| rng.random_range(0..12) as f64)
                .collect();
            let scale = values
                .chunks(n_out)
                .map(|r| r.iter().copied().fold(1.0, f64::max))
                .collect();
            BatchTargets {
                values,
                scale: Some(scale),
            }
        }
    }
}

/// ARI straight from the Hubert–Arabie pair definition, O(N²).
pub fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += (sa && sb) as u64;
            in_a += sa as u64;
            in_b += sb as u64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let expected = in_a as f64 * in_b as f64 / pairs;
    let max = 0.5 * (in_a + in_b) as f64;
    if max == expected {
        return 1.0;
    }
    (both as f64 - expected) / (max - expected)
}

/// Per-component `log w + log N(z)` computed directly from the mixture's
/// stored parameters.
pub fn brute_force_joint(gmm: &GaussianMixture, z: &[f64]) -> Vec<f64> {
    let (k, m) = (gmm.n_components(), gmm.dim());
    let c = gmm.coefficients.values();
    let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = cmax + c.iter().map(|v| (v - cmax).exp()).sum::<f64>().ln();
    let mu = gmm.means.values();
    let nlv = gmm.neg_log_var.values();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let mut lp = c[j] - lse;
        for d in 0..m {
            let var = (-nlv[j * m + d]).exp();
            let diff = z[d] - mu[j * m + d];
            lp += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - diff * diff / (2.0 * var);
        }
        out.push(lp);
    }
    out
}

pub fn brute_force_density(gmm: &GaussianMixture, z: &[f64]) -> f64 {
    brute_force_joint(gmm, z).iter().map(|v| v.exp()).sum()
}

/// Relabels `labels` by the majority true class within each predicted group.
pub fn majority_map(pred: &[usize], truth: &[usize], k: usize, classes: usize) -> Vec<usize> {
    let mut counts = vec![vec![0usize; classes]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    counts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(i, _)| i)
        })
        .collect()
}
