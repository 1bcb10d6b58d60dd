//! Simulated datasets with known latent structure, for tests and demos.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, Uniform};

use crate::data::{CountMatrix, DenseMatrix, Labels};
use crate::error::{Error, Result};

/// Clustered 2-D latents pushed through a positive linear map to count data.
///
/// Cluster centres sit on a quarter circle of radius `radius` so every latent
/// coordinate, and hence every expected count, is positive. Clusters differ
/// in the relative expression pattern, not just in total depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSimulation {
    pub n_samples: usize,
    pub n_genes: usize,
    pub n_clusters: usize,
    pub radius: f64,
    pub latent_sd: f64,
    /// Negative binomial shape `r`.
    pub dispersion: f64,
    /// Average expected count per gene.
    pub depth: f64,
}

impl Default for CountSimulation {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_genes: 50,
            n_clusters: 4,
            radius: 3.0,
            latent_sd: 0.05,
            dispersion: 2.0,
            depth: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedCounts {
    pub counts: CountMatrix,
    /// Generating cluster of each sample.
    pub clusters: Vec<usize>,
    /// `[N × 2]`
    pub latent: Vec<f64>,
    /// `[K × 2]`
    pub centres: Vec<f64>,
}

fn dist_err(e: impl std::fmt::Display) -> Error {
    Error::NumericDomain {
        op: "simulate",
        detail: e.to_string(),
    }
}

impl CountSimulation {
    pub fn centres(&self) -> Vec<f64> {
        let k = self.n_clusters;
        (0..k)
            .flat_map(|c| {
                let a = if k > 1 {
                    FRAC_PI_2 * c as f64 / (k - 1) as f64
                } else {
                    0.0
                };
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// Expected counts `[N × G]` before noise for latent points `z`, given the
    /// loading matrix `[2 × G]` and gene baselines `[G]`.
    fn means(&self, z: &[f64], w: &[f64], base: &[f64]) -> Vec<f64> {
        let g = self.n_genes;
        z.chunks(2)
            .flat_map(|p| {
                (0..g).map(move |j| base[j] + p[0].max(0.0) * w[j] + p[1].max(0.0) * w[g + j])
            })
            .collect()
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimulatedCounts> {
        if self.n_samples == 0 || self.n_genes == 0 || self.n_clusters == 0 {
            return Err(Error::Contract("simulation sizes must be positive".into()));
        }
        let (n, g, k) = (self.n_samples, self.n_genes, self.n_clusters);
        let centres = self.centres();
        // Each gene follows one latent axis strongly and the other weakly.
        let u = Uniform::new(0.0f64, 1.0).map_err(dist_err)?;
        let mut w = vec![0.0; 2 * g];
        for j in 0..g {
            let (main, other) = if j % 2 == 0 { (0, 1) } else { (1, 0) };
            w[main * g + j] = 0.5 + u.sample(rng);
            w[other * g + j] = 0.02 * u.sample(rng);
        }
        let base: Vec<f64> = (0..g).map(|_| 0.02 + 0.05 * u.sample(rng)).collect();

        let noise = Normal::new(0.0, self.latent_sd).map_err(dist_err)?;
        let clusters: Vec<usize> = (0..n).map(|i| i % k).collect();
        let latent: Vec<f64> = clusters
            .iter()
            .flat_map(|&c| [centres[2 * c], centres[2 * c + 1]])
            .map(|v| v + noise.sample(rng))
            .collect();

        let raw = self.means(&latent, &w, &base);
        let avg = raw.iter().sum::<f64>() / raw.len() as f64;
        let factor = self.depth / avg;
        let shape = self.dispersion;

        let mut triplets = Vec::new();
        for i in 0..n {
            loop {
                let start = triplets.len();
                for j in 0..g {
                    let mu = raw[i * g + j] * factor;
                    let rate = Gamma::new(shape, mu / shape).map_err(dist_err)?.sample(rng);
                    let x = if rate > 0.0 {
                        Poisson::new(rate).map_err(dist_err)?.sample(rng) as u64
                    } else {
                        0
                    };
                    if x > 0 {
                        triplets.push((i, j, x));
                    }
                }
                if triplets.len() > start {
                    break;
                }
            }
        }
        let names: Vec<String> = clusters.iter().map(|c| format!("cluster{c}")).collect();
        let counts = CountMatrix::from_triplets(n, g, &triplets)?
            .with_labels(Labels::from_strings(&names))?;
        Ok(SimulatedCounts {
            counts,
            clusters,
            latent,
            centres,
        })
    }
}

/// Binary data from clustered latents through a random logistic layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinarySimulation {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_clusters: usize,
    pub radius: f64,
    pub latent_sd: f64,
    /// Multiplies the logits; larger means cleaner bits.
    pub gain: f64,
}

impl Default for BinarySimulation {
    fn default() -> Self {
        Self {
            n_samples: 400,
            n_features: 30,
            n_clusters: 3,
            radius: 2.0,
            latent_sd: 0.2,
            gain: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedBinary {
    pub data: DenseMatrix,
    pub clusters: Vec<usize>,
}

impl BinarySimulation {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimulatedBinary> {
        let (n, d, k) = (self.n_samples, self.n_features, self.n_clusters);
        if n == 0 || d == 0 || k == 0 {
            return Err(Error::Contract("simulation sizes must be positive".into()));
        }
        let std = Normal::new(0.0, 1.0).map_err(dist_err)?;
        let noise = Normal::new(0.0, self.latent_sd).map_err(dist_err)?;
        let w: Vec<f64> = (0..2 * d).map(|_| std.sample(rng)).collect();
        let clusters: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut values = Vec::with_capacity(n * d);
        for &c in &clusters {
            let a = std::f64::consts::TAU * c as f64 / k as f64;
            let z = [
                self.radius * a.cos() + noise.sample(rng),
                self.radius * a.sin() + noise.sample(rng),
            ];
            for j in 0..d {
                let logit = self.gain * (z[0] * w[j] + z[1] * w[d + j]);
                let p = 1.0 / (1.0 + (-logit).exp());
                let bit = Bernoulli::new(p).map_err(dist_err)?.sample(rng);
                values.push(if bit { 1.0 } else { 0.0 });
            }
        }
        let names: Vec<String> = clusters.iter().map(|c| format!("class{c}")).collect();
        let data = DenseMatrix::new(n, d, values)?.with_labels(Labels::from_strings(&names))?;
        Ok(SimulatedBinary { data, clusters })
    }
}
