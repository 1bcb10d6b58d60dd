use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Mollified uniform distribution on an m-ball, used as the prior on mixture
/// means.
///
/// The density is `exp(A) / (1 + exp(sharpness·(‖μ‖/scale − 1)))` where `A`
/// is minus the log-volume of the ball of radius `scale`. As `sharpness`
/// grows this tends to the uniform distribution on the ball; for finite
/// sharpness the normaliser is only approximate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftballPrior {
    pub dim: usize,
    pub scale: f64,
    pub sharpness: f64,
}

impl SoftballPrior {
    pub fn new(dim: usize, scale: f64, sharpness: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("softball dimension must be >= 1".into()));
        }
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Contract(format!(
                "softball scale {scale} must be >= 0"
            )));
        }
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::Contract(format!(
                "softball sharpness {sharpness} must be > 0"
            )));
        }
        Ok(Self {
            dim,
            scale,
            sharpness,
        })
    }

    /// `log Γ(1 + m/2) − m·(log scale + ½ log π)`.
    pub fn log_normalizer(&self) -> f64 {
        let m = self.dim as f64;
        ln_gamma(1.0 + 0.5 * m) - m * (self.scale.ln() + 0.5 * std::f64::consts::PI.ln())
    }

    /// Draws `count` points uniformly from the ball of radius `scale`,
    /// returned row-major as `[count × dim]`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let m = self.dim;
        let mut out = Vec::with_capacity(count * m);
        let mut u = vec![0.0; m];
        for _ in 0..count {
            let norm = loop {
                for x in u.iter_mut() {
                    *x = StandardNormal.sample(rng);
                }
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    break n;
                }
            };
            let radius: f64 = rng.random::<f64>().powf(1.0 / m as f64);
            out.extend(u.iter().map(|x| self.scale * radius * x / norm));
        }
        out
    }

    /// Per-row log density of `mu` (`[K × dim]`), shape `[K]`.
    pub fn log_prob_rows(&self, tape: &mut Tape, mu: Var) -> Result<Var> {
        let shape = tape.shape(mu);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::dim("softball_log_prob", shape, &[self.dim]));
        }
        let norm = tape.row_norm(mu)?;
        let arg = tape.scale(norm, self.sharpness / self.scale)?;
        let arg = tape.offset(arg, -self.sharpness)?;
        let sp = tape.softplus(arg)?;
        let neg = tape.neg(sp)?;
        tape.offset(neg, self.log_normalizer())
    }

    /// Summed log density over all rows of `mu`.
    pub fn log_prob(&self, tape: &mut Tape, mu: Var) -> Result<Var> {
        let rows = self.log_prob_rows(tape, mu)?;
        tape.sum(rows)
    }

    /// Log density of each row of a plain `[n × dim]` buffer.
    pub fn log_prob_values(&self, points: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let n = points.len() / self.dim;
        let mu = tape.constant(&[n, self.dim], points.to_vec())?;
        let lp = self.log_prob_rows(&mut tape, mu)?;
        Ok(tape.value(lp).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_at_origin() {
        let p = SoftballPrior::new(2, 1.0, 1.0).unwrap();
        // -ln(pi) - ln(1 + e^-1)
        let expect = -std::f64::consts::PI.ln() - (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(expect, -1.45799, epsilon = 1e-5);
        let v = p.log_prob_values(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn log_prob_on_boundary_is_a_minus_ln2() {
        let p = SoftballPrior::new(3, 2.0, 7.0).unwrap();
        let v = p.log_prob_values(&[0.0, 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], p.log_normalizer() - 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn radial_and_monotone() {
        let p = SoftballPrior::new(2, 1.5, 4.0).unwrap();
        let v = p
            .log_prob_values(&[1.0, 0.0, 0.0, -1.0, 0.6, 0.8, 2.0, 0.0, 0.0, 3.0])
            .unwrap();
        assert_abs_diff_eq!(v[0], v[1], epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], v[2], epsilon = 1e-15);
        assert!(v[2] >= v[3] && v[3] >= v[4]);
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        let p = SoftballPrior::new(3, 1.0, 5.0).unwrap();
        let mut tape = Tape::new();
        let mu = tape.leaf_values(&[1, 3], vec![0.0; 3]).unwrap();
        let lp = p.log_prob(&mut tape, mu).unwrap();
        let g = tape.backward(lp).unwrap();
        assert_eq!(g.get(mu).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_scale_samples_origin() {
        let p = SoftballPrior::new(3, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(p.sample(10, &mut rng).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn disk_radial_cdf() {
        let p = SoftballPrior::new(2, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let s = p.sample(n, &mut rng);
        let inside = s
            .chunks(2)
            .filter(|r| (r[0] * r[0] + r[1] * r[1]).sqrt() <= 0.5)
            .count();
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.01, "fraction {frac}");
        assert!(s.chunks(2).all(|r| r[0].hypot(r[1]) <= 1.0 + 1e-12));
    }

    #[test]
    fn one_dimensional_ball_is_an_interval() {
        let p = SoftballPrior::new(1, 3.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = p.sample(100_000, &mut rng);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!(s.iter().all(|x| x.abs() <= 3.0));
        // uniform on [-3, 3] has variance 3
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((var - 3.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(SoftballPrior::new(0, 1.0, 1.0).is_err());
        assert!(SoftballPrior::new(2, -1.0, 1.0).is_err());
        assert!(SoftballPrior::new(2, 1.0, 0.0).is_err());
    }
}
