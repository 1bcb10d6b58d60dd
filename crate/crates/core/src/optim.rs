//! Adam with decoupled weight decay, one instance per parameter group.

use serde::{Deserialize, Serialize};

use crate::autodiff::DiffArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to parameters flagged for it.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.7,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Moment buffers and step count for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    name: String,
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(name: impl Into<String>, config: AdamConfig) -> Self {
        Self {
            name: name.into(),
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn ensure_buffers(&mut self, params: &[(&mut DiffArray, bool)]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params)
                .any(|(m, (p, _))| m.len() != p.len())
        {
            return Err(Error::Contract(format!(
                "parameter layout changed under optimizer '{}'",
                self.name
            )));
        }
        Ok(())
    }

    fn check_finite(&self, params: &[(&mut DiffArray, bool)]) -> Result<()> {
        if params
            .iter()
            .any(|(p, _)| p.requires_grad() && p.grad().iter().any(|g| !g.is_finite()))
        {
            return Err(Error::TrainingDiverged {
                group: self.name.clone(),
                epoch: None,
                batch: None,
            });
        }
        Ok(())
    }

    /// One bias-corrected Adam update. Each parameter carries a flag saying
    /// whether weight decay applies to it.
    pub fn step(&mut self, params: &mut [(&mut DiffArray, bool)]) -> Result<()> {
        self.step_masked(params, None)
    }

    /// Like [`AdamState::step`], but rows of the first parameter whose mask
    /// entry is false are left untouched, moments included. Used for the
    /// representation matrix when some rows were not visited.
    pub fn step_rows(&mut self, param: &mut DiffArray, row_mask: &[bool]) -> Result<()> {
        let mut slot = [(param, false)];
        self.step_masked(&mut slot, Some(row_mask))
    }

    fn step_masked(
        &mut self,
        params: &mut [(&mut DiffArray, bool)],
        row_mask: Option<&[bool]>,
    ) -> Result<()> {
        self.ensure_buffers(params)?;
        self.check_finite(params)?;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, (param, decay)) in params.iter_mut().enumerate() {
            if !param.requires_grad() {
                continue;
            }
            let row_len = param.row_len().max(1);
            let decay_factor = if *decay { 1.0 - lr * weight_decay } else { 1.0 };
            let (values, grad) = param.values_and_grad_mut();
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..values.len() {
                if let Some(mask) = row_mask {
                    if !mask[i / row_len] {
                        continue;
                    }
                }
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] = values[i] * decay_factor - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if params
            .iter()
            .any(|(p, _)| p.values().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::TrainingDiverged {
                group: self.name.clone(),
                epoch: None,
                batch: None,
            });
        }
        Ok(())
    }
}

/// Learning rates for the three parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub decoder: f64,
    pub representation: f64,
    pub gmm: f64,
}

impl LearningRates {
    /// Representation rate ten times the decoder rate, mixture rate `gmm_factor`
    /// times the decoder rate.
    pub fn from_decoder(decoder: f64, gmm_factor: f64) -> Self {
        Self {
            decoder,
            representation: 10.0 * decoder,
            gmm: gmm_factor * decoder,
        }
    }
}

/// Separate optimizers for decoder, representations and mixture, since the
/// groups step at different cadences and want different step sizes.
#[derive(Debug, Clone)]
pub struct OptimizerTrio {
    pub decoder: AdamState,
    pub representation: AdamState,
    pub gmm: AdamState,
}

impl OptimizerTrio {
    pub fn new(lr: LearningRates, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let cfg = |lr: f64| AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Self {
            decoder: AdamState::new("decoder", cfg(lr.decoder).with_weight_decay(weight_decay)),
            representation: AdamState::new("representation", cfg(lr.representation)),
            gmm: AdamState::new("gmm", cfg(lr.gmm)),
        }
    }
}

/// Zeroes the gradient of every listed parameter.
pub fn zero_grad<'a>(params: impl IntoIterator<Item = &'a mut DiffArray>) {
    params.into_iter().for_each(DiffArray::zero_grad);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DiffArray {
        DiffArray::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.37, -12.0, 1e-3] {
            let mut p = scalar(1.0);
            p.grad_mut()[0] = g;
            let mut opt = AdamState::new("t", AdamConfig::new(0.01));
            opt.step(&mut [(&mut p, false)]).unwrap();
            let moved = 1.0 - p.values()[0];
            assert!((moved - 0.01 * g.signum()).abs() < 1e-4 * 0.01, "{moved}");
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn first_step_scale_equivariant() {
        let run = |g: f64| {
            let mut p = scalar(0.0);
            p.grad_mut()[0] = g;
            let mut opt = AdamState::new("t", AdamConfig::new(0.1));
            opt.step(&mut [(&mut p, false)]).unwrap();
            p.values()[0]
        };
        for g in [1e-3, 0.5, 40.0] {
            let (a, b) = (run(g), run(2.0 * g));
            assert!(((a - b) / a).abs() < 0.01);
        }
    }

    #[test]
    fn zero_grad_and_zero_decay_leave_values() {
        let mut p = DiffArray::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut opt = AdamState::new("t", AdamConfig::new(0.1));
        for _ in 0..5 {
            opt.step(&mut [(&mut p, true)]).unwrap();
        }
        assert_eq!(p.values(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let mut p = DiffArray::new(&[2], vec![0.1, 0.2]).unwrap();
        let mut opt = AdamState::new("t", AdamConfig::new(0.0).with_weight_decay(0.5));
        for i in 0..20 {
            p.grad_mut().copy_from_slice(&[i as f64, -3.0]);
            opt.step(&mut [(&mut p, true)]).unwrap();
        }
        assert_eq!(p.values(), &[0.1, 0.2]);
    }

    #[test]
    fn quadratic_bowl() {
        let mut x = scalar(5.0);
        let mut opt = AdamState::new("t", AdamConfig::new(0.1));
        for i in 0..400 {
            if i == 200 {
                opt.set_lr(0.001);
            }
            x.zero_grad();
            let v = x.values()[0];
            x.grad_mut()[0] = 2.0 * v;
            opt.step(&mut [(&mut x, false)]).unwrap();
        }
        assert!(x.values()[0].abs() < 1e-2, "{}", x.values()[0]);
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut p = scalar(1.0);
        p.grad_mut()[0] = f64::NAN;
        let mut opt = AdamState::new("gmm", AdamConfig::new(0.1));
        match opt.step(&mut [(&mut p, false)]) {
            Err(Error::TrainingDiverged { group, .. }) => assert_eq!(group, "gmm"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_decay_only_on_flagged() {
        let mut w = scalar(1.0);
        let mut b = scalar(1.0);
        let mut opt = AdamState::new("decoder", AdamConfig::new(0.1).with_weight_decay(0.5));
        opt.step(&mut [(&mut w, true), (&mut b, false)]).unwrap();
        assert!((w.values()[0] - 0.95).abs() < 1e-15);
        assert_eq!(b.values()[0], 1.0);
    }

    #[test]
    fn masked_rows_untouched() {
        let mut z = DiffArray::new(&[2, 2], vec![0.0; 4]).unwrap();
        z.grad_mut().copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        let mut opt = AdamState::new("representation", AdamConfig::new(0.1));
        opt.step_rows(&mut z, &[true, false]).unwrap();
        assert!(z.values()[0] < 0.0 && z.values()[1] < 0.0);
        assert_eq!(&z.values()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn zero_grad_helper() {
        let mut a = scalar(2.0);
        let mut b = scalar(3.0);
        a.grad_mut()[0] = 1.0;
        b.grad_mut()[0] = 2.0;
        zero_grad([&mut a, &mut b]);
        assert_eq!(a.grad(), &[0.0]);
        assert_eq!(b.grad(), &[0.0]);
        assert_eq!(a.values(), &[2.0]);
    }

    #[test]
    fn lr_rule() {
        let lr = LearningRates::from_decoder(1e-3, 10.0);
        assert_eq!(lr.representation, 1e-2);
        assert_eq!(lr.gmm, 1e-2);
    }
}
