use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch losses, averaged per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub recon_loss: f64,
    /// Negative latent log density plus the parameter prior term.
    pub gmm_loss: f64,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, r: EpochRecord) {
        self.epochs.push(r);
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total_loss).collect()
    }

    /// Trailing moving average of the total loss over `window` epochs.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let l = self.total_losses();
        if window == 0 || l.len() < window {
            return Vec::new();
        }
        l.windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{other:?}")),
        })?;
        w.write_record([
            "epoch",
            "total_loss",
            "recon_loss",
            "gmm_loss",
            "wall_time_s",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.total_loss.to_string(),
                e.recon_loss.to_string(),
                e.gmm_loss.to_string(),
                e.wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{other:?}")),
        })?;
        let mut h = History::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Parse {
                path: path.to_owned(),
                line: i + 2,
                message: format!("invalid {what}"),
            };
            let num = |j: usize, what: &str| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(what))
            };
            h.push(EpochRecord {
                epoch: rec
                    .get(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("epoch"))?,
                total_loss: num(1, "total_loss")?,
                recon_loss: num(2, "recon_loss")?,
                gmm_loss: num(3, "gmm_loss")?,
                wall_time_s: rec.get(4).and_then(|s| s.parse().ok()),
            });
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut h = History::default();
        for e in 0..3 {
            h.push(EpochRecord {
                epoch: e,
                total_loss: 1.0 / (e as f64 + 3.0),
                recon_loss: 0.1,
                gmm_loss: -2.5e-7,
                wall_time_s: None,
            });
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        h.write_csv(f.path()).unwrap();
        assert_eq!(History::read_csv(f.path()).unwrap(), h);
    }

    #[test]
    fn moving_average_window() {
        let mut h = History::default();
        for (e, l) in [4.0, 2.0, 3.0, 1.0].into_iter().enumerate() {
            h.push(EpochRecord {
                epoch: e,
                total_loss: l,
                recon_loss: l,
                gmm_loss: 0.0,
                wall_time_s: None,
            });
        }
        assert_eq!(h.moving_average(2), vec![3.0, 2.5, 2.0]);
        assert!(h.moving_average(5).is_empty());
    }
}
