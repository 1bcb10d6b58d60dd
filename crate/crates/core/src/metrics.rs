//! Clustering agreement and reconstruction summaries.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{bce_point_metrics, nb_point_metrics, PointMetrics, RmseSpace};
use crate::model::DgdModel;
use crate::parallel::map_chunks;
use crate::training::hard_cluster;

/// Cross-tabulation of two labelings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[i][j]`: samples with class `i` in `a` and cluster `j` in `b`.
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Contract(format!(
                "labelings have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        let ra = a.iter().max().map_or(0, |m| m + 1);
        let rb = b.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; rb]; ra];
        for (&i, &j) in a.iter().zip(b) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..rb).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: a.len() as u64,
        })
    }
}

fn pairs(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index, chance-corrected: 1 for identical partitions, about
/// 0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() < 2 {
        if a.len() != b.len() {
            return Err(Error::Contract("labelings differ in length".into()));
        }
        return Err(Error::Contract("ARI needs at least two samples".into()));
    }
    let t = ContingencyTable::new(a, b)?;
    let index: u128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: u128 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let sb: u128 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    // (index - sa·sb/total) / ((sa+sb)/2 - sa·sb/total), scaled by 2·total
    // so that everything stays integral until the final division.
    let num = 2 * total as i128 * index as i128 - 2 * (sa * sb) as i128;
    let den = total as i128 * (sa + sb) as i128 - 2 * (sa * sb) as i128;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Mean and standard error (sample sd over √n).
pub fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub model: String,
    pub split: String,
    pub ari: Option<f64>,
    pub nll_mean: f64,
    pub nll_sem: f64,
    pub rmse_mean: f64,
    pub rmse_sem: f64,
    pub seconds: Option<f64>,
}

pub const REPORT_HEADER: [&str; 8] = [
    "model",
    "split",
    "ARI",
    "NLL_mean",
    "NLL_sem",
    "RMSE_mean",
    "RMSE_sem",
    "seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| x.to_string())
}

impl Report {
    pub fn csv_record(&self) -> [String; 8] {
        [
            self.model.clone(),
            self.split.clone(),
            opt(self.ari),
            self.nll_mean.to_string(),
            self.nll_sem.to_string(),
            self.rmse_mean.to_string(),
            self.rmse_sem.to_string(),
            self.seconds
                .map_or_else(|| "n/a".to_owned(), |s| format!("{s:.3}")),
        ]
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ari = self
            .ari
            .map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}"));
        write!(
            f,
            "{:<12} {:<6} ARI {:>7}  NLL {:.4} ± {:.4}  RMSE {:.4} ± {:.4}",
            self.model, self.split, ari, self.nll_mean, self.nll_sem, self.rmse_mean, self.rmse_sem
        )?;
        if let Some(s) = self.seconds {
            write!(f, "  ({s:.1} s)")?;
        }
        Ok(())
    }
}

pub fn write_reports(path: &Path, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub model_name: String,
    pub split_name: String,
    pub rmse_space: RmseSpace,
    pub seconds: Option<f64>,
}

/// Per-sample NLL and RMSE of `data` decoded from `z` (`[N × m]`).
pub fn point_metrics(model: &DgdModel, data: &Dataset, z: &[f64]) -> Result<PointMetrics> {
    point_metrics_in(model, data, z, RmseSpace::default())
}

fn point_metrics_in(
    model: &DgdModel,
    data: &Dataset,
    z: &[f64],
    space: RmseSpace,
) -> Result<PointMetrics> {
    let m = model.latent_dim();
    let n = data.n_samples();
    if z.len() != n * m || data.n_features() != model.n_outputs() {
        return Err(Error::dim(
            "evaluate",
            &[z.len(), data.n_features()],
            &[n * m, model.n_outputs()],
        ));
    }
    let dispersion = model.head.as_ref().map(|h| h.dispersion());
    let parts = map_chunks(n, 256, |range| -> Result<PointMetrics> {
        let rows: Vec<usize> = range.clone().collect();
        let pred = model.decoder.decode(&z[range.start * m..range.end * m])?;
        let t = data.gather(&rows);
        match (&t.scale, &dispersion) {
            (Some(scale), Some(r)) => nb_point_metrics(&pred, &t.values, scale, r, space),
            _ => bce_point_metrics(&pred, &t.values, model.n_outputs()),
        }
    });
    let mut nll = Vec::with_capacity(n);
    let mut rmse = Vec::with_capacity(n);
    for p in parts {
        let p = p?;
        nll.extend(p.nll_per_sample);
        rmse.extend(p.rmse_per_sample);
    }
    let overall = (rmse.iter().map(|r| r * r).sum::<f64>() / n.max(1) as f64).sqrt();
    Ok(PointMetrics {
        nll_per_sample: nll,
        rmse_per_sample: rmse,
        rmse: overall,
    })
}

/// Evaluates a model on a dataset given that dataset's representations.
/// ARI is reported only when the dataset carries labels.
pub fn evaluate(model: &DgdModel, data: &Dataset, z: &[f64], opts: &EvalOptions) -> Result<Report> {
    let pm = point_metrics_in(model, data, z, opts.rmse_space)?;
    let ari = match data.labels() {
        Some(l) if l.len() >= 2 => {
            let clusters = hard_cluster(&model.gmm, z)?;
            Some(adjusted_rand_index(l.ids(), &clusters)?)
        }
        _ => None,
    };
    let (nll_mean, nll_sem) = mean_sem(&pm.nll_per_sample);
    let (rmse_mean, rmse_sem) = mean_sem(&pm.rmse_per_sample);
    Ok(Report {
        model: opts.model_name.clone(),
        split: opts.split_name.clone(),
        ari,
        nll_mean,
        nll_sem,
        rmse_mean,
        rmse_sem,
        seconds: opts.seconds,
    })
}
