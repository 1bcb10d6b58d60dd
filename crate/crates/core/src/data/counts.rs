use super::Labels;
use crate::error::{Error, Result};

/// Sparse samples × genes count matrix stored by row (CSR).
///
/// Each sample's scaling constant is its largest count. Only genes with a
/// nonzero total are modelled; `feature_mask` lists them in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n_genes: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    counts: Vec<u64>,
    scale: Vec<f64>,
    gene_names: Option<Vec<String>>,
    feature_mask: Vec<usize>,
    // gene -> position in feature_mask, usize::MAX when not modelled
    feature_pos: Vec<usize>,
    labels: Option<Labels>,
}

impl CountMatrix {
    /// Builds from `(sample, gene, count)` triplets (0-based). Duplicate
    /// coordinates are summed and zero counts dropped.
    pub fn from_triplets(
        n_samples: usize,
        n_genes: usize,
        triplets: &[(usize, usize, u64)],
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Data("no samples".into()));
        }
        let mut rows: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n_samples];
        for &(r, c, v) in triplets {
            if r >= n_samples || c >= n_genes {
                return Err(Error::Index {
                    what: "count matrix entry",
                    index: if r >= n_samples { r } else { c },
                    limit: if r >= n_samples { n_samples } else { n_genes },
                });
            }
            if v > 0 {
                rows[r].push((c, v));
            }
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut counts = Vec::new();
        for row in &mut rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *counts.last_mut().expect("entry") += v;
                } else {
                    indices.push(c);
                    counts.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        let mut m = Self {
            n_genes,
            indptr,
            indices,
            counts,
            scale: Vec::new(),
            gene_names: None,
            feature_mask: Vec::new(),
            feature_pos: Vec::new(),
            labels: None,
        };
        m.scale = (0..n_samples)
            .map(|i| m.row(i).1.iter().copied().max().unwrap_or(0) as f64)
            .collect();
        if let Some(i) = m.scale.iter().position(|&s| s == 0.0) {
            return Err(Error::Data(format!("sample {i} has no counts")));
        }
        let mut totals = vec![0u64; n_genes];
        for (&c, &v) in m.indices.iter().zip(&m.counts) {
            totals[c] += v;
        }
        let mask: Vec<usize> = (0..n_genes).filter(|&g| totals[g] > 0).collect();
        m.set_mask(mask);
        Ok(m)
    }

    fn set_mask(&mut self, mask: Vec<usize>) {
        let mut pos = vec![usize::MAX; self.n_genes];
        for (p, &g) in mask.iter().enumerate() {
            pos[g] = p;
        }
        self.feature_mask = mask;
        self.feature_pos = pos;
    }

    /// Replaces the modelled-gene mask, e.g. with the one a model was trained on.
    pub fn with_feature_mask(mut self, mask: &[usize]) -> Result<Self> {
        if let Some(&bad) = mask.iter().find(|&&g| g >= self.n_genes) {
            return Err(Error::Index {
                what: "feature mask",
                index: bad,
                limit: self.n_genes,
            });
        }
        self.set_mask(mask.to_vec());
        Ok(self)
    }

    pub fn with_gene_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_genes {
            return Err(Error::Data(format!(
                "{} gene names for {} genes",
                names.len(),
                self.n_genes
            )));
        }
        self.gene_names = Some(names);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.n_samples() {
            return Err(Error::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                self.n_samples()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn n_modelled(&self) -> usize {
        self.feature_mask.len()
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn feature_mask(&self) -> &[usize] {
        &self.feature_mask
    }

    pub fn gene_names(&self) -> Option<&[String]> {
        self.gene_names.as_deref()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Column indices and counts of one sample.
    pub fn row(&self, i: usize) -> (&[usize], &[u64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.counts[a..b])
    }

    pub fn triplets(&self) -> Vec<(usize, usize, u64)> {
        (0..self.n_samples())
            .flat_map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .map(move |(&c, &v)| (i, c, v))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Dense `[B × n_modelled]` counts and the rows' scaling constants.
    pub fn gather(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let w = self.n_modelled();
        let mut out = vec![0.0; rows.len() * w];
        for (k, &r) in rows.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let p = self.feature_pos[c];
                if p != usize::MAX {
                    out[k * w + p] = v as f64;
                }
            }
        }
        (out, rows.iter().map(|&r| self.scale[r]).collect())
    }

    /// Rows in the given order; gene mask and names are kept.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut counts = Vec::new();
        for &r in rows {
            let (c, v) = self.row(r);
            indices.extend_from_slice(c);
            counts.extend_from_slice(v);
            indptr.push(indices.len());
        }
        Self {
            n_genes: self.n_genes,
            indptr,
            indices,
            counts,
            scale: rows.iter().map(|&r| self.scale[r]).collect(),
            gene_names: self.gene_names.clone(),
            feature_mask: self.feature_mask.clone(),
            feature_pos: self.feature_pos.clone(),
            labels: self.labels.as_ref().map(|l| l.subset(rows)),
        }
    }

    /// Fraction of zero entries over the full matrix.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / (self.n_samples() * self.n_genes).max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_matrix_scales_and_mask() {
        let m = CountMatrix::from_triplets(2, 3, &[(0, 0, 5), (1, 2, 2)]).unwrap();
        assert_eq!(m.scale(), &[5.0, 2.0]);
        assert_eq!(m.feature_mask(), &[0, 2]);
        let (dense, scale) = m.gather(&[1, 0]);
        assert_eq!(dense, vec![0.0, 2.0, 5.0, 0.0]);
        assert_eq!(scale, vec![2.0, 5.0]);
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CountMatrix::from_triplets(1, 2, &[(0, 1, 2), (0, 1, 3), (0, 0, 0)]).unwrap();
        assert_eq!(m.triplets(), vec![(0, 1, 5)]);
        assert_eq!(m.feature_mask(), &[1]);
    }

    #[test]
    fn empty_and_zero_rows_rejected() {
        assert!(matches!(
            CountMatrix::from_triplets(0, 3, &[]),
            Err(Error::Data(m)) if m.contains("no samples")
        ));
        match CountMatrix::from_triplets(3, 2, &[(0, 0, 1), (2, 1, 1)]) {
            Err(Error::Data(m)) => assert!(m.contains("sample 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subset_keeps_mask() {
        let m = CountMatrix::from_triplets(3, 3, &[(0, 0, 1), (1, 1, 4), (2, 2, 2)])
            .unwrap()
            .with_labels(Labels::from_strings(&["x", "y", "x"]))
            .unwrap();
        let s = m.subset(&[2, 0]);
        assert_eq!(s.n_samples(), 2);
        assert_eq!(s.n_modelled(), 3);
        assert_eq!(s.scale(), &[2.0, 1.0]);
        assert_eq!(s.labels().unwrap().ids(), &[0, 0]);
    }
}
