//! Checkpoint directory: `manifest.json` plus `params.bin` with named
//! little-endian f64 blocks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::DiffArray;
use crate::decoder::{Activation, DecoderNet, Linear};
use crate::error::{Error, Result};
use crate::gmm::{GaussianMixture, MixturePrior};
use crate::likelihood::NegativeBinomialHead;
use crate::model::{DgdModel, Profile};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const MAGIC: &[u8; 4] = b"DGDP";

/// A trained model with everything needed to reuse it on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: DgdModel,
    /// Training representations `[N × m]`, if saved.
    pub representations: Option<DiffArray>,
    /// Modelled gene columns for count data.
    pub feature_mask: Option<Vec<usize>>,
    /// Label vocabulary seen during training, in id order.
    pub label_names: Option<Vec<String>>,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub profile: Profile,
    pub latent_dim: usize,
    pub n_components: usize,
    pub n_outputs: usize,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub gmm_prior: MixturePrior,
    pub feature_mask: Option<Vec<usize>>,
    pub label_names: Option<Vec<String>>,
    pub blocks: Vec<BlockInfo>,
    pub config: serde_json::Value,
}

fn blocks_of(bundle: &ModelBundle) -> Vec<(String, &DiffArray)> {
    let m = &bundle.model;
    let mut out = Vec::new();
    for (i, l) in m.decoder.layers().iter().enumerate() {
        out.push((format!("decoder.{i}.weight"), &l.weight));
        out.push((format!("decoder.{i}.bias"), &l.bias));
    }
    out.push(("gmm.means".into(), &m.gmm.means));
    out.push(("gmm.neg_log_var".into(), &m.gmm.neg_log_var));
    out.push(("gmm.coefficients".into(), &m.gmm.coefficients));
    if let Some(h) = &m.head {
        out.push(("nb.log_dispersion".into(), &h.log_dispersion));
    }
    if let Some(z) = &bundle.representations {
        out.push(("representations".into(), z));
    }
    out
}

pub fn save_checkpoint(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blocks = blocks_of(bundle);
    let m = &bundle.model;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        profile: m.profile,
        latent_dim: m.latent_dim(),
        n_components: m.n_components(),
        n_outputs: m.n_outputs(),
        layer_sizes: m.decoder.layer_sizes(),
        hidden_activation: m.decoder.hidden_activation(),
        output_activation: m.decoder.output_activation(),
        gmm_prior: m.gmm.prior,
        feature_mask: bundle.feature_mask.clone(),
        label_names: bundle.label_names.clone(),
        blocks: blocks
            .iter()
            .map(|(n, a)| BlockInfo {
                name: n.clone(),
                shape: a.shape().to_vec(),
            })
            .collect(),
        config: bundle.config.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, a) in &blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
        for &d in a.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in a.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated parameter file at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn read_blocks(bytes: &[u8]) -> Result<Vec<(String, DiffArray)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a parameter file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "parameter format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("block {name} is too large")))?;
        let raw = r.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("block {name} is too large")))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, DiffArray::new(&shape, values)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes in parameter file",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

fn next_block(
    blocks: &mut impl Iterator<Item = (String, DiffArray)>,
    want: &str,
) -> Result<DiffArray> {
    match blocks.next() {
        Some((name, a)) if name == want => Ok(a),
        Some((name, _)) => Err(Error::Checkpoint(format!(
            "expected block {want}, found {name}"
        ))),
        None => Err(Error::Checkpoint(format!("missing block {want}"))),
    }
}

/// Loads a checkpoint; with `expected` set, a different profile is an error.
pub fn load_checkpoint(dir: &Path, expected: Option<Profile>) -> Result<ModelBundle> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "manifest format version {}, expected {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    if let Some(p) = expected {
        if p != manifest.profile {
            return Err(Error::ProfileMismatch {
                expected: p.to_string(),
                found: manifest.profile.to_string(),
            });
        }
    }
    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let blocks = read_blocks(&bytes)?;

    let names: Vec<&BlockInfo> = manifest.blocks.iter().collect();
    if names.len() != blocks.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} blocks, parameter file has {}",
            names.len(),
            blocks.len()
        )));
    }
    for (info, (name, a)) in names.iter().zip(&blocks) {
        if info.name != *name || info.shape != a.shape() {
            return Err(Error::Checkpoint(format!(
                "block {name} {:?} does not match manifest entry {} {:?}",
                a.shape(),
                info.name,
                info.shape
            )));
        }
    }

    let mut blocks = blocks.into_iter().peekable();
    let mut next = |want: &str| next_block(&mut blocks, want);
    let sizes = &manifest.layer_sizes;
    if sizes.len() < 2 {
        return Err(Error::Checkpoint(
            "decoder needs at least two layer sizes".into(),
        ));
    }
    let mut layers = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        let weight = next(&format!("decoder.{i}.weight"))?;
        let bias = next(&format!("decoder.{i}.bias"))?;
        if weight.shape() != [w[0], w[1]] || bias.shape() != [w[1]] {
            return Err(Error::Checkpoint(format!(
                "decoder layer {i} has shape {:?}, expected {:?}",
                weight.shape(),
                w
            )));
        }
        layers.push(Linear { weight, bias });
    }
    let decoder = DecoderNet::from_layers(
        layers,
        manifest.hidden_activation,
        manifest.output_activation,
    )?;
    let means = next("gmm.means")?;
    let neg_log_var = next("gmm.neg_log_var")?;
    let coefficients = next("gmm.coefficients")?;
    let gmm = GaussianMixture::from_parts(means, neg_log_var, coefficients, manifest.gmm_prior)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let head = match manifest.profile {
        Profile::Counts => Some(NegativeBinomialHead::from_log_dispersion(next(
            "nb.log_dispersion",
        )?)?),
        Profile::Binary => None,
    };
    let representations = match blocks.peek() {
        Some(_) => Some(next_block(&mut blocks, "representations")?),
        None => None,
    };
    if let Some(z) = &representations {
        if z.shape().len() != 2 || z.shape()[1] != manifest.latent_dim {
            return Err(Error::Checkpoint(format!(
                "representations have shape {:?}, latent dim is {}",
                z.shape(),
                manifest.latent_dim
            )));
        }
    }
    if blocks.next().is_some() {
        return Err(Error::Checkpoint("unexpected extra blocks".into()));
    }
    let model = DgdModel::new(decoder, gmm, head, manifest.profile)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if model.n_components() != manifest.n_components || model.n_outputs() != manifest.n_outputs {
        return Err(Error::Checkpoint(
            "manifest dimensions disagree with parameter blocks".into(),
        ));
    }
    Ok(ModelBundle {
        model,
        representations,
        feature_mask: manifest.feature_mask,
        label_names: manifest.label_names,
        config: manifest.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GmmInit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle(profile: Profile) -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let decoder = DecoderNet::new(&[2, 4, 5], Activation::Relu, &mut rng).unwrap();
        let gmm = GaussianMixture::new(3, 2, &GmmInit::default(), &mut rng).unwrap();
        let head = (profile == Profile::Counts).then(|| NegativeBinomialHead::new(5));
        ModelBundle {
            model: DgdModel::new(decoder, gmm, head, profile).unwrap(),
            representations: Some(
                DiffArray::new(&[4, 2], vec![0.1, -0.2, 0.3, 1e-300, 5.0, 6.0, -7.0, 0.0]).unwrap(),
            ),
            feature_mask: Some(vec![0, 1, 2, 4, 7]),
            label_names: None,
            config: serde_json::json!({"seed": 9}),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for profile in [Profile::Binary, Profile::Counts] {
            let dir = tempfile::tempdir().unwrap();
            let b = bundle(profile);
            save_checkpoint(&b, dir.path()).unwrap();
            let back = load_checkpoint(dir.path(), Some(profile)).unwrap();
            assert_eq!(b, back);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&bundle(Profile::Counts), dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), None),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn profile_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&bundle(Profile::Counts), dir.path()).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), Some(Profile::Binary)),
            Err(Error::ProfileMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&bundle(Profile::Binary), dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[4] = 99;
        fs::write(&p, bytes).unwrap();
        match load_checkpoint(dir.path(), None) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
