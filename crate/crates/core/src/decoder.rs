//! Fully connected decoder mapping latent vectors to output-distribution
//! parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffArray, Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Sigmoid outputs are clamped to `[OUTPUT_CLAMP, 1 − OUTPUT_CLAMP]`.
pub const OUTPUT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => {
                let s = tape.sigmoid(x)?;
                tape.clamp(s, OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP)
            }
            Activation::Identity => Ok(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Contract(format!("unknown activation '{other}'"))),
        }
    }
}

/// Affine layer `y = x·W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DiffArray,
    pub bias: DiffArray,
}

impl Linear {
    /// Uniform `±1/√in` initialisation for weights and biases.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w = draw(input * output);
        let b = draw(output);
        Self {
            weight: DiffArray::new(&[input, output], w).expect("shape"),
            bias: DiffArray::new(&[output], b).expect("shape"),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DiffArray::zeros(&[input, output]),
            bias: DiffArray::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderNet {
    layers: Vec<Linear>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Tape handles for every layer's weight and bias.
#[derive(Debug, Clone)]
pub struct BoundDecoder {
    layers: Vec<(Var, Var)>,
}

impl DecoderNet {
    /// `sizes = [m, h₁, …, n_out]`, sigmoid output.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
            output_activation: Activation::Sigmoid,
        })
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|w| Linear::zeros(w[0], w[1]))
                .collect(),
            hidden_activation,
            output_activation: Activation::Sigmoid,
        })
    }

    pub fn from_layers(
        layers: Vec<Linear>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("decoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(
                    "decoder layers",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        for l in &layers {
            if l.bias.shape() != [l.output_dim()] {
                return Err(Error::dim("decoder bias", l.weight.shape(), l.bias.shape()));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Contract(format!(
                "decoder layer sizes {sizes:?} need at least input and output, all positive"
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDecoder {
        BoundDecoder {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.weight), tape.leaf(&l.bias)))
                .collect(),
        }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundDecoder {
        BoundDecoder {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.frozen(&l.weight), tape.frozen(&l.bias)))
                .collect(),
        }
    }

    /// Applies the affine/activation stack to `z` (`[B × m]`).
    pub fn forward(&self, tape: &mut Tape, bound: &BoundDecoder, z: Var) -> Result<Var> {
        let zs = tape.shape(z);
        if zs.len() != 2 || zs[1] != self.input_dim() {
            return Err(Error::dim("decoder_forward", zs, &[self.input_dim()]));
        }
        let last = bound.layers.len() - 1;
        let mut h = z;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let a = tape.matmul(h, w)?;
            let a = tape.add(a, b)?;
            let act = if i == last {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.apply(tape, a)?;
        }
        Ok(h)
    }

    /// Frozen forward pass over a plain `[B × m]` buffer.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.input_dim();
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let zv = tape.constant(&[z.len() / m, m], z.to_vec())?;
        let out = self.forward(&mut tape, &bound, zv)?;
        Ok(tape.value(out).to_vec())
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundDecoder) {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.layers) {
            grads.accumulate_into(w, &mut layer.weight);
            grads.accumulate_into(b, &mut layer.bias);
        }
    }

    /// Parameters paired with whether weight decay applies (weights yes,
    /// biases no).
    pub fn params_mut(&mut self) -> Vec<(&mut DiffArray, bool)> {
        self.layers
            .iter_mut()
            .flat_map(|l| [(&mut l.weight, true), (&mut l.bias, false)])
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let net = DecoderNet::zeros(&[3, 4, 5], Activation::Relu).unwrap();
        let out = net.decode(&[0.3, -1.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_layer_by_hand() {
        let layer = Linear {
            weight: DiffArray::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: DiffArray::new(&[2], vec![0.0, 1.0]).unwrap(),
        };
        let net =
            DecoderNet::from_layers(vec![layer], Activation::Relu, Activation::Sigmoid).unwrap();
        let out = net.decode(&[2.0, -1.0]).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((out[0] - sig(2.0)).abs() < 1e-15);
        assert!((out[1] - sig(0.0)).abs() < 1e-15);
    }

    #[test]
    fn outputs_are_clamped() {
        let layer = Linear {
            weight: DiffArray::new(&[1, 2], vec![100.0, -100.0]).unwrap(),
            bias: DiffArray::zeros(&[2]),
        };
        let net =
            DecoderNet::from_layers(vec![layer], Activation::Relu, Activation::Sigmoid).unwrap();
        let out = net.decode(&[1.0]).unwrap();
        assert_eq!(out, vec![1.0 - OUTPUT_CLAMP, OUTPUT_CLAMP]);
    }

    #[test]
    fn parameter_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DecoderNet::new(&[20, 100, 100, 100, 50], Activation::Relu, &mut rng).unwrap();
        assert_eq!(
            net.parameter_count(),
            21 * 100 + 101 * 100 + 101 * 100 + 101 * 50
        );
        assert_eq!(net.layer_sizes(), vec![20, 100, 100, 100, 50]);
    }

    #[test]
    fn input_dimension_checked() {
        let net = DecoderNet::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(
            net.decode(&[0.0; 4]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn row_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DecoderNet::new(&[2, 8, 3], Activation::Relu, &mut rng).unwrap();
        let a = net.decode(&[0.1, 0.2, -0.5, 0.7, 1.0, -1.0]).unwrap();
        let b = net.decode(&[1.0, -1.0, 0.1, 0.2, -0.5, 0.7]).unwrap();
        assert_eq!(&a[0..3], &b[3..6]);
        assert_eq!(&a[3..6], &b[6..9]);
        assert_eq!(&a[6..9], &b[0..3]);
    }

    #[test]
    fn bad_layer_sizes() {
        assert!(DecoderNet::zeros(&[3], Activation::Relu).is_err());
        assert!(DecoderNet::zeros(&[3, 0, 2], Activation::Relu).is_err());
    }
}
