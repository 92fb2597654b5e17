use crate::embedding::dot;
use crate::error::{Error, Result};

/// Fully connected layer, `weights` row-major with one row per output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    /// Output units whose weight row is not identically zero.
    live: Vec<usize>,
    /// Input columns with a nonzero weight in some row.
    support: Vec<usize>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(Error::shape(format!(
                "layer {inputs}→{outputs} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|w| !w.is_finite()) {
            return Err(Error::domain("layer parameters must be finite"));
        }
        let live = weights
            .chunks_exact(inputs)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|w| *w != 0.0))
            .map(|(i, _)| i)
            .collect();
        let support = (0..inputs)
            .filter(|&c| (0..outputs).any(|r| weights[r * inputs + c] != 0.0))
            .collect();
        Ok(DenseLayer {
            inputs,
            outputs,
            weights,
            biases,
            live,
            support,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(
            inputs,
            outputs,
            vec![0.0; inputs * outputs],
            vec![0.0; outputs],
        )
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.biases.clone();
        for &i in &self.live {
            out[i] += dot(&self.weights[i * self.inputs..(i + 1) * self.inputs], x);
        }
        out
    }
}

/// Stack of dense layers with ReLU between them and a linear final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Inputs the output actually depends on; the rest may be left at zero.
    pub fn input_support(&self) -> &[usize] {
        &self.layers[0].support
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_applies_relu_between_layers() {
        let l1 = DenseLayer::new(2, 2, vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]).unwrap();
        let l2 = DenseLayer::new(2, 1, vec![1.0, 1.0], vec![-0.5]).unwrap();
        let mlp = Mlp::new(vec![l1, l2]).unwrap();
        assert_eq!(mlp.forward(&[2.0, 3.0]).unwrap(), vec![1.5]);
        assert_eq!(mlp.forward(&[-2.0, -3.0]).unwrap(), vec![2.5]);
        assert!(mlp.forward(&[1.0]).is_err());
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(DenseLayer::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
        let a = DenseLayer::zeros(3, 2).unwrap();
        let b = DenseLayer::zeros(3, 1).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn zero_rows_still_emit_bias() {
        let l = DenseLayer::new(2, 2, vec![0.0, 0.0, 1.0, 1.0], vec![0.25, 0.0]).unwrap();
        let mlp = Mlp::new(vec![l]).unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0]).unwrap(), vec![0.25, 3.0]);
    }
}
