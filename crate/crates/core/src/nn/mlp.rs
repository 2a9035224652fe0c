use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayerShape, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activated value `a = f(z)`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense feed-forward network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Vec<Activation>,
    params: ParamVector,
}

fn layout_for(sizes: &[usize]) -> Vec<LayerShape> {
    sizes.windows(2).map(|w| LayerShape { inputs: w[0], outputs: w[1] }).collect()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(sizes, activation)?;
        for layer in 0..net.params.layer_count() {
            let shape = net.params.layout()[layer];
            let bound = (6.0 / (shape.inputs + shape.outputs) as f64).sqrt();
            let range = net.params.layer_range(layer);
            let weights = &mut net.params.values_mut()[range][..shape.weight_count()];
            for w in weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeroed(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("layer sizes", format!("need at least two positive sizes, got {sizes:?}")));
        }
        let layout = layout_for(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden: vec![activation; sizes.len() - 2],
            params: ParamVector::zeros(&layout),
        })
    }

    /// Rebuilds a network from flat parameters.
    pub fn from_params(sizes: &[usize], hidden: Vec<Activation>, params: ParamVector) -> Result<Self> {
        if sizes.len() < 2 || hidden.len() != sizes.len() - 2 {
            return Err(Error::invalid("hidden activations", "one per hidden layer"));
        }
        if params.layout() != layout_for(sizes).as_slice() {
            return Err(Error::LayoutMismatch("Mlp::from_params"));
        }
        Ok(Self { sizes: sizes.to_vec(), hidden, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if !params.is_compatible(&self.params) {
            return Err(Error::LayoutMismatch("Mlp::set_params"));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first, output last.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let values = self.params.values();
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        for (layer, shape) in self.params.layout().iter().enumerate() {
            let x = &acts[layer];
            let w = &values[offset..offset + shape.weight_count()];
            let b = &values[offset + shape.weight_count()..offset + shape.len()];
            let mut out: Vec<f64> = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(shape.inputs)) {
                *o += row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            if let Some(act) = self.hidden.get(layer) {
                out.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            acts.push(out);
            offset += shape.len();
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.trace(input).pop().unwrap())
    }

    /// Gradient of a loss with respect to the parameters, given the loss
    /// gradient at the network output.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<ParamVector> {
        let mut grad = self.params.zeros_like();
        self.accumulate_backward(input, output_grad, &mut grad)?;
        Ok(grad)
    }

    /// Adds the parameter gradient for one sample into `grad`.
    pub fn accumulate_backward(&self, input: &[f64], output_grad: &[f64], grad: &mut ParamVector) -> Result<()> {
        self.check_input(input)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp output gradient",
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        if !grad.is_compatible(&self.params) {
            return Err(Error::LayoutMismatch("Mlp::accumulate_backward"));
        }
        let acts = self.trace(input);
        let layout = self.params.layout();
        let values = self.params.values();
        let mut offsets: Vec<usize> = Vec::with_capacity(layout.len());
        let mut acc = 0;
        for shape in layout {
            offsets.push(acc);
            acc += shape.len();
        }

        // delta holds dL/dz for the current layer's pre-activations.
        let mut delta = output_grad.to_vec();
        let g = grad.values_mut();
        for layer in (0..layout.len()).rev() {
            let shape = layout[layer];
            let off = offsets[layer];
            let x = &acts[layer];
            for (o, d) in delta.iter().enumerate() {
                let row = off + o * shape.inputs;
                for (i, xi) in x.iter().enumerate() {
                    g[row + i] += d * xi;
                }
                g[off + shape.weight_count() + o] += d;
            }
            if layer == 0 {
                break;
            }
            let act = self.hidden[layer - 1];
            let mut prev = vec![0.0; shape.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &values[off + o * shape.inputs..off + (o + 1) * shape.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= act.derivative(*a);
            }
            delta = prev;
        }
        Ok(())
    }
}
