use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Sigmoid => 1.0,
            Activation::Identity => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Activation> {
        match code as i64 {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `act(W x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseParams { weight: Array2::zeros((output, input)), bias: Array1::zeros(output), activation }
    }

    pub fn init<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = 1.0 / (input as f64).sqrt();
        DenseParams {
            weight: Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..limit)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Batched pre-activation `X Wᵀ + b` for `X` of shape `batch × in`.
    pub fn pre_activation(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut pre = x.dot(&self.weight.t());
        pre += &self.bias;
        pre
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let act = self.activation;
        self.pre_activation(x).mapv_into(|v| act.apply(v))
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(w, b)| self.activation.apply(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b))
            .collect()
    }

    /// Accumulates parameter gradients given the gradient at the
    /// pre-activation, returning nothing about the input.
    pub(crate) fn accumulate(&self, d_pre: ArrayView2<f64>, input: ArrayView2<f64>, grad: &mut DenseParams) {
        grad.weight += &d_pre.t().dot(&input);
        grad.bias += &d_pre.sum_axis(Axis(0));
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &[usize], &[f64])) {
        let shape = [self.weight.nrows(), self.weight.ncols()];
        f(&format!("{prefix}.weight"), &shape, self.weight.as_slice().expect("contiguous"));
        f(&format!("{prefix}.bias"), &[self.bias.len()], self.bias.as_slice().expect("contiguous"));
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.weight"), self.weight.as_slice_mut().expect("contiguous"));
        f(&format!("{prefix}.bias"), self.bias.as_slice_mut().expect("contiguous"));
    }
}
