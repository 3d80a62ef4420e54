//! Minimal dense feedforward network engine with analytic gradients, Adam
//! optimization, pluggable losses and k-fold cross-validation.
//!
//! The same engine backs the regressor, every conditional-distribution
//! estimator and the learned diversity function, so gradient correctness is
//! validated centrally through [`grad_check`] against central finite
//! differences.

mod loss;
mod train;

pub use loss::{Loss, TauSource};
pub use train::{
    cross_validate, cross_validate_with, grad_check, identity_batch_map, targets_column,
    train_network, train_network_with, train_regressor, AdamState, NetArch, RegressorOptions,
    TrainConfig, TrainOutcome,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;
use crate::{Error, Regressor, Result};
use rand::Rng;

/// Pointwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative as a function of the pre-activation value.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            // subgradient 0 at the kink
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(z),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// One dense layer: weight matrix (out x in) and bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A dense feedforward network. Hidden layers use ReLU; the output layer
/// activation is chosen per consumer (identity for regression heads,
/// sigmoid for the diversity function, softplus for nonnegative quantiles).
#[derive(Debug, Clone)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub output_activation: Activation,
}

/// Per-parameter gradients, shaped exactly like the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// Elementwise accumulation (used when a logical batch is processed in
    /// bounded chunks).
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }
}

pub(crate) struct ForwardCache {
    /// Pre-activation values per layer.
    pre: Vec<Array2<f64>>,
    /// Post-activation values per layer (last entry is the network output).
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &Array2<f64> {
        self.post.last().expect("non-empty network")
    }
}

impl DenseNet {
    /// He-uniform initialization for the given layer widths, seeded; all
    /// biases start at zero.
    pub fn new(dims: &[usize], output_activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam(
                "a network needs at least input and output dims".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParam("layer dims must be positive".into()));
        }
        let mut rng = stream_rng(seed, &[0x696e_6974]);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
            layers.push(Layer { w, b: Array1::zeros(fan_out) });
        }
        Ok(DenseNet { layers, output_activation })
    }

    /// All-zero parameters (useful for tests and hand-set networks).
    pub fn zeros(dims: &[usize], output_activation: Activation) -> Result<Self> {
        let mut net = DenseNet::new(dims, output_activation, 0)?;
        for layer in &mut net.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.ncols()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").w.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, inputs: ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network forward",
                expected: format!("{} input columns", self.input_dim()),
                got: format!("{}", inputs.ncols()),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cache(&self, inputs: ArrayView2<f64>) -> ForwardCache {
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut current = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.w.t());
            z += &layer.b;
            let act = if i + 1 == n_layers {
                self.output_activation
            } else {
                Activation::Relu
            };
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
        ForwardCache { pre, post }
    }

    /// Backpropagation: given `d loss / d output` (post-activation), returns
    /// gradients for every weight and bias.
    pub(crate) fn backward(
        &self,
        inputs: ArrayView2<f64>,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
    ) -> Gradients {
        let n_layers = self.layers.len();
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer { w: Array2::zeros(l.w.dim()), b: Array1::zeros(l.b.len()) })
            .collect();

        // delta = d loss / d pre-activation of the current layer
        let mut delta = {
            let act = self.output_activation;
            let mut d = output_grad.clone();
            d.zip_mut_with(&cache.pre[n_layers - 1], |g, &z| *g *= act.derivative(z));
            d
        };

        for i in (0..n_layers).rev() {
            let layer_input = if i == 0 {
                inputs.view()
            } else {
                cache.post[i - 1].view()
            };
            grads[i].w = delta.t().dot(&layer_input);
            grads[i].b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].w);
                upstream.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    *g *= Activation::Relu.derivative(z)
                });
                delta = upstream;
            }
        }
        Gradients { layers: grads }
    }
}

/// Shape-checked forward pass.
pub fn forward(net: &DenseNet, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    net.check_input(inputs)?;
    Ok(net.forward_cache(inputs).output().clone())
}

/// A trained scalar-output network viewed as a [`Regressor`].
#[derive(Debug, Clone)]
pub struct NetRegressor {
    pub net: DenseNet,
}

impl Regressor for NetRegressor {
    fn predict_batch(&self, xs: ArrayView2<f64>) -> Array1<f64> {
        self.net.forward_cache(xs).output().column(0).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_network_passes_input_through() {
        let mut net = DenseNet::zeros(&[2, 2], Activation::Identity).unwrap();
        net.layers[0].w = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![[3.0, -4.0], [0.5, 2.0]];
        let y = forward(&net, x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2], Activation::Identity).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let y = forward(&net, x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_1_2_1_forward() {
        // hidden: relu(w1 x + b1), output: w2 h + b2
        let mut net = DenseNet::zeros(&[1, 2, 1], Activation::Identity).unwrap();
        net.layers[0].w = array![[2.0], [-1.0]];
        net.layers[0].b = array![0.5, 0.25];
        net.layers[1].w = array![[1.5, -0.5]];
        net.layers[1].b = array![0.1];
        let x = array![[1.0], [-1.0]];
        let y = forward(&net, x.view()).unwrap();
        // x=1: h = [relu(2.5), relu(-0.75)] = [2.5, 0]; out = 1.5*2.5 + 0.1 = 3.85
        // x=-1: h = [relu(-1.5), relu(1.25)] = [0, 1.25]; out = -0.5*1.25 + 0.1 = -0.525
        assert!((y[[0, 0]] - 3.85).abs() < 1e-12);
        assert!((y[[1, 0]] - (-0.525)).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let net = DenseNet::zeros(&[3, 1], Activation::Identity).unwrap();
        let x = Array2::zeros((2, 2));
        assert!(forward(&net, x.view()).is_err());
    }

    #[test]
    fn init_is_seeded_and_bias_zero() {
        let a = DenseNet::new(&[4, 8, 1], Activation::Identity, 9).unwrap();
        let b = DenseNet::new(&[4, 8, 1], Activation::Identity, 9).unwrap();
        let c = DenseNet::new(&[4, 8, 1], Activation::Identity, 10).unwrap();
        assert_eq!(a.layers[0].w, b.layers[0].w);
        assert_ne!(a.layers[0].w, c.layers[0].w);
        assert!(a.layers.iter().all(|l| l.b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stable_activations() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0).abs() < 1e-300);
        assert!((sigmoid(1000.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-1000.0).abs() < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-12);
    }
}
