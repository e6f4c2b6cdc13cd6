//! Minimal dense-network substrate.
//!
//! The architecture set in this repo is small and fixed (plain MLPs with
//! four activations), so gradients are per-layer closed form rather than a
//! general tape. Everything is verified against central finite differences
//! in [`gradcheck`].
//!
//! Shape errors on the public API return [`Error::DimensionMismatch`];
//! internal helpers that are only reachable with consistent shapes use
//! `debug_assert!`.

mod checkpoint;
mod gradcheck;
mod optim;

pub use checkpoint::{load_net, save_net};
pub use gradcheck::{grad_check, grad_check_with, max_relative_error, GradCheckOpts};
pub use optim::{train_step, train_step_with, Adam, AdamConfig};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Element-wise activation applied after the affine map of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    ///
    /// All four activations admit this form, which is why the forward trace
    /// only needs to cache post-activation values.
    #[inline]
    pub fn grad_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Load(format!("unknown activation {other:?}"))),
        }
    }
}

/// One dense layer: `y = act(W x + b)`, weights row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
    activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    fn forward_into(&self, x: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        out.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z = dot(row, x) + self.bias[o];
            out.push(self.activation.apply(z));
        }
    }
}

/// Fixed-order chunked dot product: deterministic and still unrolled enough
/// to keep the dominant matmuls off the strict sequential-reduction path.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc0 = T::zero();
    let mut acc1 = T::zero();
    let mut acc2 = T::zero();
    let mut acc3 = T::zero();
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc0 = acc0 + a[j] * b[j];
        acc1 = acc1 + a[j + 1] * b[j + 1];
        acc2 = acc2 + a[j + 2] * b[j + 2];
        acc3 = acc3 + a[j + 3] * b[j + 3];
    }
    let mut acc = (acc0 + acc1) + (acc2 + acc3);
    for j in chunks * 4..a.len() {
        acc = acc + a[j] * b[j];
    }
    acc
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<Layer<T>>,
    seed: u64,
}

impl<T: Scalar> DenseNet<T> {
    /// Builds a net with `dims.len() - 1` layers and fan-scaled uniform
    /// initialization (`[-s, s]`, `s = sqrt(6 / (in + out))`), biases zero.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a net needs at least one layer (two dims)".into(),
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidConfig(format!(
                "got {} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer dims must be > 0".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, &act) in activations.iter().enumerate() {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s);
            let weights = (0..in_dim * out_dim)
                .map(|_| T::of(dist.sample(&mut rng)))
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                bias: vec![T::zero(); out_dim],
                activation: act,
            });
        }
        Ok(DenseNet { layers, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Pure single-sample forward pass.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("net input", self.input_dim(), x.len()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that caches per-layer post-activation outputs for a
    /// subsequent [`DenseNet::backward`].
    pub fn forward_trace(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("net input", self.input_dim(), x.len()));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_into(&cur, &mut out);
            outputs.push(out.clone());
            cur = out;
        }
        Ok(ForwardTrace {
            signature: self.signature(),
            input: x.to_vec(),
            outputs,
        })
    }

    /// Backpropagates `upstream = dL/dy` through the cached forward pass.
    ///
    /// Pure function of `(self, trace, upstream)`; gradient shapes mirror the
    /// parameter shapes exactly. Fails with a contract violation if the trace
    /// was not produced by a net of this architecture.
    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: &[T]) -> Result<Gradients<T>> {
        if trace.signature != self.signature() {
            return Err(Error::ContractViolation(
                "backward called without a matching cached forward pass".into(),
            ));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dim("upstream gradient", self.output_dim(), upstream.len()));
        }

        let mut layer_grads: Vec<LayerGrads<T>> = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: vec![T::zero(); l.weights.len()],
                bias: vec![T::zero(); l.bias.len()],
            })
            .collect();

        let mut d_out = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = if l == 0 {
                &trace.input[..]
            } else {
                &trace.outputs[l - 1][..]
            };
            let y = &trace.outputs[l];
            let g = &mut layer_grads[l];
            let mut d_in = vec![T::zero(); layer.in_dim];
            for o in 0..layer.out_dim {
                let dz = d_out[o] * layer.activation.grad_from_output(y[o]);
                g.bias[o] = dz;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    g.weights[row + i] = dz * x[i];
                    d_in[i] = d_in[i] + layer.weights[row + i] * dz;
                }
            }
            d_out = d_in;
        }

        Ok(Gradients {
            layers: layer_grads,
            input: d_out,
        })
    }

    /// Architecture fingerprint (dims + activations), used to pair traces
    /// with the net that produced them.
    pub fn signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mixin = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for l in &self.layers {
            mixin(l.in_dim as u64);
            mixin(l.out_dim as u64);
            mixin(l.activation.name().len() as u64 + (l.activation as u64) << 3);
        }
        h
    }

    /// FNV-1a over the bit patterns of all parameters, in layer order.
    pub fn param_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        self.for_each_param(|v| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        });
        h
    }

    /// Visits all parameters as `f64`, weights (row-major) then bias, layer
    /// by layer. This is the canonical flat parameter order.
    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for l in &self.layers {
            for w in &l.weights {
                f(w.f64());
            }
            for b in &l.bias {
                f(b.f64());
            }
        }
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let (l, off) = self.locate(idx);
        let layer = &self.layers[l];
        if off < layer.weights.len() {
            layer.weights[off].f64()
        } else {
            layer.bias[off - layer.weights.len()].f64()
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (l, off) = self.locate(idx);
        let layer = &mut self.layers[l];
        if off < layer.weights.len() {
            layer.weights[off] = T::of(v);
        } else {
            let n = layer.weights.len();
            layer.bias[off - n] = T::of(v);
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.weights.len() + layer.bias.len();
            if idx < n {
                return (l, idx);
            }
            idx -= n;
        }
        panic!("parameter index out of range");
    }

    /// Same architecture and parameter values at `f64` precision.
    pub fn to_f64(&self) -> DenseNet<f64> {
        DenseNet {
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.iter().map(|w| w.f64()).collect(),
                    bias: l.bias.iter().map(|b| b.f64()).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Consumes the net, making it immutable and safely shareable across
    /// concurrent readers.
    pub fn freeze(self) -> FrozenNet<T> {
        FrozenNet { net: self }
    }

    pub(crate) fn layer_params_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let layer = &mut self.layers[l];
        (&mut layer.weights, &mut layer.bias)
    }
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    signature: u64,
    input: Vec<T>,
    outputs: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Final network output.
    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("nets have at least one layer")
    }

    pub fn input(&self) -> &[T] {
        &self.input
    }

    /// Index of the first layer whose output contains a non-finite value.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.outputs
            .iter()
            .position(|out| out.iter().any(|v| !v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients (mirroring net shapes) plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
    pub input: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
            input: vec![T::zero(); net.input_dim()],
        }
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Flat view in canonical parameter order, as `f64`.
    pub fn to_flat_f64(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().map(|v| v.f64()));
            out.extend(l.bias.iter().map(|v| v.f64()));
        }
        out
    }
}

/// An immutable trained network, safe to share read-only across planner
/// workers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenNet<T> {
    net: DenseNet<T>,
}

impl<T: Scalar> FrozenNet<T> {
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.net.forward(x)
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_checksum(&self) -> u64 {
        self.net.param_checksum()
    }

    /// Read-only view, e.g. for checkpointing.
    pub fn as_net(&self) -> &DenseNet<T> {
        &self.net
    }
}

/// Mean squared error with `f64` accumulation.
pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x.f64() - y.f64();
        acc += d * d;
    }
    acc / a.len() as f64
}
