//! Moment-based adaptive optimizer (Adam-style update).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{mse, DenseNet, Gradients};

/// Optimizer hyperparameters. The defaults are the ones every trainer in
/// this repo uses unless a config overrides the learning rate.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "moment decay rates must be in (0,1), got {} / {}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Optimizer state: first/second moment accumulators mirroring the
/// parameter shapes, plus the step counter.
///
/// Moments are kept in `f64` regardless of the parameter type; the second
/// moment is a running variance estimate and follows the repo-wide rule of
/// 64-bit accumulation for such quantities.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new<T: Scalar>(net: &DenseNet<T>, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let n = net.param_count();
        Ok(Adam {
            cfg,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Applies one update in place. Aborts (without touching parameters) if
    /// any gradient is non-finite.
    pub fn apply<T: Scalar>(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        let flat = grads.to_flat_f64();
        if flat.len() != self.m.len() {
            return Err(Error::ContractViolation(format!(
                "optimizer state has {} accumulators but gradients have {} entries",
                self.m.len(),
                flat.len()
            )));
        }
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                step: self.step,
            });
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);

        let mut idx = 0usize;
        let n_layers = net.layers().len();
        for l in 0..n_layers {
            let (weights, bias) = net.layer_params_mut(l);
            for chunk in [weights, bias] {
                for p in chunk.iter_mut() {
                    let g = flat[idx];
                    self.m[idx] = b1 * self.m[idx] + (1.0 - b1) * g;
                    self.v[idx] = b2 * self.v[idx] + (1.0 - b2) * g * g;
                    let m_hat = self.m[idx] / bc1;
                    let v_hat = self.v[idx] / bc2;
                    let update = self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                    *p = T::of(p.f64() - update);
                    idx += 1;
                }
            }
        }
        Ok(())
    }
}

/// One mini-batch MSE training step.
///
/// Returns the pre-update batch loss (mean over samples of the mean
/// per-dimension squared error, accumulated in `f64`). Aborts with the step
/// index if the loss goes non-finite.
pub fn train_step<T: Scalar>(
    net: &mut DenseNet<T>,
    opt: &mut Adam,
    inputs: &[Vec<T>],
    targets: &[Vec<T>],
) -> Result<f64> {
    train_step_with(net, opt, inputs, |i, y| {
        let t = &targets[i];
        debug_assert_eq!(y.len(), t.len());
        let loss = mse(y, t);
        let scale = T::of(2.0 / y.len() as f64);
        let upstream = y
            .iter()
            .zip(t)
            .map(|(yi, ti)| scale * (*yi - *ti))
            .collect();
        (loss, upstream)
    })
}

/// One mini-batch training step with a caller-supplied loss.
///
/// `loss_fn(i, y)` receives the sample index and the network output and
/// returns the per-sample loss plus `dL/dy`. This is the hook the VAE
/// trainer builds its reparameterized ELBO on.
pub fn train_step_with<T: Scalar>(
    net: &mut DenseNet<T>,
    opt: &mut Adam,
    inputs: &[Vec<T>],
    mut loss_fn: impl FnMut(usize, &[T]) -> (f64, Vec<T>),
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let batch = inputs.len() as f64;
    let inv = T::of(1.0 / batch);

    let mut total = Gradients::zeros_like(net);
    let mut loss_acc = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let trace = net.forward_trace(x)?;
        let (loss, mut upstream) = loss_fn(i, trace.output());
        loss_acc += loss;
        for u in upstream.iter_mut() {
            *u = *u * inv;
        }
        let grads = net.backward(&trace, &upstream)?;
        total.accumulate(&grads);
    }
    let batch_loss = loss_acc / batch;
    if !batch_loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            step: opt.step_count(),
        });
    }
    opt.apply(net, &total)?;
    Ok(batch_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn scalar_linear_net() -> DenseNet<f32> {
        DenseNet::new(&[1, 1], &[Activation::Identity], 3).unwrap()
    }

    #[test]
    fn learns_slope_of_one_dimensional_regression() {
        // y = 2x; closed-form least squares on this noise-free fixture is
        // exactly slope 2, intercept 0. 200 steps must land within 0.05.
        let mut net = scalar_linear_net();
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.05)).unwrap();
        let xs: Vec<Vec<f32>> = (0..16).map(|i| vec![(i as f32 - 8.0) / 4.0]).collect();
        let ts: Vec<Vec<f32>> = xs.iter().map(|x| vec![2.0 * x[0]]).collect();
        for _ in 0..200 {
            train_step(&mut net, &mut opt, &xs, &ts).unwrap();
        }
        let slope = net.forward(&[1.0]).unwrap()[0] - net.forward(&[0.0]).unwrap()[0];
        assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn loss_is_non_increasing_on_a_linear_fixture() {
        let mut net = DenseNet::<f32>::new(&[2, 1], &[Activation::Identity], 8).unwrap();
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.02)).unwrap();
        let xs: Vec<Vec<f32>> = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let ts: Vec<Vec<f32>> = xs.iter().map(|x| vec![3.0 * x[0] - x[1]]).collect();
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = train_step(&mut net, &mut opt, &xs, &ts).unwrap();
            assert!(loss <= prev + 1e-9, "loss increased: {prev} -> {loss}");
            prev = loss;
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut net = DenseNet::<f32>::new(&[3, 2], &[Activation::Tanh], 4).unwrap();
        let reference = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.0)).unwrap();
        let xs = vec![vec![0.5, -0.5, 1.0]];
        let ts = vec![vec![1.0, 0.0]];
        train_step(&mut net, &mut opt, &xs, &ts).unwrap();
        assert_eq!(net, reference);
        assert_eq!(net.param_checksum(), reference.param_checksum());
    }

    #[test]
    fn loss_and_gradient_vanish_at_the_mse_minimum() {
        let mut net = scalar_linear_net();
        let x = vec![vec![0.7f32]];
        let target = vec![net.forward(&[0.7]).unwrap()];
        let before = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
        let loss = train_step(&mut net, &mut opt, &x, &target).unwrap();
        assert_eq!(loss, 0.0);
        // Zero gradient means zero Adam update even at nonzero lr.
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_loss_aborts_with_step_index() {
        let mut net = scalar_linear_net();
        let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
        let xs = vec![vec![1.0f32]];
        let err = train_step_with(&mut net, &mut opt, &xs, |_, _| {
            (f64::NAN, vec![0.0])
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "loss", step: 0 }));
    }

    #[test]
    fn accumulator_shapes_mirror_parameters() {
        let net = DenseNet::<f32>::new(&[4, 3, 2], &[Activation::Relu, Activation::Identity], 1)
            .unwrap();
        let opt = Adam::new(&net, AdamConfig::default()).unwrap();
        assert_eq!(opt.m.len(), net.param_count());
        assert_eq!(opt.v.len(), net.param_count());
    }
}
