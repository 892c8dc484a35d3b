//! Small fully connected networks with hand-written backpropagation.
//!
//! [`DenseStack`] is the shared building block: hidden layers use a
//! rectifier, the last layer uses the stack's configured output activation.
//! [`MlpLearner`] wraps a stack with an identity output and fits vector
//! targets by mean squared error; the fusion networks reuse the same stack
//! for their branches and head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Affine layer `out = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| T::c(rng.random_range(-bound..=bound)))
            .collect();
        Dense {
            weights: Matrix::from_vec(output, input, data).expect("sized buffer"),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, x: &[T], out: &mut [T]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.iter_rows().zip(&self.bias))
        {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            *o = acc;
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Gradients for every layer of a [`DenseStack`], same shapes as the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> StackGrads<T> {
    pub fn zeros_like(stack: &DenseStack<T>) -> Self {
        StackGrads {
            layers: stack
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn clear(&mut self) {
        self.scale(T::zero());
    }
}

/// Activations recorded during a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `inputs[l]` is the input to layer `l`; the last entry is the stack output.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.inputs.last().expect("non-empty trace")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseStack<T> {
    pub layers: Vec<Dense<T>>,
    pub output_activation: Activation,
}

impl<T: Scalar> DenseStack<T> {
    /// `sizes = [input, hidden.., output]`.
    pub fn random(sizes: &[usize], output_activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], rng))
            .collect();
        Ok(DenseStack {
            layers,
            output_activation,
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>, output_activation: Activation) -> Result<Self> {
        let stack = DenseStack {
            layers,
            output_activation,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Corrupt("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Corrupt(format!("layer {i} bias has wrong length")));
            }
            if i > 0 && l.input_dim() != self.layers[i - 1].output_dim() {
                return Err(Error::Corrupt(format!("layer {i} input does not chain")));
            }
            if !l.is_finite() {
                return Err(Error::Corrupt(format!("layer {i} has non-finite weights")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").output_dim()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); layer.output_dim()];
            layer.forward_into(&cur, &mut next);
            let act = self.activation(l);
            next.iter_mut().for_each(|v| *v = act.apply(*v));
            cur = next;
        }
        cur
    }

    pub fn forward_trace(&self, x: &[T]) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![T::zero(); layer.output_dim()];
            layer.forward_into(inputs.last().expect("pushed"), &mut z);
            let act = self.activation(l);
            let a = z.iter().map(|v| act.apply(*v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        Trace { inputs, pre }
    }

    /// Accumulates parameter gradients into `grads` given `dL/d(output)` and
    /// returns `dL/d(input)`.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &[T], grads: &mut StackGrads<T>) -> Vec<T> {
        let mut delta: Vec<T> = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= act.derivative(*z);
            }
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                g.bias[o] += *d;
                for (gw, x) in g.weights.row_mut(o).iter_mut().zip(input) {
                    *gw += *d * *x;
                }
            }
            let layer = &self.layers[l];
            let mut prev = vec![T::zero(); layer.input_dim()];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(layer.weights.row(o)) {
                    *p += *d * *w;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// RMSProp moving-average decay.
    pub decay: f64,
    /// RMSProp denominator stabiliser.
    pub stabilizer: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            learning_rate: 1e-3,
            decay: 0.9,
            stabilizer: 1e-8,
        }
    }
}

/// Per-parameter optimizer state, laid out in stack order.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    cache: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            cache: Vec::new(),
        }
    }

    /// Applies one update to every stack, in order, from matching gradients.
    pub fn step(&mut self, stacks: &mut [&mut DenseStack<T>], grads: &[&StackGrads<T>]) {
        let lr = T::c(self.config.learning_rate);
        let decay = T::c(self.config.decay);
        let stab = T::c(self.config.stabilizer);
        let mut slot = 0;
        for (stack, g) in stacks.iter_mut().zip(grads) {
            for (layer, lg) in stack.layers.iter_mut().zip(&g.layers) {
                for (params, grad) in [
                    (layer.weights.as_mut_slice(), lg.weights.as_slice()),
                    (layer.bias.as_mut_slice(), lg.bias.as_slice()),
                ] {
                    match self.config.kind {
                        OptimizerKind::Sgd => {
                            for (p, g) in params.iter_mut().zip(grad) {
                                *p -= lr * *g;
                            }
                        }
                        OptimizerKind::RmsProp => {
                            if self.cache.len() <= slot {
                                self.cache.push(vec![T::zero(); params.len()]);
                            }
                            let cache = &mut self.cache[slot];
                            for ((p, g), c) in params.iter_mut().zip(grad).zip(cache.iter_mut()) {
                                *c = decay * *c + (T::one() - decay) * *g * *g;
                                *p -= lr * *g / (c.sqrt() + stab);
                            }
                        }
                    }
                    slot += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![32, 16],
            optimizer: OptimizerConfig::default(),
            epochs: 5,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Vector-output regression network (rectifier hidden layers, identity output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpLearner<T> {
    pub net: DenseStack<T>,
}

pub fn fit_mlp<T: Scalar>(
    features: &Matrix<T>,
    targets: &Matrix<T>,
    config: &MlpConfig,
) -> Result<MlpLearner<T>> {
    let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
    sizes.push(features.cols());
    sizes.extend_from_slice(&config.hidden);
    sizes.push(targets.cols());
    let mut net = MlpLearner::new(&sizes, config.seed)?;
    net.train(features, targets, config)?;
    Ok(net)
}

impl<T: Scalar> MlpLearner<T> {
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(MlpLearner {
            net: DenseStack::random(sizes, Activation::Identity, &mut rng)?,
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        Ok(MlpLearner {
            net: DenseStack::from_layers(layers, Activation::Identity)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn predict(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        if features.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), features.cols()));
        }
        let mut out = Matrix::zeros(features.rows(), self.output_dim());
        for i in 0..features.rows() {
            out.row_mut(i).copy_from_slice(&self.net.forward(features.row(i)));
        }
        Ok(out)
    }

    /// Batch objective `1/n sum_i ||net(x_i) - t_i||^2` and its gradient.
    pub fn loss_and_gradients(&self, features: &Matrix<T>, targets: &Matrix<T>) -> (T, StackGrads<T>) {
        let idx: Vec<usize> = (0..features.rows()).collect();
        let mut grads = StackGrads::zeros_like(&self.net);
        let loss = self.accumulate(features, targets, &idx, &mut grads);
        (loss, grads)
    }

    fn accumulate(
        &self,
        features: &Matrix<T>,
        targets: &Matrix<T>,
        batch: &[usize],
        grads: &mut StackGrads<T>,
    ) -> T {
        let inv = T::one() / T::from_usize_lossy(batch.len().max(1));
        let two = T::c(2.0);
        let mut loss = T::zero();
        let mut grad_out = vec![T::zero(); self.output_dim()];
        for &i in batch {
            let trace = self.net.forward_trace(features.row(i));
            for ((g, p), t) in grad_out.iter_mut().zip(trace.output()).zip(targets.row(i)) {
                let r = *p - *t;
                loss += r * r;
                *g = two * r * inv;
            }
            self.net.backward(&trace, &grad_out, grads);
        }
        loss * inv
    }

    /// Runs `config.epochs` epochs of mini-batch descent from the current weights.
    /// Returns the mean batch loss of each epoch.
    pub fn train(&mut self, features: &Matrix<T>, targets: &Matrix<T>, config: &MlpConfig) -> Result<Vec<T>> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::EmptyInput("network training set"));
        }
        if targets.rows() != n {
            return Err(Error::dim("network targets", n, targets.rows()));
        }
        if features.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), features.cols()));
        }
        if targets.cols() != self.output_dim() {
            return Err(Error::dim("network output", self.output_dim(), targets.cols()));
        }
        if config.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let batch_size = config.batch_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5a11);
        let mut optimizer = Optimizer::new(config.optimizer);
        let mut grads = StackGrads::zeros_like(&self.net);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = T::zero();
            let mut batches = 0usize;
            for batch in order.chunks(batch_size) {
                grads.clear();
                let loss = self.accumulate(features, targets, batch, &mut grads);
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                optimizer.step(&mut [&mut self.net], &[&grads]);
                epoch_loss += loss;
                batches += 1;
            }
            if !self.net.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            history.push(epoch_loss / T::from_usize_lossy(batches));
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, v).unwrap()
    }

    fn per_component_mse(net: &MlpLearner<f64>, x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
        let p = net.predict(x).unwrap();
        p.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / y.as_slice().len() as f64
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut w = Matrix::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let net = MlpLearner::from_layers(vec![Dense { weights: w, bias: vec![0.0; 3] }]).unwrap();
        let x = Matrix::from_rows(&[[0.5, -2.0, 3.25]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpLearner::<f64>::from_layers(vec![Dense::zeros(4, 6), Dense::zeros(6, 2)]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(matches!(net.predict(&Matrix::zeros(1, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_final_layer_stays_zero_on_zero_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = MlpLearner::<f64>::new(&[3, 5, 2], 9).unwrap();
        net.net.layers[1] = Dense::zeros(5, 2);
        let x = rand_matrix(10, 3, &mut rng);
        let y = Matrix::zeros(10, 2);
        let cfg = MlpConfig { hidden: vec![5], epochs: 3, batch_size: 4, ..MlpConfig::default() };
        let losses = net.train(&x, &y, &cfg).unwrap();
        assert!(losses.iter().all(|&l| l == 0.0));
        assert!(net.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_network_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_matrix(100, 3, &mut rng);
        let map = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let mut y = Matrix::zeros(100, 2);
        for i in 0..100 {
            for o in 0..2 {
                let v: f64 = (0..3).map(|j| map[o][j] * x.get(i, j)).sum::<f64>() + 0.1 * o as f64;
                y.set(i, o, v);
            }
        }
        let cfg = MlpConfig {
            hidden: vec![],
            optimizer: OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 0.05, ..Default::default() },
            epochs: 200,
            batch_size: 10,
            seed: 1,
        };
        let net = fit_mlp(&x, &y, &cfg).unwrap();
        // The least-squares solution is exact here, so the fit should approach zero error.
        assert!(per_component_mse(&net, &x, &y) < 1e-3);
    }

    fn check_gradients(net: &MlpLearner<f64>, x: &Matrix<f64>, y: &Matrix<f64>) {
        let (_, grads) = net.loss_and_gradients(x, y);
        let h = 1e-5;
        for l in 0..net.net.layers.len() {
            let n_w = net.net.layers[l].weights.as_slice().len();
            for k in 0..n_w + net.net.layers[l].bias.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let (p, m, analytic) = if k < n_w {
                    (
                        &mut plus.net.layers[l].weights.as_mut_slice()[k],
                        &mut minus.net.layers[l].weights.as_mut_slice()[k],
                        grads.layers[l].weights.as_slice()[k],
                    )
                } else {
                    (
                        &mut plus.net.layers[l].bias[k - n_w],
                        &mut minus.net.layers[l].bias[k - n_w],
                        grads.layers[l].bias[k - n_w],
                    )
                };
                *p += h;
                *m -= h;
                let numeric = (plus.loss_and_gradients(x, y).0 - minus.loss_and_gradients(x, y).0) / (2.0 * h);
                let scale = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / scale < 1e-4,
                    "layer {l} param {k}: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_matrix(5, 4, &mut rng);
        let y = rand_matrix(5, 3, &mut rng);
        let mut net = MlpLearner::<f64>::new(&[4, 6, 5, 3], 2).unwrap();
        for l in &mut net.net.layers {
            for b in &mut l.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        check_gradients(&net, &x, &y);
    }

    #[test]
    fn gradients_stay_correct_after_training_with_each_optimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_matrix(5, 3, &mut rng);
        let y = rand_matrix(5, 2, &mut rng);
        for kind in [OptimizerKind::Sgd, OptimizerKind::RmsProp] {
            let cfg = MlpConfig {
                hidden: vec![7],
                optimizer: OptimizerConfig { kind, learning_rate: 0.01, ..Default::default() },
                epochs: 3,
                batch_size: 2,
                seed: 4,
            };
            let net = fit_mlp(&x, &y, &cfg).unwrap();
            check_gradients(&net, &x, &y);
        }
    }

    #[test]
    fn rmsprop_first_step_has_normalised_magnitude() {
        // Single parameter: loss (w - 3)^2 at w = 0 has gradient -6.
        let mut stack = DenseStack::<f64>::from_layers(
            vec![Dense { weights: Matrix::from_vec(1, 1, vec![0.0]).unwrap(), bias: vec![0.0] }],
            Activation::Identity,
        )
        .unwrap();
        let mut g = StackGrads { layers: vec![Dense { weights: Matrix::from_vec(1, 1, vec![-6.0]).unwrap(), bias: vec![0.0] }] };
        let cfg = OptimizerConfig { kind: OptimizerKind::RmsProp, learning_rate: 0.01, decay: 0.9, stabilizer: 1e-8 };
        let mut opt = Optimizer::new(cfg);
        opt.step(&mut [&mut stack], &[&g]);
        let moved = stack.layers[0].weights.get(0, 0);
        assert!(moved > 0.0, "step must oppose the gradient sign");
        assert!((moved - 0.01 / 0.1f64.sqrt()).abs() < 1e-8);

        g.layers[0].weights.set(0, 0, -6.0);
        let mut sgd_stack = DenseStack::<f64>::from_layers(vec![Dense::zeros(1, 1)], Activation::Identity).unwrap();
        Optimizer::new(OptimizerConfig { kind: OptimizerKind::Sgd, ..cfg }).step(&mut [&mut sgd_stack], &[&g]);
        assert_eq!(sgd_stack.layers[0].weights.get(0, 0).signum(), moved.signum());
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_matrix(40, 3, &mut rng);
        let y = rand_matrix(40, 2, &mut rng);
        let cfg = MlpConfig { hidden: vec![8, 4], epochs: 4, batch_size: 7, seed: 77, ..Default::default() };
        let a = fit_mlp(&x, &y, &cfg).unwrap();
        let b = fit_mlp(&x, &y, &cfg).unwrap();
        let pa = a.predict(&x).unwrap();
        let pb = b.predict(&x).unwrap();
        let bits = |m: &Matrix<f64>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa), bits(&pb));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let x = Matrix::from_rows(&[[1e3, -1e3], [2e3, 5e2]]).unwrap();
        let y = Matrix::from_rows(&[[1e3], [-1e3]]).unwrap();
        let cfg = MlpConfig {
            hidden: vec![],
            optimizer: OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 10.0, ..Default::default() },
            epochs: 50,
            batch_size: 2,
            seed: 0,
        };
        match fit_mlp(&x, &y, &cfg) {
            Err(Error::TrainingDiverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trains_in_f32() {
        let x = Matrix::from_vec(4, 1, vec![0.0f32, 1.0, 2.0, 3.0]).unwrap();
        let y = Matrix::from_vec(4, 1, vec![0.0f32, 2.0, 4.0, 6.0]).unwrap();
        let cfg = MlpConfig {
            hidden: vec![],
            optimizer: OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 0.02, ..Default::default() },
            epochs: 300,
            batch_size: 4,
            seed: 0,
        };
        let net = fit_mlp(&x, &y, &cfg).unwrap();
        let p = net.predict(&x).unwrap();
        assert!((p.get(3, 0) - 6.0).abs() < 0.05);
    }
}
