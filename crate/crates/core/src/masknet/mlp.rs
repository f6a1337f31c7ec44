//! Fully connected network with ReLU hidden layers and a sigmoid output
//! layer, trained on binary cross-entropy.
//!
//! Weights are stored `out × in`, so a batch of row vectors `X` (B × in)
//! maps to `X·Wᵀ + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Logits are clamped to this magnitude before the inference sigmoid so that
/// mask values stay strictly inside (0, 1) in double precision.
const MAX_INFERENCE_LOGIT: f64 = 34.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Dropout rates for one training step; `None` disables dropout.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub input: f64,
    pub hidden: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ReLU that lets NaN through, so corrupt parameters surface downstream.
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Binary cross-entropy of `sigmoid(z)` against target `t`, evaluated from
/// the logit for numerical stability.
pub fn bce_from_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
}

impl Mlp {
    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn glorot(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims
                .windows(2)
                .map(|w| Layer { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Pre-sigmoid outputs for a batch, no dropout.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (last, hidden) = self.layers.split_last().expect("non-empty network");
        let mut h = x.to_owned();
        for layer in hidden {
            h = layer.affine(h.view());
            h.mapv_inplace(|v| relu(v));
        }
        last.affine(h.view())
    }

    /// Sigmoid outputs in (0, 1).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.logits(x)
            .mapv(|z| sigmoid(z.clamp(-MAX_INFERENCE_LOGIT, MAX_INFERENCE_LOGIT)))
    }

    /// Batch loss: cross-entropy summed over outputs, averaged over rows.
    pub fn loss(&self, x: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> f64 {
        let z = self.logits(x);
        let total: f64 = Zip::from(&z).and(&targets).fold(0.0, |acc, &z, &t| acc + bce_from_logit(z, t));
        total / x.nrows() as f64
    }

    /// Loss and parameter gradients for one batch. With `dropout`, inverted
    /// dropout masks are drawn from `rng` for the input and every hidden
    /// activation.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        dropout: Option<Dropout>,
        rng: &mut impl Rng,
    ) -> (f64, Gradients) {
        let batch = x.nrows() as f64;
        let n_layers = self.layers.len();

        let drop = |a: &mut Array2<f64>, p: f64, rng: &mut dyn rand::RngCore| -> Option<Array2<f64>> {
            if p <= 0.0 {
                return None;
            }
            let keep = 1.0 - p;
            let mask = Array2::from_shape_simple_fn(a.raw_dim(), || {
                if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
            });
            *a *= &mask;
            Some(mask)
        };

        // forward, caching layer inputs, pre-activations and dropout masks
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(n_layers);

        let mut a = x.to_owned();
        masks.push(dropout.and_then(|d| drop(&mut a, d.input, rng)));
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(a.view());
            inputs.push(a);
            if i + 1 == n_layers {
                pre.push(z);
                break;
            }
            let mut h = z.mapv(|v| relu(v));
            pre.push(z);
            masks.push(dropout.and_then(|d| drop(&mut h, d.hidden, rng)));
            a = h;
        }

        let logits = pre.last().unwrap();
        let loss = Zip::from(logits)
            .and(&targets)
            .fold(0.0, |acc, &z, &t| acc + bce_from_logit(z, t))
            / batch;

        // d loss / d logits = (sigmoid(z) - t) / B
        let mut delta = Zip::from(logits)
            .and(&targets)
            .map_collect(|&z, &t| (sigmoid(z) - t) / batch);

        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            grads.push(Layer {
                weights: delta.t().dot(&inputs[i]),
                bias: delta.sum_axis(Axis(0)),
            });
            if i == 0 {
                break;
            }
            let mut d_in = delta.dot(&layer.weights);
            if let Some(mask) = &masks[i] {
                d_in *= mask;
            }
            Zip::from(&mut d_in).and(&pre[i - 1]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = d_in;
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    /// Plain gradient step `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients { layers: Mlp::zeros(&net.dims()).layers }
    }

    /// `self ← momentum·self + g`, for heavy-ball SGD.
    pub fn accumulate(&mut self, momentum: f64, g: &Gradients) {
        for (v, g) in self.layers.iter_mut().zip(&g.layers) {
            v.weights.mapv_inplace(|x| x * momentum);
            v.weights += &g.weights;
            v.bias.mapv_inplace(|x| x * momentum);
            v.bias += &g.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (i, layer) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs()];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut s = layer.bias[r];
                for (c, ac) in a.iter().enumerate() {
                    s += layer.weights[[r, c]] * ac;
                }
                *zr = s;
            }
            a = if i + 1 == net.layers.len() {
                z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
            } else {
                z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect()
            };
        }
        a
    }

    #[test]
    fn tiny_network_matches_reference_forward() {
        let mut net = Mlp::glorot(&[4, 3, 3, 3, 4], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in &mut net.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
        let y = net.predict(x.view());
        for r in 0..6 {
            let expected = reference_forward(&net, &x.row(r).to_vec());
            for (a, b) in y.row(r).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let net = Mlp::zeros(&[5, 4, 4, 4, 6]);
        let x = Array2::from_elem((3, 5), 7.0);
        assert!(net.predict(x.view()).iter().all(|v| *v == 0.5));
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        let mut net = Mlp::glorot(&[3, 4, 2], 2);
        net.layers[1].bias.fill(1e6);
        net.layers[1].bias[1] = -1e6;
        let y = net.predict(Array2::from_elem((2, 3), 1.0).view());
        assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let a = Mlp::glorot(&[20, 10, 6], 5);
        let b = Mlp::glorot(&[20, 10, 6], 5);
        let c = Mlp::glorot(&[20, 10, 6], 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn bce_is_stable_and_positive() {
        assert!((bce_from_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_from_logit(800.0, 0.0).is_finite());
        assert!(bce_from_logit(-800.0, 1.0).is_finite());
        assert!(bce_from_logit(3.0, 1.0) > 0.0);
    }

    #[test]
    fn output_gradient_vanishes_when_output_equals_target() {
        let net = Mlp::glorot(&[3, 4, 2], 4);
        let x = Array2::from_shape_vec((2, 3), vec![0.1, -0.3, 0.8, 1.0, 0.2, -0.5]).unwrap();
        let targets = net.predict(x.view());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = net.loss_and_gradients(x.view(), targets.view(), None, &mut rng);
        // bias gradient of the output layer is the summed logit gradient
        assert!(g.layers[1].bias.iter().all(|v| v.abs() < 1e-15));
        assert!(g.layers.iter().all(|l| l.weights.iter().all(|v| v.abs() < 1e-15)));
    }

    #[test]
    fn dropout_changes_gradient_and_is_seeded() {
        let net = Mlp::glorot(&[6, 8, 3], 4);
        let x = Array2::from_elem((4, 6), 0.5);
        let t = Array2::from_elem((4, 3), 1.0);
        let d = Some(Dropout { input: 0.2, hidden: 0.5 });
        let (l1, g1) = net.loss_and_gradients(x.view(), t.view(), d, &mut ChaCha8Rng::seed_from_u64(3));
        let (l2, g2) = net.loss_and_gradients(x.view(), t.view(), d, &mut ChaCha8Rng::seed_from_u64(3));
        let (l3, _) = net.loss_and_gradients(x.view(), t.view(), None, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(l1, l2);
        assert_eq!(g1.layers[0].weights, g2.layers[0].weights);
        assert_ne!(l1, l3);
    }
}
