use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Added to stored variances before taking the square root.
pub const NORM_EPS: f64 = 1e-8;

/// Static normalization attached to a hidden layer.
///
/// `mean` and `variance` are buffers refreshed by a dedicated data pass
/// (never by gradient steps); `scale` and `shift` are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NormLayer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }
}

/// One dense layer: `z = W x + b`, weights row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: Option<NormLayer>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// All weights and biases of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Build a network with the given dimension chain, e.g. `[16, 64, 64, 6]`
    /// for a 16-feature input, two hidden layers of width 64 and 6 classes.
    ///
    /// Weights are uniform in `±sqrt(6/(in+out))`, biases zero. With
    /// `hidden_norm` every hidden layer gets an identity-initialized static
    /// normalization.
    pub fn init(dims: &[usize], hidden_norm: bool, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "model needs at least an input and an output dimension".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = seed::child_rng(seed, "model-init", 0, 0);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let hidden = l + 2 < dims.len();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                bias: vec![0.0; out_dim],
                norm: (hidden && hidden_norm).then(|| NormLayer::identity(out_dim)),
            });
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    /// Number of classes (output dimension of the last layer).
    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.bias.iter().all(|v| v.is_finite())
                && l.norm.as_ref().is_none_or(|n| {
                    n.mean.iter().all(|v| v.is_finite())
                        && n.variance.iter().all(|v| v.is_finite() && *v >= 0.0)
                        && n.scale.iter().all(|v| v.is_finite())
                        && n.shift.iter().all(|v| v.is_finite())
                })
        })
    }

    /// A copy with every entry (including norm buffers) set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_value_mut(|v| *v = 0.0);
        out
    }

    /// Visit every stored value: weights, biases and, when present, the four
    /// normalization vectors. Aggregation treats the model as a flat vector.
    pub fn for_each_value_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
            if let Some(norm) = &mut layer.norm {
                norm.mean.iter_mut().for_each(&mut f);
                norm.variance.iter_mut().for_each(&mut f);
                norm.scale.iter_mut().for_each(&mut f);
                norm.shift.iter_mut().for_each(&mut f);
            }
        }
    }

    /// Zip `self` and `other` element-wise, mutating `self`.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(&mut f64, f64)) {
        assert_eq!(
            self.layers.len(),
            other.layers.len(),
            "model layouts must match"
        );
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            assert_eq!(a.weights.len(), b.weights.len(), "model layouts must match");
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                f(x, *y);
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                f(x, *y);
            }
            match (&mut a.norm, &b.norm) {
                (Some(na), Some(nb)) => {
                    for (x, y) in na.mean.iter_mut().zip(&nb.mean) {
                        f(x, *y);
                    }
                    for (x, y) in na.variance.iter_mut().zip(&nb.variance) {
                        f(x, *y);
                    }
                    for (x, y) in na.scale.iter_mut().zip(&nb.scale) {
                        f(x, *y);
                    }
                    for (x, y) in na.shift.iter_mut().zip(&nb.shift) {
                        f(x, *y);
                    }
                }
                (None, None) => {}
                _ => panic!("model layouts must match"),
            }
        }
    }
}

/// Per-layer records of a forward pass, kept for backpropagation.
pub(crate) struct ForwardTrace {
    /// Input seen by each layer.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer (post-normalization for hidden
    /// layers); the last entry holds the logits.
    pub preact: Vec<Vec<f64>>,
    /// Standardized affine output `(z - mean)/sqrt(var + eps)` for hidden
    /// layers carrying normalization.
    pub standardized: Vec<Option<Vec<f64>>>,
}

pub(crate) fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    let expected = params.input_dim();
    if x.len() != expected {
        return Err(Error::Shape {
            context: "forward input",
            expected,
            actual: x.len(),
        });
    }
    let n_layers = params.layers.len();
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(n_layers),
        preact: Vec::with_capacity(n_layers),
        standardized: Vec::with_capacity(n_layers),
    };
    let mut cur = x.to_vec();
    let mut z = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        layer.affine(&cur, &mut z);
        trace.inputs.push(std::mem::take(&mut cur));
        let last = l + 1 == n_layers;
        if last {
            trace.standardized.push(None);
            trace.preact.push(z.clone());
            break;
        }
        let pre = match &layer.norm {
            Some(norm) => {
                let mut zhat = Vec::with_capacity(layer.out_dim);
                let mut h = Vec::with_capacity(layer.out_dim);
                for (o, &zo) in z.iter().enumerate() {
                    let s = (zo - norm.mean[o]) / (norm.variance[o] + NORM_EPS).sqrt();
                    zhat.push(s);
                    h.push(norm.scale[o] * s + norm.shift[o]);
                }
                trace.standardized.push(Some(zhat));
                h
            }
            None => {
                trace.standardized.push(None);
                z.clone()
            }
        };
        cur = pre.iter().map(|&v| v.max(0.0)).collect();
        trace.preact.push(pre);
    }
    Ok(trace)
}

/// Raw (pre-softmax) class scores for one input.
pub fn forward_logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let expected = params.input_dim();
    if x.len() != expected {
        return Err(Error::Shape {
            context: "forward input",
            expected,
            actual: x.len(),
        });
    }
    let n_layers = params.layers.len();
    let mut cur = x.to_vec();
    let mut z = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        layer.affine(&cur, &mut z);
        if l + 1 == n_layers {
            return Ok(z);
        }
        cur.clear();
        match &layer.norm {
            Some(norm) => {
                for (o, &zo) in z.iter().enumerate() {
                    let s = (zo - norm.mean[o]) / (norm.variance[o] + NORM_EPS).sqrt();
                    cur.push((norm.scale[o] * s + norm.shift[o]).max(0.0));
                }
            }
            None => cur.extend(z.iter().map(|&v| v.max(0.0))),
        }
    }
    unreachable!("model has at least one layer")
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_maps_to_zero_logits() {
        let mut params = ModelParams::init(&[4, 3, 2], false, 0).unwrap();
        params.for_each_value_mut(|v| *v = 0.0);
        let logits = forward_logits(&params, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut params = ModelParams::init(&[3, 3], false, 0).unwrap();
        let layer = &mut params.layers[0];
        layer.weights.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let logits = forward_logits(&params, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(logits, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_matches_plain_matmul_oracle() {
        // Independent straightforward evaluation of a random two-layer net.
        let params = ModelParams::init(&[5, 4, 3], false, 42).unwrap();
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();

        let mut h = [0.0; 4];
        for o in 0..4 {
            let mut acc = params.layers[0].bias[o];
            for i in 0..5 {
                acc += params.layers[0].weights[o * 5 + i] * x[i];
            }
            h[o] = acc.max(0.0);
        }
        let mut expect = vec![0.0; 3];
        for o in 0..3 {
            let mut acc = params.layers[1].bias[o];
            for i in 0..4 {
                acc += params.layers[1].weights[o * 4 + i] * h[i];
            }
            expect[o] = acc;
        }

        let logits = forward_logits(&params, &x).unwrap();
        for (a, b) in logits.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_error_on_bad_input() {
        let params = ModelParams::init(&[4, 2], false, 0).unwrap();
        assert!(matches!(
            forward_logits(&params, &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelParams::init(&[8, 16, 4], true, 9).unwrap();
        let b = ModelParams::init(&[8, 16, 4], true, 9).unwrap();
        assert_eq!(a, b);
        let limit = (6.0_f64 / (8.0 + 16.0)).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(a.layers[0].bias.iter().all(|&b| b == 0.0));
        assert!(a.layers[0].norm.is_some());
        assert!(a.layers[1].norm.is_none());
    }
}
