use super::model::ModelParams;

/// Gradients (or optimizer velocity) for every trainable tensor of a model.
/// Normalization mean/variance are buffers, not trainables, so they have no
/// slot here.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Empty unless the layer carries normalization.
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    let norm_dim = l.norm.as_ref().map_or(0, |n| n.scale.len());
                    LayerGrads {
                        weights: vec![0.0; l.weights.len()],
                        bias: vec![0.0; l.bias.len()],
                        scale: vec![0.0; norm_dim],
                        shift: vec![0.0; norm_dim],
                    }
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|v| *v *= factor);
            layer.bias.iter_mut().for_each(|v| *v *= factor);
            layer.scale.iter_mut().for_each(|v| *v *= factor);
            layer.shift.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
            for (x, y) in a.scale.iter_mut().zip(&b.scale) {
                *x += y;
            }
            for (x, y) in a.shift.iter_mut().zip(&b.shift) {
                *x += y;
            }
        }
    }
}

/// SGD with momentum and decoupled-into-the-velocity weight decay:
///
/// ```text
/// v <- momentum * v + g + weight_decay * p
/// p <- p - lr * v
/// ```
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdState {
    pub fn new(params: &ModelParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: Gradients::zeros_like(params),
            learning_rate,
            momentum,
            weight_decay,
        }
    }
}

/// One optimizer step over all trainable tensors. Normalization buffers are
/// left untouched.
pub fn sgd_step(params: &mut ModelParams, state: &mut SgdState, grads: &Gradients) {
    let lr = state.learning_rate;
    let m = state.momentum;
    let wd = state.weight_decay;
    for ((layer, v), g) in params
        .layers
        .iter_mut()
        .zip(&mut state.velocity.layers)
        .zip(&grads.layers)
    {
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = m * *v + g + wd * *p;
                *p -= lr * *v;
            }
        };
        update(&mut layer.weights, &mut v.weights, &g.weights);
        update(&mut layer.bias, &mut v.bias, &g.bias);
        if let Some(norm) = &mut layer.norm {
            update(&mut norm.scale, &mut v.scale, &g.scale);
            update(&mut norm.shift, &mut v.shift, &g.shift);
        }
    }
}

/// Cosine-annealed learning rate over communication rounds:
/// `lr(r) = base * 0.5 * (1 + cos(pi * r / total))`, floored at
/// `min_factor * base` so the final rounds never train at exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub total_rounds: usize,
    pub min_factor: f64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_rounds: usize) -> Self {
        Self {
            base_lr,
            total_rounds,
            min_factor: 1e-4,
        }
    }

    pub fn lr_at(&self, round: usize) -> f64 {
        let total = self.total_rounds.max(1) as f64;
        let progress = (round.min(self.total_rounds)) as f64 / total;
        let lr = self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        lr.max(self.base_lr * self.min_factor)
    }
}
