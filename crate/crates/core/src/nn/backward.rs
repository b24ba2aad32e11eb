use crate::error::Result;

use super::loss::{log_softmax, terms_loss, LossSample, LossTerm};
use super::model::{forward_trace, ModelParams, NORM_EPS};
use super::optim::Gradients;

/// Mean loss of a batch of samples under the current parameters.
///
/// Forward-only twin of [`backward`]; the finite-difference oracles perturb
/// parameters and call this.
pub fn batch_loss(params: &ModelParams, batch: &[LossSample]) -> Result<f64> {
    let mut total = 0.0;
    for sample in batch {
        let trace = forward_trace(params, &sample.input)?;
        let log_probs = log_softmax(trace.preact.last().expect("at least one layer"));
        total += terms_loss(&sample.terms, &log_probs)?;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Analytic gradients of the mean batch loss with respect to every trainable
/// parameter (weights, biases, normalization scale and shift). Returns the
/// loss value alongside the gradients.
///
/// The gradient of each term with respect to the logits has the closed form
/// `softmax(z) - target` (one-hot target for cross entropy, the soft target
/// for KL divergence), which is then propagated through the dense stack.
pub fn backward(params: &ModelParams, batch: &[LossSample]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(params);
    let mut total = 0.0;
    let n_layers = params.layers.len();
    for sample in batch {
        let trace = forward_trace(params, &sample.input)?;
        let logits = trace.preact.last().expect("at least one layer");
        let log_probs = log_softmax(logits);
        let probs: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
        total += terms_loss(&sample.terms, &log_probs)?;

        // d(loss)/d(logits)
        let classes = probs.len();
        let mut g = vec![0.0; classes];
        for term in &sample.terms {
            match term {
                LossTerm::CrossEntropy { label, weight } => {
                    for i in 0..classes {
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        g[i] += weight * (probs[i] - onehot);
                    }
                }
                LossTerm::KlDivergence { target, weight } => {
                    let mass: f64 = target.iter().sum();
                    for i in 0..classes {
                        g[i] += weight * (probs[i] * mass - target[i]);
                    }
                }
            }
        }

        // Walk the layers top-down. For the output layer `g` already sits on
        // the affine output; below it `g` arrives on the activation output
        // and passes through ReLU and (when present) the normalization.
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            let g_affine = if l + 1 == n_layers {
                g
            } else {
                let pre = &trace.preact[l];
                let mut gh: Vec<f64> = g
                    .iter()
                    .zip(pre)
                    .map(|(&gi, &h)| if h > 0.0 { gi } else { 0.0 })
                    .collect();
                if let Some(norm) = &layer.norm {
                    let zhat = trace.standardized[l]
                        .as_ref()
                        .expect("standardized values recorded for norm layers");
                    let layer_grads = &mut grads.layers[l];
                    for o in 0..layer.out_dim {
                        layer_grads.scale[o] += gh[o] * zhat[o];
                        layer_grads.shift[o] += gh[o];
                        gh[o] *= norm.scale[o] / (norm.variance[o] + NORM_EPS).sqrt();
                    }
                }
                gh
            };

            let x = &trace.inputs[l];
            let layer_grads = &mut grads.layers[l];
            for (o, &go) in g_affine.iter().enumerate() {
                layer_grads.bias[o] += go;
                let row = &mut layer_grads.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += go * xi;
                }
            }

            if l > 0 {
                let mut g_prev = vec![0.0; layer.in_dim];
                for (o, &go) in g_affine.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gp, w) in g_prev.iter_mut().zip(row) {
                        *gp += go * w;
                    }
                }
                g = g_prev;
            } else {
                g = Vec::new();
            }
        }
    }

    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}
