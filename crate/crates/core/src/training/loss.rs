use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::InterpretableHead;

/// Elastic-net penalty `(1 − α)·½·‖m‖₂² + α·‖m‖₁`.
///
/// With `frobenius_squared = false` the L2 part is the unsquared norm
/// `(1 − α)·½·‖m‖₂`.
pub fn elastic_net<'a>(
    values: impl IntoIterator<Item = &'a f64>,
    alpha: f64,
    frobenius_squared: bool,
) -> f64 {
    let (sq, abs) = values
        .into_iter()
        .fold((0.0, 0.0), |(sq, abs), v| (sq + v * v, abs + v.abs()));
    let l2 = if frobenius_squared { sq } else { sq.sqrt() };
    (1.0 - alpha) * 0.5 * l2 + alpha * abs
}

/// (Sub)gradient of [`elastic_net`], using `sign(0) = 0` for the L1 part
/// and `0` for the unsquared norm at the origin.
pub fn elastic_net_grad<D: ndarray::Dimension>(
    values: &ndarray::Array<f64, D>,
    alpha: f64,
    frobenius_squared: bool,
) -> ndarray::Array<f64, D> {
    let l2_scale = if frobenius_squared {
        1.0 - alpha
    } else {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            (1.0 - alpha) * 0.5 / norm
        } else {
            0.0
        }
    };
    values.mapv(|v| l2_scale * v + alpha * sign(v))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    /// `λ_π · mean_i R_α(π(x_i))`
    pub gate_penalty: f64,
    /// `λ_w · R_α(W)`
    pub weight_penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// `None` for heads without a gate.
    pub offsets: Option<Array1<f64>>,
}

/// Samples a `batch × k` inverted-dropout mask: each entry is kept with
/// probability `1 − rate` and then scaled by `1/(1 − rate)`.
pub fn sample_dropout_mask(rng: &mut impl Rng, batch: usize, k: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn((batch, k), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

/// Batch objective and its analytic gradients:
///
/// `mean_i CE(W·(mᵢ ⊙ π(xᵢ)) + b, yᵢ) + λ_π·mean_i R_α(π(xᵢ)) + λ_w·R_α(W)`
///
/// The gate penalty is taken on `π` before the dropout mask and is omitted
/// for heads without a gate. At the gate kink `p = o` the derivative is 0.
pub fn loss(
    batch: ArrayView2<f64>,
    labels: &[usize],
    head: &InterpretableHead,
    cfg: &TrainConfig,
    mask: Option<ArrayView2<f64>>,
) -> Result<(LossBreakdown, Gradients)> {
    let (b, k) = batch.dim();
    if b == 0 {
        return Err(Error::EmptySplit("loss over an empty batch".into()));
    }
    if k != head.k() || labels.len() != b {
        return Err(Error::DimMismatch(format!(
            "batch {b}x{k} with {} labels for a head with k = {}",
            labels.len(),
            head.k()
        )));
    }
    if let Some(m) = mask {
        if m.dim() != (b, k) {
            return Err(Error::DimMismatch(format!(
                "dropout mask is {:?}, batch is {b}x{k}",
                m.dim()
            )));
        }
    }
    let num_classes = head.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::InvalidLabels(format!(
            "label {y} for a head with {num_classes} classes"
        )));
    }

    let weights = &head.linear.weights;
    let inv_b = 1.0 / b as f64;
    let mut ce = 0.0;
    let mut gate_pen = 0.0;
    let mut grad_w = Array2::<f64>::zeros(weights.dim());
    let mut grad_b = Array1::<f64>::zeros(num_classes);
    let mut grad_o = head.gate.as_ref().map(|_| Array1::<f64>::zeros(k));

    for (i, p_row) in batch.rows().into_iter().enumerate() {
        let pi = head.gated(p_row)?;
        let z = match mask {
            Some(m) => &pi * &m.row(i),
            None => pi.clone(),
        };
        let logits = weights.dot(&z) + &head.linear.bias;
        let (sample_ce, probs) = softmax_cross_entropy(logits.view(), labels[i]);
        ce += sample_ce;

        // dCE/dlogits = softmax − onehot, averaged over the batch
        let mut g = probs;
        g[labels[i]] -= 1.0;
        g *= inv_b;

        Zip::from(grad_w.rows_mut())
            .and(&g)
            .for_each(|mut row, &gc| row.scaled_add(gc, &z));
        grad_b += &g;

        if let (Some(gate), Some(grad_o)) = (&head.gate, grad_o.as_mut()) {
            gate_pen += elastic_net(pi.iter(), cfg.alpha, cfg.frobenius_squared);
            let mut d_pi = weights.t().dot(&g);
            if let Some(m) = mask {
                d_pi *= &m.row(i);
            }
            d_pi.scaled_add(
                cfg.lambda_pi * inv_b,
                &elastic_net_grad(&pi, cfg.alpha, cfg.frobenius_squared),
            );
            for j in 0..k {
                if p_row[j] - gate.offsets[j] > 0.0 {
                    grad_o[j] -= d_pi[j];
                }
            }
        }
    }

    let cross_entropy = ce * inv_b;
    let gate_penalty = cfg.lambda_pi * gate_pen * inv_b;
    let weight_penalty = cfg.lambda_w * elastic_net(weights.iter(), cfg.alpha, cfg.frobenius_squared);
    grad_w.scaled_add(
        cfg.lambda_w,
        &elastic_net_grad(weights, cfg.alpha, cfg.frobenius_squared),
    );

    let total = cross_entropy + gate_penalty + weight_penalty;
    if !total.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    Ok((
        LossBreakdown {
            total,
            cross_entropy,
            gate_penalty,
            weight_penalty,
        },
        Gradients {
            weights: grad_w,
            bias: grad_b,
            offsets: grad_o,
        },
    ))
}

/// Returns `−log softmax(logits)[label]` and the softmax probabilities.
fn softmax_cross_entropy(logits: ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let ce = max + sum.ln() - logits[label];
    (ce, exp / sum)
}
