//! Non-negative matrix factorization with Lee–Seung multiplicative updates
//! for the Frobenius objective.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::{fold_norms, objective, ConceptDictionary, DiscoveryConfig, DiscoveryMethod, DiscoveryResult, NegativePolicy};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor_io::ActivationMatrix;

/// Added to every multiplicative-update denominator.
pub const DENOMINATOR_EPS: f64 = 1e-12;

pub fn discover_nmf(a: &ActivationMatrix, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let mut data = a.data().clone();
    let (n, p) = data.dim();
    let k = cfg.k;

    let negatives = data.iter().filter(|&&v| v < 0.0).count();
    if negatives > 0 {
        match cfg.negative_policy {
            NegativePolicy::Reject => return Err(Error::NegativeInput { count: negatives }),
            NegativePolicy::Clamp => {
                tracing::warn!(count = negatives, "clamping negative activations to zero");
                data.mapv_inplace(|v| v.max(0.0));
            }
        }
    }

    if data.iter().all(|&v| v == 0.0) {
        return Ok(zero_input_result(n, p, k, negatives));
    }

    let scale = (data.mean().unwrap_or(0.0) / k as f64).sqrt();
    let mut rng = rng::stream(cfg.seed, Stream::Discovery);
    let mut u = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>() * scale);
    let mut c = Array2::from_shape_simple_fn((p, k), || rng.random::<f64>() * scale);

    let mut history = Vec::new();
    let mut collapses = vec![0u32; k];
    let mut prev = objective(data.view(), u.view(), c.view());

    for step in 0..cfg.max_iters {
        // U ← U ⊙ (A·C) ⊘ (U·CᵀC + ε)
        let numer = data.dot(&c);
        let denom = u.dot(&c.t().dot(&c));
        multiplicative_step(&mut u, &numer, &denom);

        // C ← C ⊙ (Aᵀ·U) ⊘ (C·UᵀU + ε)
        let numer = data.t().dot(&u);
        let denom = c.dot(&u.t().dot(&u));
        multiplicative_step(&mut c, &numer, &denom);

        for j in 0..k {
            if c.column(j).iter().all(|&v| v == 0.0) {
                collapses[j] += 1;
                if collapses[j] >= 2 {
                    return Err(Error::DegenerateRank { concept: j });
                }
                tracing::debug!(concept = j, step, "re-initializing collapsed concept");
                reinit_concept(&data, &mut u, &mut c, j)?;
            }
        }

        let f = objective(data.view(), u.view(), c.view());
        if !f.is_finite() {
            return Err(Error::Diverged { step });
        }
        history.push(f);
        let rel_change = if prev > 0.0 { (prev - f).abs() / prev } else { 0.0 };
        prev = f;
        if f == 0.0 || rel_change < cfg.tol {
            break;
        }
    }

    if let Some(&j) = fold_norms(&mut u, &mut c).first() {
        return Err(Error::DegenerateRank { concept: j });
    }
    let dictionary = ConceptDictionary::new(c, DiscoveryMethod::Nmf, true)?;
    Ok(DiscoveryResult {
        dictionary,
        coefficients: u,
        iterations_run: history.len(),
        residual_history: history,
        clamped_entries: negatives,
    })
}

fn multiplicative_step(x: &mut Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>) {
    Zip::from(x)
        .and(numer)
        .and(denom)
        .for_each(|x, &n, &d| *x *= n / (d + DENOMINATOR_EPS));
}

/// Rebuilds concept `j` from the sample with the largest residual: the new
/// concept is the positive part of that residual row, and every sample gets
/// the coefficient `max(⟨rᵢ, c⟩, 0)`. Each coefficient `uᵢ` lowers that row's
/// squared residual by `uᵢ²`, so the objective never increases.
fn reinit_concept(
    data: &Array2<f64>,
    u: &mut Array2<f64>,
    c: &mut Array2<f64>,
    j: usize,
) -> Result<()> {
    u.column_mut(j).fill(0.0);
    c.column_mut(j).fill(0.0);
    let residual = data - &u.dot(&c.t());
    let row_norms: Vec<f64> = residual
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r))
        .collect();
    let worst = row_norms
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row_norms[best] { i } else { best });

    let mut concept: Array1<f64> = residual.row(worst).mapv(|v| v.max(0.0));
    if concept.iter().all(|&v| v == 0.0) {
        concept = data.row(worst).to_owned();
    }
    let norm = concept.dot(&concept).sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateRank { concept: j });
    }
    concept.mapv_inplace(|v| v / norm);

    let coeffs = residual.dot(&concept).mapv(|v| v.max(0.0));
    c.column_mut(j).assign(&concept);
    u.column_mut(j).assign(&coeffs);
    Ok(())
}

/// `A = 0` is factored exactly by `U = 0`; concepts are set to the standard
/// basis vectors `e_{j mod p}` so the dictionary stays unit-norm.
fn zero_input_result(n: usize, p: usize, k: usize, clamped: usize) -> DiscoveryResult {
    let mut c = Array2::zeros((p, k));
    for j in 0..k {
        c[[j % p, j]] = 1.0;
    }
    let dictionary =
        ConceptDictionary::new(c, DiscoveryMethod::Nmf, true).expect("basis vectors are unit norm");
    DiscoveryResult {
        dictionary,
        coefficients: Array2::zeros((n, k)),
        residual_history: vec![0.0],
        iterations_run: 1,
        clamped_entries: clamped,
    }
}
