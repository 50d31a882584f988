use nalgebra::DMatrix;
use ndarray::{Array2, Axis};

use super::{objective, ConceptDictionary, DiscoveryConfig, DiscoveryMethod, DiscoveryResult};
use crate::error::{Error, Result};
use crate::tensor_io::ActivationMatrix;

/// Top-`k` right singular vectors of the column-centered activations.
///
/// Each concept's sign is chosen so that its largest-magnitude entry is
/// positive (first such entry on ties). `U` holds the centered scores
/// `Ā·C`, so `residual_history` has a single entry `‖Ā − U·Cᵀ‖²_F`.
pub fn discover_pca(a: &ActivationMatrix, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let (n, p) = a.data().dim();
    let max = n.min(p);
    if cfg.k > max {
        return Err(Error::KTooLarge { k: cfg.k, max });
    }

    let mean = a.data().mean_axis(Axis(0)).expect("non-empty matrix");
    let centered = a.data() - &mean;

    let m = DMatrix::from_row_iterator(n, p, centered.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]).then(x.cmp(&y)));

    let mut c = Array2::zeros((p, cfg.k));
    for (j, &idx) in order.iter().take(cfg.k).enumerate() {
        let row = v_t.row(idx);
        let pivot = (0..p).fold(0, |best, i| if row[i].abs() > row[best].abs() { i } else { best });
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        let norm = row.norm();
        for i in 0..p {
            c[[i, j]] = sign * row[i] / norm;
        }
    }

    let u = centered.dot(&c);
    let f = objective(centered.view(), u.view(), c.view());
    Ok(DiscoveryResult {
        dictionary: ConceptDictionary::new(c, DiscoveryMethod::Pca, false)?,
        coefficients: u,
        residual_history: vec![f],
        iterations_run: 1,
        clamped_entries: 0,
    })
}
