//! Finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::graph::{Gradients, ParamStore};

/// Compare analytic gradients of a deterministic scalar loss against central
/// finite differences on up to `max_coords` sampled parameter coordinates.
///
/// Returns the max over sampled coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
///
/// The 1e-6 floor keeps the check meaningful where the true gradient is
/// near zero: central differences of an O(10) loss carry ~ulp/eps absolute
/// cancellation noise, so relative error on ~1e-7 gradients measures the
/// probe, not the backward pass. Such coordinates are judged absolutely.
pub fn grad_check<F>(
    params: &mut ParamStore,
    mut loss: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64, ModelError>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients), ModelError>,
{
    let (_, analytic) = loss(params)?;
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for pid in 0..params.len() {
        for i in 0..params.value(pid).numel() {
            coords.push((pid, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_coords);

    let mut worst = 0.0f64;
    for (pid, i) in coords {
        let orig = params.value(pid).data()[i];
        params.value_mut(pid).data_mut()[i] = orig + eps;
        let (lp, _) = loss(params)?;
        params.value_mut(pid).data_mut()[i] = orig - eps;
        let (lm, _) = loss(params)?;
        params.value_mut(pid).data_mut()[i] = orig;

        let numeric = (lp - lm) / (2.0 * eps);
        let ana = analytic.get(pid).map(|g| g.data()[i]).unwrap_or(0.0);
        let rel = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_loss_checks_exactly() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![0.5, -1.5, 2.0]));
        let err = grad_check(
            &mut params,
            |p| {
                let mut g = Graph::new(p);
                let w = g.param("w")?;
                let sq = g.mul(w, w)?;
                let loss = g.sum(sq)?;
                g.backward(loss, None)?;
                Ok((g.scalar_value(loss), g.take_grads()))
            },
            1e-5,
            100,
            7,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}
