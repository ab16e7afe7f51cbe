//! Reference schemes that need no training of their own: uniform random
//! allocation and the "naive" centralized model that only knows local CSI.

use ndarray::{Array2, ArrayView2, Axis};

use crate::channel::local_indices;
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::objective::Allocation;
pub use crate::oracle::random_allocation;

/// Naive decisions for a batch of normalized inputs: pair `i` feeds the
/// centralized model its own local view with every other entry set to the
/// dataset mean (0 after normalization) and keeps only its own decision.
pub fn naive_allocations(model: &Model, x: ArrayView2<f64>) -> Result<Vec<Allocation>> {
    if model.kind() != ModelKind::Centralized {
        return Err(Error::MissingDependency("the naive scheme needs a centralized model".into()));
    }
    let Model::Centralized(m) = model else { unreachable!() };
    let n = m.n_tps;
    let mut decisions = vec![Allocation::idle(n); x.nrows()];
    for i in 0..n {
        let mut surrogate = Array2::zeros(x.dim());
        for j in local_indices(n, m.n_channels, i + 1) {
            surrogate.index_axis_mut(Axis(1), j).assign(&x.index_axis(Axis(1), j));
        }
        for (d, own) in decisions.iter_mut().zip(model.decide(surrogate.view())?) {
            d.channel_idx[i] = own.channel_idx[i];
            d.power_idx[i] = own.power_idx[i];
        }
    }
    Ok(decisions)
}
