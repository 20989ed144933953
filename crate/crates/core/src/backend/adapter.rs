//! Additive low-rank adapters on frozen linear maps.
//!
//! For a frozen map `y = x·W + b` (`W: in × out`) an adapter contributes
//! `x · downᵀ · upᵀ` with `down: rank × in` and `up: out × rank`. The up
//! projection starts at zero, so an injected model is bit-identical to the
//! frozen one until the first update.

use nalgebra::DMatrix;
use rand::Rng;

use super::{DualEncoder, ADAPTER_PREFIX};
use crate::autograd::{Graph, Tensor, Var};
use crate::config::AdapterKind;
use crate::error::{Error, Result};
use crate::params::{normal, ParamStore};

/// A frozen linear map that accepts an adapter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterTarget {
    /// Short target name, e.g. `vision.patch`.
    pub name: String,
    /// Store name of the frozen `in × out` weight.
    pub weight: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AdapterTarget {
    pub fn down_name(&self) -> String {
        format!("{ADAPTER_PREFIX}{}.down", self.name)
    }

    pub fn up_name(&self) -> String {
        format!("{ADAPTER_PREFIX}{}.up", self.name)
    }
}

/// The adapter pairs currently injected, by target.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterState {
    pub rank: usize,
    pub pairs: Vec<(String, Tensor, Tensor)>,
}

/// Add rank-`rank` adapters for every target of `backend` to `store`.
///
/// Rank 0 is a no-op. Existing adapters are replaced.
pub fn inject_adapters(
    backend: &dyn DualEncoder,
    store: &mut ParamStore,
    rank: usize,
    kind: AdapterKind,
    rng: &mut impl Rng,
) -> Result<AdapterState> {
    let targets = backend.adapter_targets();
    let mut state = AdapterState {
        rank,
        pairs: Vec::new(),
    };
    if rank == 0 {
        return Ok(state);
    }
    for t in &targets {
        if rank > t.in_dim.min(t.out_dim) {
            return Err(Error::InvalidArgument(format!(
                "adapter rank {rank} exceeds dims {}×{} of `{}`",
                t.in_dim, t.out_dim, t.name
            )));
        }
    }
    for t in targets {
        let down = match kind {
            AdapterKind::Standard => normal(rng, rank, t.in_dim, 1.0 / (t.in_dim as f64).sqrt()),
            AdapterKind::Svd => {
                let w = store
                    .get(&t.weight)
                    .ok_or_else(|| Error::InvalidArgument(format!("missing `{}`", t.weight)))?;
                top_input_directions(w, rank)
            }
        };
        let up = Tensor::zeros((t.out_dim, rank));
        store.insert(t.down_name(), down.clone());
        store.insert(t.up_name(), up.clone());
        state.pairs.push((t.name.clone(), down, up));
    }
    Ok(state)
}

/// Rows are the `rank` leading left-singular vectors of `w` (`in × out`), i.e.
/// the input directions the frozen map amplifies most.
fn top_input_directions(w: &Tensor, rank: usize) -> Tensor {
    let m = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Tensor::from_shape_fn((rank, w.nrows()), |(r, i)| u[(i, order[r])])
}

/// `x·W + b`, plus the adapter delta when the target has one in `store`.
pub(crate) fn adapted_linear(
    g: &mut Graph,
    store: &ParamStore,
    target: &AdapterTarget,
    bias: &str,
    x: Var,
) -> Var {
    let w = g.param(store, &target.weight);
    let b = g.param(store, bias);
    let xw = g.matmul(x, w);
    let mut y = g.add_row(xw, b);
    if let Some(delta) = adapter_delta(g, store, target, x) {
        y = g.add(y, delta);
    }
    y
}

pub(crate) fn adapter_delta(
    g: &mut Graph,
    store: &ParamStore,
    target: &AdapterTarget,
    x: Var,
) -> Option<Var> {
    let (dn, un) = (target.down_name(), target.up_name());
    if !(store.contains(&dn) && store.contains(&un)) {
        return None;
    }
    let down = g.param(store, &dn);
    let up = g.param(store, &un);
    let dt = g.transpose(down);
    let ut = g.transpose(up);
    let h = g.matmul(x, dt);
    Some(g.matmul(h, ut))
}
