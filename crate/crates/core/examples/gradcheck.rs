//! Compare analytic gradients of the contrastive losses with central
//! finite differences.
//!
//! cargo run --example gradcheck

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepl::gradcheck::{check_inputs, GradCheck};
use sepl::losses;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let (f, t) = (rand(6, 5), rand(6, 5));
    let labels = [0u8, 1, 0, 1, 1, 0];

    let pre = check_inputs(&[f.clone(), t], &|g, v| losses::pre(g, v[0], v[1], 0.07).unwrap(), GradCheck::default());
    let con = check_inputs(&[f], &|g, v| losses::con(g, v[0], &labels, 0.07).unwrap(), GradCheck::default());
    for (name, r) in [("pre", pre), ("con", con)] {
        println!("{name}: {} entries, max relative error {:.2e}", r.checked, r.max_rel_err);
    }
}
