//! Evaluate each training objective on a small hand-made batch.
//!
//! cargo run --example losses

use ndarray::array;
use sepl::losses::{self, ClassifierHead, RawTerms};
use sepl::Config;

fn main() -> sepl::Result<()> {
    let fa = array![[1.0, 0.2, -0.3], [0.1, 0.9, 0.4], [-0.6, 0.3, 0.8], [0.5, -0.5, 0.1]];
    let fb = array![[0.2, -1.0, 0.1], [0.7, 0.1, -0.2], [0.3, 0.9, 0.2], [-0.4, -0.2, 0.9]];
    let labels = [0u8, 1, 1, 0];
    let tau = Config::default().loss.temperature;
    let head = ClassifierHead {
        weight: array![[0.3, -0.3], [0.1, 0.2], [-0.2, 0.4]],
        bias: array![[0.0, 0.0]],
    };

    let terms = RawTerms {
        cls: losses::loss_cls(&fa, &head, &labels)?,
        dis: losses::loss_dis(&fa, &fb)?,
        div: losses::loss_div(&fa, &fb)?,
        align_specific: losses::loss_align(&fa, &fb, &fb, &fb, &labels, 1.0, 0.0)?,
        align_irrelevant: losses::loss_align(&fa, &fb, &fa, &fa, &labels, 0.0, 1.0)?,
        con: losses::loss_con(&fa, &labels, tau)?,
    };
    println!("pre  {:.6}", losses::loss_pre(&fa, &fb, tau)?);
    println!("{terms:#?}");
    let cfg = Config::default();
    for step in [0, 50, 500] {
        let r = losses::loss_total(terms, &cfg.loss, step, 1000)?;
        println!("step {step:4}: total {:.6} (weights {:?})", r.total, r.weights.unwrap());
    }
    Ok(())
}
