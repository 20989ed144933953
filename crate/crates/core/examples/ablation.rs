//! Loss and pretraining ablations on the toy data over a few seeds.
//!
//! cargo run --release --example ablation [n_seeds]

use sepl::data::{make_toy_dataset, Split};
use sepl::eval::{evaluate, EvalSet};
use sepl::trainer::fit;
use sepl::Config;

fn variants() -> Vec<(&'static str, Config)> {
    let full = Config::toy();
    let mut cls_only = full.clone();
    let l = &mut cls_only.loss;
    (l.lambda1, l.lambda2, l.lambda3_specific, l.lambda3_irrelevant, l.lambda4) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut no_pretrain = full.clone();
    no_pretrain.train.skip_pretrain = true;
    vec![("full", full), ("cls only", cls_only), ("no pretrain", no_pretrain)]
}

fn main() -> sepl::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let ds = make_toy_dataset(400, 2, 0)?;
    let train = ds.indices(Split::Train);
    let test = EvalSet::from_toy(&ds, Split::Test)?;
    for (name, base) in variants() {
        let mut aucs = Vec::new();
        for seed in 0..n_seeds {
            let mut c = base.clone();
            c.train.seed = seed;
            let state = fit(c, ds.images_of(&train), ds.labels_of(&train))?;
            aucs.push(evaluate(&state.model, &test)?.0.video.auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!("{name:<12} mean video AUC {mean:.4} {aucs:.4?}");
    }
    Ok(())
}
