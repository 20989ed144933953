//! Generate the toy dataset, train both stages, and score the test split.
//!
//! cargo run --release --example quickstart

use sepl::data::{make_toy_dataset, Split};
use sepl::eval::{evaluate, EvalSet};
use sepl::trainer::fit;
use sepl::Config;

fn main() -> sepl::Result<()> {
    let ds = make_toy_dataset(400, 2, 0)?;
    let train = ds.indices(Split::Train);
    let state = fit(Config::toy(), ds.images_of(&train), ds.labels_of(&train))?;
    let (e, _) = evaluate(&state.model, &EvalSet::from_toy(&ds, Split::Test)?)?;
    println!("frame AUC {:.4}  video AUC {:.4}  video EER {:.4}", e.frame.auc, e.video.auc, e.video.eer);
    Ok(())
}
