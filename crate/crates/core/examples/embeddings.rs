//! Export backbone, forgery-specific and forgery-irrelevant features of the
//! toy test split with t-SNE scatter plots, and report how well a linear
//! probe separates the classes on each.
//!
//! cargo run --release --example embeddings [out_dir]

use sepl::data::{make_toy_dataset, Split};
use sepl::eval::{export_embeddings, probe_accuracy, EvalSet, TsneConfig, Which};
use sepl::trainer::fit;
use sepl::Config;

fn main() -> sepl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example_embeddings".into());
    let ds = make_toy_dataset(400, 2, 0)?;
    let train = ds.indices(Split::Train);
    let state = fit(Config::toy(), ds.images_of(&train), ds.labels_of(&train))?;
    let model = &state.model;
    let test = EvalSet::from_toy(&ds, Split::Test)?;
    let train_f = model.features(&ds.images_of(&train), 64)?;
    let test_f = model.features(&test.images, 64)?;

    for which in Which::ALL {
        let s = export_embeddings(model, &test, which, &TsneConfig::default(), &out)?;
        let acc = probe_accuracy(which.select(&train_f), &ds.labels_of(&train), which.select(&test_f), &test.labels)?;
        println!("{which:<10} probe accuracy {acc:.3}  plot {}", s.plot.display());
    }
    Ok(())
}
