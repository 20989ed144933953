//! Train on the toy data, then sweep every perturbation family over
//! severities 1..5 and plot the video AUC curves.
//!
//! cargo run --release --example robustness [out_dir]

use sepl::data::{make_toy_dataset, Family, Split};
use sepl::eval::{robustness_sweep, EvalSet};
use sepl::trainer::fit;
use sepl::Config;

fn main() -> sepl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example_robustness".into());
    let ds = make_toy_dataset(400, 2, 0)?;
    let train = ds.indices(Split::Train);
    let state = fit(Config::toy(), ds.images_of(&train), ds.labels_of(&train))?;
    let set = EvalSet::from_toy(&ds, Split::Test)?;

    let grid = robustness_sweep(&state.model, &set, &Family::ALL, &[1, 2, 3, 4, 5], 0)?;
    println!("clean {:.4}  severity-0 control {:.4}", grid.clean_auc, grid.control_auc);
    for f in Family::ALL {
        let curve: Vec<String> = grid.curve(f).iter().map(|a| format!("{a:.3}")).collect();
        println!("{:<18} {}", f.name(), curve.join(" "));
    }
    std::fs::create_dir_all(&out).map_err(|e| sepl::Error::io(&out, e))?;
    let svg = format!("{out}/robust.svg");
    grid.write_plot(&svg)?;
    println!("plot: {svg}");
    Ok(())
}
