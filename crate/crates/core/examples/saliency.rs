//! Saliency maps of fake toy frames, checked against the known watermark.
//!
//! cargo run --release --example saliency [out_dir]

use sepl::data::{make_toy_dataset, Split};
use sepl::eval::saliency::{saliency, write_overlay_png};
use sepl::trainer::fit;
use sepl::Config;

fn main() -> sepl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example_saliency".into());
    let ds = make_toy_dataset(400, 2, 0)?;
    let train = ds.indices(Split::Train);
    let state = fit(Config::toy(), ds.images_of(&train), ds.labels_of(&train))?;

    let (mut hits, mut total) = (0, 0);
    for i in ds.indices(Split::Test) {
        let Some(rect) = ds.watermarks[i] else { continue };
        let img = &ds.images[i];
        let map = saliency(&state.model, img)?;
        let (inside, outside) = map.mean_inside_outside(img.height(), |y, x| rect.contains(y, x));
        hits += (inside > outside) as usize;
        if total < 4 {
            let path = format!("{out}/{i:05}_{}.png", ds.samples[i].video_id);
            write_overlay_png(img, &map, 8, &path)?;
            println!("{path}: inside {inside:.3} outside {outside:.3}");
        }
        total += 1;
    }
    println!("watermark brighter than background in {hits}/{total} fake test frames");
    Ok(())
}
