//! Interrupt training, save a checkpoint, resume from it, and confirm the
//! result is bit-identical to an uninterrupted run.
//!
//! cargo run --release --example resume

use sepl::checkpoint::Checkpoint;
use sepl::data::{make_toy_dataset, Split};
use sepl::trainer::{train, InMemoryData, RunOptions, TrainState};
use sepl::Config;

fn main() -> sepl::Result<()> {
    let mut config = Config::toy();
    config.train.stage2_steps = 200;
    let ds = make_toy_dataset(100, 2, 0)?;
    let idx = ds.indices(Split::Train);
    let data = InMemoryData::new(ds.images_of(&idx), ds.labels_of(&idx), &config)?;

    let mut whole = TrainState::new(config.clone())?;
    train(&mut whole, &data, &mut RunOptions::default())?;

    let dir = std::env::temp_dir().join(format!("sepl-resume-{}", std::process::id()));
    let path = dir.join("checkpoint.sepl");
    std::fs::create_dir_all(&dir).map_err(|e| sepl::Error::io(&dir, e))?;
    let mut part = TrainState::new(config)?;
    let summary = train(&mut part, &data, &mut RunOptions { stop_after: Some(137), ..RunOptions::default() })?;
    part.to_checkpoint()?.save(&path, true)?;
    println!("stopped after {} steps at stage {} step {}", summary.steps_run, part.stage, part.step);

    let mut resumed = TrainState::from_checkpoint(Checkpoint::load(&path)?)?;
    train(&mut resumed, &data, &mut RunOptions::default())?;
    let same = resumed.to_checkpoint()?.to_bytes()? == whole.to_checkpoint()?.to_bytes()?;
    println!("resumed run bit-identical to uninterrupted run: {same}");
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
