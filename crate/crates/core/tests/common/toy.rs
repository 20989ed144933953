//! Seeded toy runs with the freezing contracts checked on every run.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use sepl::data::{make_toy_dataset, Split, ToyDataset};
use sepl::eval::EvalSet;
use sepl::trainer::{run_stage1, run_stage2, InMemoryData, RunOptions, TrainState};
use sepl::{Config, ParamStore};

pub const TOY_VIDEOS: usize = 400;
pub const TOY_FRAMES: usize = 2;
pub const TOY_DATA_SEED: u64 = 0;

pub fn dataset() -> &'static ToyDataset {
    static DS: OnceLock<ToyDataset> = OnceLock::new();
    DS.get_or_init(|| make_toy_dataset(TOY_VIDEOS, TOY_FRAMES, TOY_DATA_SEED).unwrap())
}

pub fn test_set() -> EvalSet {
    EvalSet::from_toy(dataset(), Split::Test).unwrap()
}

pub fn train_labels() -> Vec<u8> {
    let ds = dataset();
    ds.labels_of(&ds.indices(Split::Train))
}

pub fn config(seed: u64) -> Config {
    let mut c = Config::toy();
    c.train.seed = seed;
    c
}

/// Names whose values differ between two stores with the same keys.
pub fn changed(before: &ParamStore, after: &ParamStore) -> Vec<String> {
    before
        .iter()
        .filter(|(n, t)| after.get(n) != Some(*t))
        .map(|(n, _)| n.to_string())
        .collect()
}

/// What the freezing checks saw during one run.
#[derive(Debug, Clone)]
pub struct FreezeLog {
    pub stage1_changed: Vec<String>,
    pub base_invariant: bool,
}

impl FreezeLog {
    /// Stage 1 touched only stream B's meta-network and context, and the
    /// base encoder checksum never moved.
    pub fn holds(&self) -> bool {
        self.base_invariant
            && self
                .stage1_changed
                .iter()
                .all(|n| n.starts_with("prompt.B.meta.") || n == "prompt.B.context")
    }
}

pub struct Run {
    pub state: TrainState,
    pub freeze: FreezeLog,
    pub elapsed: Duration,
}

/// Both stages on the toy train split, optionally with replacement labels.
pub fn train(config: Config, labels: Option<Vec<u8>>) -> Run {
    let start = Instant::now();
    let ds = dataset();
    let idx = ds.indices(Split::Train);
    let labels = labels.unwrap_or_else(|| ds.labels_of(&idx));
    let data = InMemoryData::new(ds.images_of(&idx), labels, &config).unwrap();
    let mut state = TrainState::new(config).unwrap();
    let base0 = state.model.base_checksum();
    let before = state.model.store.clone();
    run_stage1(&mut state, &data, &mut RunOptions::default()).unwrap();
    let stage1_changed = changed(&before, &state.model.store);
    let base1 = state.model.base_checksum();
    run_stage2(&mut state, &data, &mut RunOptions::default()).unwrap();
    let base2 = state.model.base_checksum();
    assert!(state.complete);
    Run {
        state,
        freeze: FreezeLog {
            stage1_changed,
            base_invariant: base0 == base1 && base1 == base2,
        },
        elapsed: start.elapsed(),
    }
}
