//! Acceptance suite: one PASS/FAIL line per headline criterion, with the
//! measured value next to its pinned tolerance. Runs without the libtest
//! harness so the lines always reach the terminal; exits nonzero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::toy::{self, FreezeLog, Run};
use common::{grad_suite, loss_oracle, metric_oracle};
use sepl::checkpoint::Checkpoint;
use sepl::data::{Family, Split};
use sepl::eval::robust::inversions;
use sepl::eval::{evaluate, probe_accuracy, robustness_sweep, EvalSet};
use sepl::model::Sepl;
use sepl::trainer::{train, InMemoryData, RunOptions, TrainState};
use sepl::Config;

const LOSS_TOL: f64 = 1e-9;
const LOSS_BATCHES: usize = 60;
const LOSS_BUDGET: Duration = Duration::from_secs(10);

const GRAD_TOL: f64 = grad_suite::MAX_REL_ERR;
const GRAD_PROBES: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const E2E_MIN_AUC: f64 = 0.95;
const E2E_BUDGET: Duration = Duration::from_secs(300);
const SHUFFLED_AUC: (f64, f64) = (0.4, 0.6);
const SHUFFLE_SEED_OFFSET: u64 = 100;

const MAX_MEAN_ABS_COS: f64 = 0.2;
const MIN_PROBE_GAP: f64 = 0.15;

const SEEDS: [u64; 3] = [0, 1, 2];
const PRETRAIN_MARGIN: f64 = 0.02;

const METRIC_TOL: f64 = 1e-9;
const METRIC_INSTANCES: usize = 100;

const NOISE_INVERSION_TOL: f64 = 0.01;
const ROBUST_BUDGET: Duration = Duration::from_secs(120);
const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];

/// Steps before the simulated interruption of the resume check.
const RESUME_STOP: usize = 500;

struct Line {
    pass: bool,
    name: &'static str,
    detail: String,
}

fn line(pass: bool, name: &'static str, detail: String) -> Line {
    let l = Line { pass, name, detail };
    println!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
    l
}

fn video_auc(model: &Sepl, set: &EvalSet) -> f64 {
    evaluate(model, set).unwrap().0.video.auc
}

fn without_aux_losses(mut c: Config) -> Config {
    c.loss.lambda1 = 0.0;
    c.loss.lambda2 = 0.0;
    c.loss.lambda3_specific = 0.0;
    c.loss.lambda3_irrelevant = 0.0;
    c.loss.lambda4 = 0.0;
    c
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    state.to_checkpoint().unwrap().to_bytes().unwrap()
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

fn record(label: String, run: &Run, logs: &mut Vec<(String, FreezeLog)>) {
    logs.push((label, run.freeze.clone()));
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut freeze_logs: Vec<(String, FreezeLog)> = Vec::new();
    let mut runs = 0usize;

    // oracle suites
    let s = loss_oracle::run(LOSS_BATCHES, 1);
    lines.push(line(
        s.max_abs_err <= LOSS_TOL && s.batches >= 50 && s.elapsed < LOSS_BUDGET,
        "loss oracles",
        format!(
            "6 losses x {} batches, max |lib - oracle| = {:.2e} (tol {LOSS_TOL:.0e}), {:.2?} (budget {LOSS_BUDGET:?})",
            s.batches, s.max_abs_err, s.elapsed
        ),
    ));

    let g = grad_suite::run(1);
    let w = g.worst();
    lines.push(line(
        g.max_rel_err() < GRAD_TOL && g.probes.len() == GRAD_PROBES && g.elapsed < GRAD_BUDGET,
        "gradient suite",
        format!(
            "{} probes / {} entries, max rel err {:.2e} at {} (tol {GRAD_TOL:.0e}), {:.2?} (budget {GRAD_BUDGET:?})",
            g.probes.len(),
            g.entries(),
            g.max_rel_err(),
            w.name,
            g.elapsed
        ),
    ));

    let m = metric_oracle::run(METRIC_INSTANCES, 1);
    lines.push(line(
        m.max_abs_err <= METRIC_TOL && m.instances == METRIC_INSTANCES,
        "metric oracles",
        format!(
            "AUC/AP/EER on {} instances (n <= 200), max |lib - brute force| = {:.2e} (tol {METRIC_TOL:.0e})",
            m.instances, m.max_abs_err
        ),
    ));

    // toy runs
    let set = toy::test_set();
    let ds = toy::dataset();
    let mut full = Vec::new();
    for &seed in &SEEDS {
        let r = toy::train(toy::config(seed), None);
        runs += 1;
        record(format!("full seed {seed}"), &r, &mut freeze_logs);
        full.push(r);
    }
    let full_auc: Vec<f64> = full.iter().map(|r| video_auc(&r.state.model, &set)).collect();

    let mut labels = toy::train_labels();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(SEEDS[0] + SHUFFLE_SEED_OFFSET));
    let shuffled = toy::train(toy::config(SEEDS[0]), Some(labels));
    runs += 1;
    record("shuffled labels".into(), &shuffled, &mut freeze_logs);
    let shuffled_auc = video_auc(&shuffled.state.model, &set);
    let e2e_time = full[0].elapsed;
    lines.push(line(
        full_auc[0] >= E2E_MIN_AUC
            && e2e_time < E2E_BUDGET
            && (SHUFFLED_AUC.0..=SHUFFLED_AUC.1).contains(&shuffled_auc),
        "toy end-to-end",
        format!(
            "seed {} test video AUC {:.4} (min {E2E_MIN_AUC}), trained in {:.1?} (budget {E2E_BUDGET:?}); shuffled-label AUC {:.4} (range {:?})",
            SEEDS[0], full_auc[0], e2e_time, shuffled_auc, SHUFFLED_AUC
        ),
    ));

    // disentanglement on the first full run
    let model = &full[0].state.model;
    let test_f = model.features(&set.images, 64).unwrap();
    let train_idx = ds.indices(Split::Train);
    let train_f = model.features(&ds.images_of(&train_idx), 64).unwrap();
    let train_y = ds.labels_of(&train_idx);
    let abs_cos = mean(
        &test_f
            .specific
            .rows()
            .into_iter()
            .zip(test_f.irrelevant.rows())
            .map(|(a, b)| cosine(a, b).abs())
            .collect::<Vec<_>>(),
    );
    let acc_a = probe_accuracy(&train_f.specific, &train_y, &test_f.specific, &set.labels).unwrap();
    let acc_b = probe_accuracy(&train_f.irrelevant, &train_y, &test_f.irrelevant, &set.labels).unwrap();
    lines.push(line(
        abs_cos < MAX_MEAN_ABS_COS && acc_a - acc_b >= MIN_PROBE_GAP,
        "disentanglement",
        format!(
            "mean |cos(fA, fB)| {abs_cos:.4} (max {MAX_MEAN_ABS_COS}); probe accuracy fA {acc_a:.4} vs fB {acc_b:.4}, gap {:.4} (min {MIN_PROBE_GAP})",
            acc_a - acc_b
        ),
    ));

    let mut cls_auc = Vec::new();
    for &seed in &SEEDS {
        let r = toy::train(without_aux_losses(toy::config(seed)), None);
        runs += 1;
        record(format!("cls-only seed {seed}"), &r, &mut freeze_logs);
        cls_auc.push(video_auc(&r.state.model, &set));
    }
    lines.push(line(
        mean(&full_auc) >= mean(&cls_auc),
        "ablation direction",
        format!(
            "mean AUC full {:.4} {} >= cls-only {:.4} {}",
            mean(&full_auc),
            fmt(&full_auc),
            mean(&cls_auc),
            fmt(&cls_auc)
        ),
    ));

    let mut no_pre_auc = Vec::new();
    for &seed in &SEEDS {
        let mut c = toy::config(seed);
        c.train.skip_pretrain = true;
        let r = toy::train(c, None);
        runs += 1;
        record(format!("no-pretrain seed {seed}"), &r, &mut freeze_logs);
        no_pre_auc.push(video_auc(&r.state.model, &set));
    }
    let non_inferior = full_auc.iter().zip(&no_pre_auc).all(|(a, b)| *a >= b - PRETRAIN_MARGIN);
    lines.push(line(
        non_inferior,
        "pretraining effect",
        format!(
            "per seed AUC with stage 1 {} >= without {} - {PRETRAIN_MARGIN}",
            fmt(&full_auc),
            fmt(&no_pre_auc)
        ),
    ));

    // robustness
    let t = Instant::now();
    let grid = robustness_sweep(model, &set, &Family::ALL, &SEVERITIES, 0).unwrap();
    let robust_time = t.elapsed();
    let noise = grid.curve(Family::GaussianNoise);
    let (n_inv, max_inv) = inversions(&noise);
    let populated = grid.cells.len() == Family::ALL.len() * SEVERITIES.len()
        && grid.cells.iter().all(|c| c.video.auc.is_finite() && c.frame.auc.is_finite());
    lines.push(line(
        populated && (n_inv == 0 || (n_inv == 1 && max_inv <= NOISE_INVERSION_TOL)) && robust_time < ROBUST_BUDGET,
        "robustness harness",
        format!(
            "gaussian_noise video AUC {} ({n_inv} inversions, largest {max_inv:.4}, tol one <= {NOISE_INVERSION_TOL}); {} cells; {:.2?} (budget {ROBUST_BUDGET:?})",
            fmt(&noise),
            grid.cells.len(),
            robust_time
        ),
    ));

    // determinism and resume, against the first full run
    let reference = checkpoint_bytes(&full[0].state);
    let repeat = toy::train(toy::config(SEEDS[0]), None);
    runs += 1;
    record("repeat".into(), &repeat, &mut freeze_logs);
    let repeat_equal = checkpoint_bytes(&repeat.state) == reference;

    let c = toy::config(SEEDS[0]);
    let data = InMemoryData::new(ds.images_of(&train_idx), train_y.clone(), &c).unwrap();
    let mut part = TrainState::new(c).unwrap();
    let base = part.model.base_checksum();
    let opts = &mut RunOptions {
        stop_after: Some(RESUME_STOP),
        ..RunOptions::default()
    };
    train(&mut part, &data, opts).unwrap();
    let saved = checkpoint_bytes(&part);
    drop(part);
    let mut resumed = TrainState::from_checkpoint(Checkpoint::from_bytes(&saved).unwrap()).unwrap();
    train(&mut resumed, &data, &mut RunOptions::default()).unwrap();
    runs += 1;
    let resume_equal = resumed.complete && checkpoint_bytes(&resumed) == reference;
    freeze_logs.push((
        "resumed".into(),
        FreezeLog {
            stage1_changed: Vec::new(),
            base_invariant: resumed.model.base_checksum() == base,
        },
    ));
    lines.push(line(
        repeat_equal && resume_equal,
        "determinism",
        format!(
            "repeated seeded run bit-identical: {repeat_equal}; resumed after {RESUME_STOP} steps bit-identical: {resume_equal} ({} checkpoint bytes)",
            reference.len()
        ),
    ));

    // freezing, over every run above
    let broken: Vec<&str> = freeze_logs.iter().filter(|(_, f)| !f.holds()).map(|(n, _)| n.as_str()).collect();
    lines.push(line(
        broken.is_empty(),
        "freezing contracts",
        format!(
            "stage 1 touched only prompt.B.{{meta, context}} and the base checksum held in {}/{} runs{}",
            freeze_logs.len() - broken.len(),
            freeze_logs.len(),
            if broken.is_empty() { String::new() } else { format!("; broken: {broken:?}") }
        ),
    ));

    let failed = lines.iter().filter(|l| !l.pass).count();
    println!(
        "acceptance: {}/{} criteria passed ({runs} toy trainings, {:.1?})",
        lines.len() - failed,
        lines.len(),
        started.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
