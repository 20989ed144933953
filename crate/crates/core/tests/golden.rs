//! Golden-file regression tests.
//!
//! Values live in `tests/golden/*.json`. Run with `SEPL_UPDATE_GOLDEN=1` to
//! rewrite them after an intentional change, then review the diff. Floats are
//! compared to 1e-12 relative; digests must match exactly (they are
//! platform-sensitive through libm, so regenerate when porting).

mod common;

use std::path::PathBuf;

use ndarray::array;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use common::toy;
use sepl::data::{make_toy_dataset, perturb, Family, Image, PerturbationSpec, Split};
use sepl::eval::metrics;
use sepl::losses::{self, ClassifierHead};
use sepl::trainer::fit;
use sepl::Config;

const UPDATE_ENV: &str = "SEPL_UPDATE_GOLDEN";

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"))
}

fn close(a: &Value, b: &Value, at: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0) {
                Ok(())
            } else {
                Err(format!("{at}: {x} != golden {y}"))
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() || x.keys().ne(y.keys()) {
                return Err(format!("{at}: keys differ"));
            }
            x.iter().try_for_each(|(k, v)| close(v, &y[k], &format!("{at}.{k}")))
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).enumerate().try_for_each(|(i, (u, v))| close(u, v, &format!("{at}[{i}]")))
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{at}: {a} != golden {b}")),
    }
}

fn check(name: &str, actual: Value) {
    let path = golden_path(name);
    if std::env::var_os(UPDATE_ENV).is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&actual).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing {}; run with {UPDATE_ENV}=1", path.display()));
    let want: Value = serde_json::from_str(&text).unwrap();
    if let Err(e) = close(&actual, &want, name) {
        panic!("golden mismatch: {e}");
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_digest(img: &Image) -> String {
    let bytes: Vec<u8> = img.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    digest(&bytes)
}

#[test]
fn loss_values() {
    let f = array![[0.3, -1.2, 0.5], [1.0, 0.1, -0.4], [-0.7, 0.8, 0.2], [0.05, 0.6, 1.1]];
    let t = array![[0.9, 0.2, -0.3], [-0.1, 1.0, 0.4], [0.5, -0.5, 0.7], [0.2, 0.3, -1.0]];
    let y = [0u8, 1, 1, 0];
    let head = ClassifierHead {
        weight: array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.6]],
        bias: array![[0.05, -0.05]],
    };
    check(
        "losses",
        json!({
            "pre": losses::loss_pre(&f, &t, 0.07).unwrap(),
            "dis": losses::loss_dis(&f, &t).unwrap(),
            "div": losses::loss_div(&f, &t).unwrap(),
            "align": losses::loss_align(&f, &t, &t, &f, &y, 1.0, 0.5).unwrap(),
            "con": losses::loss_con(&f, &y, 0.07).unwrap(),
            "cls": losses::loss_cls(&f, &head, &y).unwrap(),
        }),
    );
}

#[test]
fn metric_values() {
    let s = [0.1, 0.4, 0.35, 0.8, 0.35, 0.9, 0.2, 0.6];
    let y = [0u8, 0, 1, 1, 0, 1, 1, 0];
    check("metrics", serde_json::to_value(metrics::metrics(&s, &y).unwrap()).unwrap());
}

#[test]
fn toy_dataset_and_perturbations() {
    let ds = make_toy_dataset(8, 2, 11).unwrap();
    let manifest = sepl::data::manifest::manifest_to_string(&ds.samples).unwrap();
    let img = &ds.images[1];
    let mut perturbed = serde_json::Map::new();
    for f in Family::ALL {
        let hashes: Vec<String> = (1..=5)
            .map(|s| image_digest(&perturb(img, &PerturbationSpec::new(f, s, 3)).unwrap()))
            .collect();
        perturbed.insert(f.name().to_string(), json!(hashes));
    }
    check(
        "toy_data",
        json!({
            "manifest_sha256": digest(manifest.as_bytes()),
            "images_sha256": ds.images.iter().map(image_digest).collect::<Vec<_>>(),
            "perturbed_sha256": perturbed,
        }),
    );
}

#[test]
fn toy_preset_config() {
    let c = Config::toy();
    check("config", json!({ "hash": c.hash(), "toml": c.to_toml_string() }));
}

#[test]
fn short_training_run() {
    let mut c = toy::config(0);
    c.train.stage1_steps = 5;
    c.train.stage2_steps = 15;
    let ds = toy::dataset();
    let idx = ds.indices(Split::Train);
    let state = fit(c, ds.images_of(&idx), ds.labels_of(&idx)).unwrap();
    let test = toy::test_set();
    let scores = state.model.score_all(&test.images[..8], 8).unwrap();
    check(
        "short_run",
        json!({
            "checkpoint_sha256": digest(&state.to_checkpoint().unwrap().to_bytes().unwrap()),
            "first_test_scores": scores,
        }),
    );
}
