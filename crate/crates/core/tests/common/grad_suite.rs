//! Analytic-versus-finite-difference probes over the differentiable pieces:
//! each loss, the alignment block, the prompt pipeline, the adapters, and
//! the assembled second-stage objective.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepl::alignment::{cross_attend, project_text};
use sepl::autograd::{Graph, Var};
use sepl::config::AdapterKind;
use sepl::data::Image;
use sepl::gradcheck::{check_inputs, check_params, GradCheck, GradCheckReport};
use sepl::losses::{self, EffectiveWeights, HEAD_B, HEAD_W};
use sepl::prompts::{encode_stream, Stream};
use sepl::{Config, ParamStore, Sepl};

use super::loss_oracle::{labels, random};

/// Relative-error threshold of the suite.
pub const MAX_REL_ERR: f64 = 1e-4;

#[derive(Debug)]
pub struct Probe {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug)]
pub struct GradSuite {
    pub probes: Vec<Probe>,
    pub elapsed: Duration,
}

impl GradSuite {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.report.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> &Probe {
        self.probes
            .iter()
            .max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
            .expect("non-empty suite")
    }

    pub fn entries(&self) -> usize {
        self.probes.iter().map(|p| p.report.checked).sum()
    }
}

fn cfg(max_entries: usize) -> GradCheck {
    GradCheck {
        max_entries: Some(max_entries),
        ..GradCheck::default()
    }
}

/// Fixed random linear readout turning a matrix output into a scalar.
fn readout(g: &mut Graph, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let (r, c) = g.shape(v);
    let w = random(rng, r, c);
    let p = g.mul_const(v, w);
    g.sum(p)
}

/// Small model with every learnable tensor perturbed away from its init
/// (zero output projections, zero adapter ups, zero head).
fn model(seed: u64, kind: AdapterKind) -> Sepl {
    let mut c = Config::toy();
    c.train.seed = seed;
    c.model.adapter = kind;
    let mut m = Sepl::new(c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let names: Vec<String> = m.store.names().filter(|n| !n.starts_with("encoder.")).map(String::from).collect();
    for n in names {
        let t = m.store.get_mut(&n).unwrap();
        t.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    m
}

fn names_with(store: &ParamStore, prefix: &str) -> Vec<String> {
    store.names().filter(|n| n.starts_with(prefix)).map(String::from).collect()
}

fn image(rng: &mut ChaCha8Rng) -> Image {
    let data = (0..32 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::new(32, 32, 3, data).unwrap()
}

fn loss_probe(kind: usize, seed: u64) -> Probe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let d = rng.random_range(2..=6);
    let tau = rng.random_range(0.1..1.0);
    let y = labels(&mut rng, n);
    let c = cfg(64);
    let (name, report) = match kind {
        0 => (
            "loss pre",
            check_inputs(&[random(&mut rng, n, d), random(&mut rng, n, d)], &|g, v| losses::pre(g, v[0], v[1], tau).unwrap(), c),
        ),
        1 => (
            "loss dis",
            check_inputs(&[random(&mut rng, n, d), random(&mut rng, n, d)], &|g, v| losses::dis(g, v[0], v[1]).unwrap(), c),
        ),
        2 => (
            "loss div",
            check_inputs(&[random(&mut rng, n, d), random(&mut rng, n, d)], &|g, v| losses::div(g, v[0], v[1]).unwrap(), c),
        ),
        3 => {
            let (ws, wi) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            let inputs: Vec<Array2<f64>> = (0..4).map(|_| random(&mut rng, n, d)).collect();
            (
                "loss align",
                check_inputs(&inputs, &|g, v| losses::align(g, v[0], v[1], v[2], v[3], &y, ws, wi).unwrap().total, c),
            )
        }
        4 => ("loss con", check_inputs(&[random(&mut rng, n, d)], &|g, v| losses::con(g, v[0], &y, tau).unwrap(), c)),
        _ => (
            "loss cls",
            check_inputs(
                &[random(&mut rng, n, d), random(&mut rng, d, 2), random(&mut rng, 1, 2)],
                &|g, v| losses::cls(g, v[0], v[1], v[2], &y).unwrap(),
                c,
            ),
        ),
    };
    Probe {
        name: format!("{name} #{seed}"),
        report,
    }
}

fn alignment_probe(seed: u64) -> Probe {
    let m = model(seed, AdapterKind::Standard);
    let stream = if seed.is_multiple_of(2) { Stream::A } else { Stream::B };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mc = &m.config.model;
    let len = rng.random_range(2..=8);
    let f = random(&mut rng, 1, mc.joint_dim);
    let tokens = random(&mut rng, len, mc.text_hidden_dim);
    let heads = mc.attn_heads;
    let names = names_with(&m.store, &format!("align.{}.", stream.tag()));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let out_seed = rng.random();
    let report = check_params(
        &m.store,
        &refs,
        &|g, store| {
            let fv = g.constant(f.clone());
            let tv = g.constant(tokens.clone());
            let out = cross_attend(g, store, stream, heads, fv, tv).unwrap().out;
            readout(g, out, &mut ChaCha8Rng::seed_from_u64(out_seed))
        },
        cfg(6),
    );
    Probe {
        name: format!("alignment {stream:?} #{seed}"),
        report,
    }
}

fn prompt_probe(seed: u64) -> Probe {
    let m = model(seed, AdapterKind::Standard);
    let stream = if seed.is_multiple_of(2) { Stream::A } else { Stream::B };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let pooled = random(&mut rng, n, m.config.model.visual_dim);
    let mut names = names_with(&m.store, &format!("prompt.{}.", stream.tag()));
    names.extend(names_with(&m.store, "sigma."));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let out_seed = rng.random();
    let backend = m.backend();
    let report = check_params(
        &m.store,
        &refs,
        &|g, store| {
            let p = g.constant(pooled.clone());
            let texts = encode_stream(g, backend, store, stream, p).unwrap();
            let rows: Vec<Var> = texts.iter().map(|t| t.pooled).collect();
            let pooled = g.concat_rows(&rows);
            let projected = project_text(g, store, pooled).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(out_seed);
            let a = readout(g, projected, &mut r);
            let b = readout(g, texts[0].tokens, &mut r);
            g.add(a, b)
        },
        cfg(6),
    );
    Probe {
        name: format!("prompt {stream:?} #{seed}"),
        report,
    }
}

fn adapter_probe(seed: u64) -> Probe {
    let kind = if seed.is_multiple_of(2) { AdapterKind::Standard } else { AdapterKind::Svd };
    let m = model(seed, kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Image> = (0..2).map(|_| image(&mut rng)).collect();
    let names = names_with(&m.store, "adapter.");
    assert!(!names.is_empty(), "toy config injects adapters");
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let out_seed = rng.random();
    let backend = m.backend();
    let report = check_params(
        &m.store,
        &refs,
        &|g, store| {
            let imgs: Vec<&Image> = images.iter().collect();
            let v = backend.encode_images(g, store, &imgs).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(out_seed);
            let a = readout(g, v.joint, &mut r);
            let b = readout(g, v.pooled, &mut r);
            g.add(a, b)
        },
        cfg(8),
    );
    Probe {
        name: format!("adapter {kind:?} #{seed}"),
        report,
    }
}

fn objective_probe(seed: u64) -> Probe {
    let m = model(seed, AdapterKind::Standard);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Image> = (0..4).map(|_| image(&mut rng)).collect();
    let y = [0u8, 1, 0, 1];
    let w = EffectiveWeights {
        dis: 0.5,
        div: 0.3,
        align_specific: 0.7,
        align_irrelevant: 0.4,
        con: 0.2,
    };
    let names = [
        HEAD_W.to_string(),
        HEAD_B.to_string(),
        "sigma.bias".to_string(),
        "prompt.A.context".to_string(),
        "prompt.B.meta.b2".to_string(),
        "align.A.wo".to_string(),
        "align.B.ffn_b2".to_string(),
        "adapter.vision.proj.up".to_string(),
    ];
    for n in &names {
        assert!(m.store.contains(n), "missing {n}");
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = check_params(
        &m.store,
        &refs,
        &|g, store| {
            let model = Sepl {
                config: m.config.clone(),
                backend: Box::new(sepl::backend::ToyBackend::new(&m.config.model, sepl::model::TOY_BACKEND_SEED).unwrap()),
                store: store.clone(),
            };
            let imgs: Vec<&Image> = images.iter().collect();
            let terms = model.stage2_terms(g, &imgs, &y).unwrap();
            losses::total_graph(g, &terms, &w)
        },
        cfg(3),
    );
    Probe {
        name: format!("objective #{seed}"),
        report,
    }
}

/// 100 probes: 48 loss, 16 alignment, 16 prompt, 12 adapter, 8 full objective.
pub fn run(seed: u64) -> GradSuite {
    let start = Instant::now();
    let mut probes = Vec::with_capacity(100);
    for k in 0..48u64 {
        probes.push(loss_probe((k % 6) as usize, seed + k));
    }
    for k in 0..16 {
        probes.push(alignment_probe(seed + 100 + k));
    }
    for k in 0..16 {
        probes.push(prompt_probe(seed + 200 + k));
    }
    for k in 0..12 {
        probes.push(adapter_probe(seed + 300 + k));
    }
    for k in 0..8 {
        probes.push(objective_probe(seed + 400 + k));
    }
    GradSuite {
        probes,
        elapsed: start.elapsed(),
    }
}
