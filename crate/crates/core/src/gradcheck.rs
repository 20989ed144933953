//! Central finite-difference verification of [`Graph`] gradients.
//!
//! The relative error of one entry is `|a − n| / max(|a|, |n|, floor)`, where
//! `a` is the analytic and `n` the numeric derivative. The floor keeps entries
//! whose true derivative is zero from dividing rounding noise by zero.

use crate::autograd::{GradPolicy, Graph, Tensor, Var};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(tensor label, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, idx: usize, a: f64, n: f64, floor: f64) {
        let err = rel_err(a, n, floor);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((label.to_string(), idx, a, n));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err && other.worst.is_some() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn entries(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let stride = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Check the gradient of `f` with respect to each of `inputs`.
pub fn check_inputs(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    cfg: GradCheck,
) -> GradCheckReport {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.scalar(out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, (&v, input)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zeros(v, input);
        for idx in entries(input.len(), cfg.max_entries) {
            let orig = input.as_slice().expect("standard layout")[idx];
            work[k].as_slice_mut().unwrap()[idx] = orig + cfg.eps;
            let plus = eval(&work);
            work[k].as_slice_mut().unwrap()[idx] = orig - cfg.eps;
            let minus = eval(&work);
            work[k].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.as_slice().unwrap()[idx];
            report.record(&format!("input{k}"), idx, a, numeric, cfg.floor);
        }
    }
    report
}

/// Check the gradient of `f` with respect to the named parameters of `store`.
pub fn check_params(
    store: &ParamStore,
    names: &[&str],
    f: &dyn Fn(&mut Graph, &ParamStore) -> Var,
    cfg: GradCheck,
) -> GradCheckReport {
    let policy = GradPolicy::Only(names.iter().map(|s| s.to_string()).collect());
    let mut g = Graph::with_policy(policy);
    let out = f(&mut g, store);
    let grads = g.backward(out);

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for &name in names {
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("gradcheck: unknown parameter `{name}`"));
        let analytic = match g.params().get(name) {
            Some(&v) => grads.get_or_zeros(v, value),
            None => Tensor::zeros(value.raw_dim()),
        };
        for idx in entries(value.len(), cfg.max_entries) {
            let orig = value.as_slice().expect("standard layout")[idx];
            let mut eval_at = |x: f64| {
                work.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = x;
                let mut g = Graph::new();
                let out = f(&mut g, &work);
                g.scalar(out)
            };
            let plus = eval_at(orig + cfg.eps);
            let minus = eval_at(orig - cfg.eps);
            work.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.as_slice().unwrap()[idx];
            report.record(name, idx, a, numeric, cfg.floor);
        }
    }
    report
}
