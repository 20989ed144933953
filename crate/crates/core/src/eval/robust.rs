//! Perturbation sweep: every (family, severity) cell re-scores the whole set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::plot;
use super::report::{evaluate_scores, EvalSet, SCORE_CHUNK};
use crate::data::perturb::{perturb_with, MAX_SEVERITY};
use crate::data::{Family, Image, PerturbationSpec, SeverityTable};
use crate::error::{Error, Result};
use crate::model::Sepl;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub family: Family,
    pub severity: u8,
    pub frame: Metrics,
    pub video: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGrid {
    pub families: Vec<Family>,
    pub severities: Vec<u8>,
    /// Video AUC of the unperturbed set.
    pub clean_auc: f64,
    /// Video AUC with every image passed through severity 0 of the first family.
    pub control_auc: f64,
    /// Row-major over `families × severities`.
    pub cells: Vec<GridCell>,
    /// Mean video AUC across families, per severity.
    pub average: Vec<f64>,
}

impl RobustnessGrid {
    pub fn cell(&self, family: Family, severity: u8) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.family == family && c.severity == severity)
    }

    /// Video AUCs of one family in severity order.
    pub fn curve(&self, family: Family) -> Vec<f64> {
        self.severities
            .iter()
            .filter_map(|&s| self.cell(family, s).map(|c| c.video.auc))
            .collect()
    }

    pub fn write_plot(&self, path: impl AsRef<Path>) -> Result<()> {
        let xs: Vec<f64> = self.severities.iter().map(|&s| s as f64).collect();
        let mut series: Vec<(String, Vec<f64>)> = self
            .families
            .iter()
            .map(|&f| (f.name().to_string(), self.curve(f)))
            .collect();
        series.push(("average".into(), self.average.clone()));
        plot::write_lines(path, &xs, &series, (0.4, 1.0), "video AUC vs severity")
    }
}

/// Seed of the perturbation applied to sample `i` in a family.
fn sample_seed(seed: u64, family: Family, i: usize) -> u64 {
    let fam = Family::ALL.iter().position(|&f| f == family).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (fam << 40) ^ i as u64
}

fn perturbed_scores(
    model: &Sepl,
    set: &EvalSet,
    family: Family,
    severity: u8,
    seed: u64,
    table: &SeverityTable,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for (k, chunk) in set.images.chunks(SCORE_CHUNK).enumerate() {
        let imgs = chunk
            .iter()
            .enumerate()
            .map(|(j, img)| {
                let spec = PerturbationSpec::new(family, severity, sample_seed(seed, family, k * SCORE_CHUNK + j));
                perturb_with(img, &spec, table)
            })
            .collect::<Result<Vec<Image>>>()?;
        let refs: Vec<&Image> = imgs.iter().collect();
        out.extend(model.predict_batch(&refs)?);
    }
    Ok(out)
}

pub fn robustness_sweep(
    model: &Sepl,
    set: &EvalSet,
    families: &[Family],
    severities: &[u8],
    seed: u64,
) -> Result<RobustnessGrid> {
    robustness_sweep_with(model, set, families, severities, seed, SeverityTable::builtin())
}

pub fn robustness_sweep_with(
    model: &Sepl,
    set: &EvalSet,
    families: &[Family],
    severities: &[u8],
    seed: u64,
    table: &SeverityTable,
) -> Result<RobustnessGrid> {
    if families.is_empty() || severities.is_empty() {
        return Err(Error::InvalidArgument("robustness sweep needs families and severities".into()));
    }
    if let Some(s) = severities.iter().find(|&&s| s == 0 || s > MAX_SEVERITY) {
        return Err(Error::InvalidArgument(format!(
            "sweep severities must lie in 1..={MAX_SEVERITY}, got {s}"
        )));
    }
    let clean = model.score_all(&set.images, SCORE_CHUNK)?;
    let clean_auc = evaluate_scores(set, &clean)?.video.auc;
    let control = perturbed_scores(model, set, families[0], 0, seed, table)?;
    let control_auc = evaluate_scores(set, &control)?.video.auc;
    let mut cells = Vec::with_capacity(families.len() * severities.len());
    for &family in families {
        for &severity in severities {
            let scores = perturbed_scores(model, set, family, severity, seed, table)?;
            let e = evaluate_scores(set, &scores)?;
            cells.push(GridCell {
                family,
                severity,
                frame: e.frame,
                video: e.video,
            });
        }
    }
    let average = (0..severities.len())
        .map(|j| {
            (0..families.len())
                .map(|i| cells[i * severities.len() + j].video.auc)
                .sum::<f64>()
                / families.len() as f64
        })
        .collect();
    Ok(RobustnessGrid {
        families: families.to_vec(),
        severities: severities.to_vec(),
        clean_auc,
        control_auc,
        cells,
        average,
    })
}

/// Number of adjacent pairs where `curve` increases, and the largest such increase.
pub fn inversions(curve: &[f64]) -> (usize, f64) {
    curve
        .windows(2)
        .filter(|w| w[1] > w[0])
        .fold((0, 0.0), |(n, m), w| (n + 1, f64::max(m, w[1] - w[0])))
}
