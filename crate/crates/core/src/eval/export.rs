//! Feature export: a CSV point file with every sample, and a t-SNE projection
//! of a seeded subsample as CSV plus an SVG scatter.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plot;
use super::report::{EvalSet, SCORE_CHUNK};
use super::tsne::{sample_indices, tsne, TsneConfig, MAX_POINTS};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{Features, Sepl};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    /// Backbone feature `f` in the joint space.
    Backbone,
    /// Forgery-specific aligned feature `f^A`.
    Specific,
    /// Forgery-irrelevant aligned feature `f^B`.
    Irrelevant,
}

impl Which {
    pub const ALL: [Which; 3] = [Which::Backbone, Which::Specific, Which::Irrelevant];

    pub fn name(self) -> &'static str {
        match self {
            Which::Backbone => "backbone",
            Which::Specific => "specific",
            Which::Irrelevant => "irrelevant",
        }
    }

    pub fn select(self, f: &Features) -> &Tensor {
        match self {
            Which::Backbone => &f.backbone,
            Which::Specific => &f.specific,
            Which::Irrelevant => &f.irrelevant,
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Which::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{s}` (expected backbone|specific|irrelevant)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportSummary {
    pub points: PathBuf,
    pub projection: PathBuf,
    pub plot: PathBuf,
    pub n_points: usize,
    pub n_projected: usize,
}

/// Header `index,video_id,label,x0..x{d-1}`, one row per sample.
pub fn points_csv(x: &Tensor, set: &EvalSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "video_id".into(), "label".into()];
    header.extend((0..x.ncols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string(), set.video_ids[i].clone(), set.labels[i].to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.17e}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Read back a point file as `(labels, features)`.
pub fn read_points(path: impl AsRef<Path>) -> Result<(Vec<u8>, Tensor)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::InvalidArgument(format!("point file: {m}"));
        labels.push(rec.get(2).ok_or_else(|| bad("missing label"))?.parse().map_err(|_| bad("bad label"))?);
        let vals = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(vals.len()) != vals.len() {
            return Err(bad("ragged rows"));
        }
        data.extend(vals);
    }
    let n = labels.len();
    let x = Tensor::from_shape_vec((n, width.unwrap_or(0)), data).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((labels, x))
}

pub fn export_embeddings(
    model: &Sepl,
    set: &EvalSet,
    which: Which,
    tsne_cfg: &TsneConfig,
    dir: impl AsRef<Path>,
) -> Result<ExportSummary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let feats = model.features(&set.images, SCORE_CHUNK)?;
    let x = which.select(&feats);
    let points = dir.join(format!("{which}_points.csv"));
    std::fs::write(&points, points_csv(x, set)?).map_err(|e| Error::io(&points, e))?;

    let idx = sample_indices(x.nrows(), MAX_POINTS, tsne_cfg.seed);
    let sub = x.select(ndarray::Axis(0), &idx);
    let y = tsne(&sub, tsne_cfg)?;
    let projection = dir.join(format!("{which}_tsne.csv"));
    let mut w = csv::Writer::from_path(&projection)?;
    w.write_record(["index", "label", "y0", "y1"])?;
    for (k, &i) in idx.iter().enumerate() {
        w.write_record([
            i.to_string(),
            set.labels[i].to_string(),
            format!("{:.17e}", y[[k, 0]]),
            format!("{:.17e}", y[[k, 1]]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&projection, e))?;

    let plot_path = dir.join(format!("{which}_tsne.svg"));
    let pts: Vec<(f64, f64)> = y.rows().into_iter().map(|r| (r[0], r[1])).collect();
    let classes: Vec<usize> = idx.iter().map(|&i| set.labels[i] as usize).collect();
    plot::write_scatter(
        &plot_path,
        &pts,
        &classes,
        &["real".into(), "fake".into()],
        &format!("t-SNE of {which} features"),
    )?;
    Ok(ExportSummary {
        points,
        projection,
        plot: plot_path,
        n_points: x.nrows(),
        n_projected: idx.len(),
    })
}
