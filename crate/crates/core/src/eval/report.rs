//! Scoring a labelled image set and the serialized evaluation report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_video, video_scores_and_labels, ScoreRow};
use super::metrics::{metrics, Metrics};
use super::robust::RobustnessGrid;
use crate::data::{Image, Manifest, Split, ToyDataset};
use crate::error::{Error, Result};
use crate::model::Sepl;

/// Images scored per forward pass.
pub const SCORE_CHUNK: usize = 64;

/// Labelled frames with their video grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
    pub video_ids: Vec<String>,
}

impl EvalSet {
    pub fn new(images: Vec<Image>, labels: Vec<u8>, video_ids: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != video_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "eval set sizes differ: {} images, {} labels, {} video ids",
                images.len(),
                labels.len(),
                video_ids.len()
            )));
        }
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty eval set".into()));
        }
        Ok(Self {
            images,
            labels,
            video_ids,
        })
    }

    /// Samples of `split`, images read from disk.
    pub fn from_manifest(m: &Manifest, split: Split) -> Result<Self> {
        let samples = m.split(split);
        let images = samples
            .iter()
            .map(|s| Image::load(m.resolve(s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            images,
            samples.iter().map(|s| s.label).collect(),
            samples.iter().map(|s| s.video_id.clone()).collect(),
        )
    }

    pub fn from_toy(ds: &ToyDataset, split: Split) -> Result<Self> {
        let idx = ds.indices(split);
        Self::new(
            ds.images_of(&idx),
            ds.labels_of(&idx),
            idx.iter().map(|&i| ds.samples[i].video_id.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_videos(&self) -> usize {
        let mut ids: Vec<&str> = self.video_ids.iter().map(|s| s.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Score table for per-frame `scores`; frame index = order within the video.
    pub fn score_table(&self, scores: &[f64]) -> Vec<ScoreRow> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        scores
            .iter()
            .zip(&self.labels)
            .zip(&self.video_ids)
            .map(|((&score, &label), vid)| {
                let f = seen.entry(vid).or_insert(0);
                let row = ScoreRow {
                    video_id: vid.clone(),
                    frame: *f,
                    score,
                    label,
                };
                *f += 1;
                row
            })
            .collect()
    }
}

/// Frame- and video-level metrics of one scoring pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub frame: Metrics,
    pub video: Metrics,
    pub n_samples: usize,
    pub n_videos: usize,
}

pub fn evaluate_scores(set: &EvalSet, scores: &[f64]) -> Result<Evaluation> {
    let table = set.score_table(scores);
    let videos = aggregate_video(&table)?;
    let (vs, vl) = video_scores_and_labels(&videos);
    Ok(Evaluation {
        frame: metrics(scores, &set.labels)?,
        video: metrics(&vs, &vl)?,
        n_samples: set.len(),
        n_videos: videos.len(),
    })
}

pub fn evaluate(model: &Sepl, set: &EvalSet) -> Result<(Evaluation, Vec<ScoreRow>)> {
    let scores = model.score_all(&set.images, SCORE_CHUNK)?;
    Ok((evaluate_scores(set, &scores)?, set.score_table(&scores)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: Split,
    pub config_hash: String,
    pub n_samples: usize,
    pub n_videos: usize,
    pub frame: Metrics,
    pub video: Metrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub robustness: Option<RobustnessGrid>,
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>, split: Split, config_hash: impl Into<String>, e: &Evaluation) -> Self {
        Self {
            dataset: dataset.into(),
            split,
            config_hash: config_hash.into(),
            n_samples: e.n_samples,
            n_videos: e.n_videos,
            frame: e.frame,
            video: e.video,
            robustness: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Flat table: one row per (scope, family, severity).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "split", "scope", "family", "severity", "auc", "ap", "eer", "eer_inverted"])?;
        let split = self.split.to_string();
        let mut row = |scope: &str, family: &str, sev: &str, m: &Metrics| -> Result<()> {
            w.write_record([
                self.dataset.as_str(),
                split.as_str(),
                scope,
                family,
                sev,
                &m.auc.to_string(),
                &m.ap.to_string(),
                &m.eer.to_string(),
                &m.eer_inverted.to_string(),
            ])?;
            Ok(())
        };
        row("frame", "", "", &self.frame)?;
        row("video", "", "", &self.video)?;
        if let Some(g) = &self.robustness {
            for c in &g.cells {
                row("video", c.family.name(), &c.severity.to_string(), &c.video)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()?).map_err(|e| Error::io(&csv, e))
    }
}
