//! Frame scores to video scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub video_id: String,
    pub frame: usize,
    pub score: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub score: f64,
    pub label: u8,
    pub frames: usize,
}

/// One row per video (sorted by id), scored by the mean of its frames.
pub fn aggregate_video(table: &[ScoreRow]) -> Result<Vec<VideoScore>> {
    if table.is_empty() {
        return Err(Error::Metric("empty score table".into()));
    }
    let mut acc: BTreeMap<&str, (f64, usize, u8)> = BTreeMap::new();
    for r in table {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Metric(format!(
                "score {} of `{}` outside [0, 1]",
                r.score, r.video_id
            )));
        }
        let e = acc.entry(&r.video_id).or_insert((0.0, 0, r.label));
        if e.2 != r.label {
            return Err(Error::Metric(format!(
                "video `{}` has frames labelled {} and {}",
                r.video_id, e.2, r.label
            )));
        }
        e.0 += r.score;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (sum, n, label))| VideoScore {
            video_id: id.to_string(),
            score: sum / n as f64,
            label,
            frames: n,
        })
        .collect())
}

pub fn video_scores_and_labels(videos: &[VideoScore]) -> (Vec<f64>, Vec<u8>) {
    (
        videos.iter().map(|v| v.score).collect(),
        videos.iter().map(|v| v.label).collect(),
    )
}
