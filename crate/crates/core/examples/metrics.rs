//! Frame- and video-level metrics from a score table.
//!
//! cargo run --example metrics

use sepl::eval::{aggregate_video, metrics, ScoreRow};

fn main() -> sepl::Result<()> {
    let rows: Vec<ScoreRow> = [
        ("a", 0.10, 0),
        ("a", 0.30, 0),
        ("b", 0.80, 1),
        ("b", 0.40, 1),
        ("c", 0.35, 0),
        ("c", 0.70, 0),
        ("d", 0.60, 1),
        ("d", 0.90, 1),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(v, score, label))| ScoreRow {
        video_id: v.to_string(),
        frame: i % 2,
        score,
        label,
    })
    .collect();

    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    println!("frame: {:?}", metrics(&scores, &labels)?);

    let videos = aggregate_video(&rows)?;
    let (vs, vl): (Vec<f64>, Vec<u8>) = videos.iter().map(|v| (v.score, v.label)).unzip();
    println!("video: {:?}", metrics(&vs, &vl)?);
    Ok(())
}
