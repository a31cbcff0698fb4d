//! Run directories: everything a training run writes, and readers for the
//! parts later commands need.
//!
//! ```text
//! <out>/config.kv        settings used
//! <out>/q_curve.csv      mean Q per epoch
//! <out>/progress.jsonl   one epoch record per line
//! <out>/segments.csv     video_id,action,start_frame,length
//! <out>/timelines.txt    one character per frame bucket
//! <out>/metrics.kv       only with ground truth
//! <out>/models/bundle.json
//! <out>/models/activity_<a>/model.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::run::{ModelBundle, RunOutput};
use crate::clustering::runs;
use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::hmm::Segmentation;

pub const BUNDLE_FILE: &str = "models/bundle.json";
pub const SEGMENTS_FILE: &str = "segments.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn q_curve(q: &[f64], activity: Option<usize>) -> String {
    let mut s = String::new();
    match activity {
        Some(a) => {
            s.push_str("activity,epoch,mean_q\n");
            for (i, v) in q.iter().enumerate() {
                let _ = writeln!(s, "{a},{},{v}", i + 1);
            }
        }
        None => {
            s.push_str("epoch,mean_q\n");
            for (i, v) in q.iter().enumerate() {
                let _ = writeln!(s, "{},{v}", i + 1);
            }
        }
    }
    s
}

pub fn segments_csv(ids: &[&str], segmentations: &[Segmentation]) -> String {
    let mut s = String::from("video_id,action,start_frame,length\n");
    for (id, seg) in ids.iter().zip(segmentations) {
        for (a, start, len) in seg.segments() {
            let _ = writeln!(s, "{id},{a},{start},{len}");
        }
    }
    s
}

/// Reads `segments.csv` back into per-video segmentations, in file order.
pub fn read_segments(path: &Path) -> Result<Vec<(String, Segmentation)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut parts: BTreeMap<String, (Vec<usize>, Vec<usize>, usize)> = BTreeMap::new();
    for (i, row) in reader.deserialize::<(String, usize, usize, usize)>().enumerate() {
        let line = i + 2;
        let (id, action, start, len) = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let entry = parts.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), Vec::new(), 0)
        });
        if start != entry.2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("segment of {id} starts at {start}, expected {}", entry.2),
            });
        }
        entry.0.push(action);
        entry.1.push(len);
        entry.2 += len;
    }
    order
        .into_iter()
        .map(|id| {
            let (a, l, _) = parts.remove(&id).expect("recorded");
            let seg = Segmentation::new(a, l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("{id}: {e}"),
            })?;
            Ok((id, seg))
        })
        .collect()
}

/// Label sequence squeezed to `width` characters; each character shows the
/// most frequent label of its bucket as a letter.
pub fn timeline(labels: &[usize], width: usize) -> String {
    if labels.is_empty() || width == 0 {
        return String::new();
    }
    let width = width.min(labels.len());
    (0..width)
        .map(|b| {
            let lo = b * labels.len() / width;
            let hi = ((b + 1) * labels.len() / width).max(lo + 1);
            let mut count: BTreeMap<usize, usize> = BTreeMap::new();
            labels[lo..hi].iter().for_each(|&l| *count.entry(l).or_default() += 1);
            let (&label, _) = count.iter().max_by_key(|(l, c)| (**c, std::cmp::Reverse(**l))).expect("nonempty");
            label_char(label)
        })
        .collect()
}

fn label_char(label: usize) -> char {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    ALPHABET.get(label).map_or('?', |&b| b as char)
}

pub fn timelines(ids: &[&str], predicted: &[Vec<usize>], truth: Option<&[Vec<usize>]>, width: usize) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(s, "{id}");
        let _ = writeln!(s, "  pred {}", timeline(&predicted[i], width));
        if let Some(t) = truth {
            let _ = writeln!(s, "  gt   {}", timeline(&t[i], width));
        }
        let transcript: Vec<String> = runs(&predicted[i]).iter().map(|(a, l)| format!("{}:{l}", label_char(*a))).collect();
        let _ = writeln!(s, "  segs {}", transcript.join(" "));
    }
    s
}

/// Writes the whole run directory.
pub fn write_run(
    dir: &Path,
    config: &RunConfig,
    videos: &[FrameSequence],
    truth: Option<&[Vec<usize>]>,
    output: &RunOutput,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids: Vec<&str> = videos.iter().map(FrameSequence::video_id).collect();
    write(&dir.join("config.kv"), &config.to_kv())?;

    let mut progress = String::new();
    if config.multi_activity {
        let mut all = String::from("activity,epoch,mean_q\n");
        for run in &output.activities {
            let curve = q_curve(&run.q_history, Some(run.activity));
            all.push_str(curve.split_once('\n').map_or("", |x| x.1));
            write(&dir.join(format!("q_curve_activity_{}.csv", run.activity)), &curve)?;
        }
        write(&dir.join("q_curve.csv"), &all)?;
    } else if let Some(run) = output.activities.first() {
        write(&dir.join("q_curve.csv"), &q_curve(&run.q_history, None))?;
    }
    for run in &output.activities {
        for record in &run.records {
            let mut value = serde_json::to_value(record)?;
            if let Some(obj) = value.as_object_mut() {
                obj.insert("activity".into(), run.activity.into());
            }
            let _ = writeln!(progress, "{value}");
        }
    }
    write(&dir.join("progress.jsonl"), &progress)?;

    write(&dir.join(SEGMENTS_FILE), &segments_csv(&ids, &output.segmentations))?;
    write(&dir.join("timelines.txt"), &timelines(&ids, &output.frame_labels(), truth, 100))?;
    if let Some(m) = &output.metrics {
        write(&dir.join("metrics.kv"), &m.to_kv())?;
    }
    write_bundle(dir, &output.bundle)
}

pub fn write_bundle(dir: &Path, bundle: &ModelBundle) -> Result<()> {
    write(&dir.join(BUNDLE_FILE), &serde_json::to_string(bundle)?)?;
    for m in &bundle.activities {
        let path = dir.join(format!("models/activity_{}/model.json", m.activity));
        write(&path, &serde_json::to_string(m)?)?;
    }
    Ok(())
}

/// Loads a bundle from a run directory or directly from a JSON file.
pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let file: PathBuf = if path.is_dir() { path.join(BUNDLE_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Ok(serde_json::from_str(&text)?)
}
