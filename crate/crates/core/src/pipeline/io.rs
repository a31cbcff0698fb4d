//! Manifests, feature files and label files.
//!
//! A manifest is a CSV file with the header
//! `video_id,features,ground_truth,activity`; the last two columns may be
//! empty and relative paths resolve against the manifest's directory.
//! Feature files ending in `.csv` hold one frame per row; any other
//! extension is the binary layout: little-endian `u32 T`, `u32 D`, then
//! `T·D` `f32` values row by row. Label files hold one integer per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{common_dim, FrameSequence};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub features: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub activity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

/// A loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<FrameSequence>,
    /// Present only when every entry names a label file.
    pub ground_truth: Option<Vec<Vec<usize>>>,
    pub activities: Option<Vec<usize>>,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    pub fn of_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Binary => "bin",
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FeatureFormat::Csv),
            "bin" | "binary" => Ok(FeatureFormat::Binary),
            other => Err(Error::InvalidArgument(format!("unknown feature format {other:?}"))),
        }
    }
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
            entries.push(row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        if entries.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "manifest lists no videos".into(),
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { entries, root })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            writer.serialize(e).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut videos = Vec::with_capacity(self.entries.len());
        let mut truth = Vec::new();
        for e in &self.entries {
            let path = self.resolve(&e.features);
            let features = read_features(&path)?;
            let video = FrameSequence::new(e.video_id.clone(), features)?;
            if let Some(gt) = &e.ground_truth {
                let gt_path = self.resolve(gt);
                let labels = read_labels(&gt_path)?;
                if labels.len() != video.len() {
                    return Err(Error::Parse {
                        path: gt_path,
                        line: labels.len().min(video.len()) + 1,
                        message: format!("{} labels for {} frames", labels.len(), video.len()),
                    });
                }
                truth.push(labels);
            }
            videos.push(video);
        }
        let dim = common_dim(&videos)?;
        let ground_truth = (truth.len() == videos.len()).then_some(truth);
        let activities = self.entries.iter().map(|e| e.activity).collect::<Option<Vec<_>>>();
        Ok(Dataset {
            videos,
            ground_truth,
            activities,
            dim,
        })
    }
}

pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    DatasetManifest::read(manifest)?.load()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    match FeatureFormat::of_path(path) {
        FeatureFormat::Csv => read_features_csv(path),
        FeatureFormat::Binary => read_features_binary(path),
    }
}

fn read_features_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("{field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no frames".into(),
        });
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

fn read_features_binary(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < 8 {
        return Err(truncated(format!("header needs 8 bytes, file has {}", bytes.len())));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let expected = 8 + 4 * t * d;
    if bytes.len() != expected {
        return Err(truncated(format!(
            "header says {t} x {d} floats ({expected} bytes), file has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(t, d, data).map_err(|e| truncated(e.to_string()))
}

pub fn write_features(path: &Path, features: &Matrix, format: FeatureFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let result = match format {
        FeatureFormat::Csv => features.iter_rows().try_for_each(|row| {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))
        }),
        FeatureFormat::Binary => {
            let mut out = Vec::with_capacity(8 + 4 * features.data().len());
            out.extend((features.rows() as u32).to_le_bytes());
            out.extend((features.cols() as u32).to_le_bytes());
            for &v in features.data() {
                out.extend((v as f32).to_le_bytes());
            }
            w.write_all(&out)
        }
    };
    result.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{:?}: {e}", l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every video (and its labels, when given) next to a manifest in
/// `dir` and returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    videos: &[FrameSequence],
    labels: Option<&[Vec<usize>]>,
    activities: Option<&[usize]>,
    format: FeatureFormat,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for (i, v) in videos.iter().enumerate() {
        let feat = PathBuf::from(format!("{}.{}", v.video_id(), format.extension()));
        write_features(&dir.join(&feat), v.features(), format)?;
        let gt = match labels {
            Some(l) => {
                let p = PathBuf::from(format!("{}.gt", v.video_id()));
                write_labels(&dir.join(&p), &l[i])?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            video_id: v.video_id().to_string(),
            features: feat,
            ground_truth: gt,
            activity: activities.map(|a| a[i]),
        });
    }
    let manifest = dir.join("manifest.csv");
    DatasetManifest {
        entries,
        root: dir.to_path_buf(),
    }
    .write(&manifest)?;
    Ok(manifest)
}
