//! Manifest and CSV reading and writing for tile datasets.
//!
//! A manifest is JSON:
//!
//! ```json
//! {"feature_dim": 2, "slides": [
//!   {"slide_id": "a", "features": "a.csv", "labels": "labels.csv"}
//! ]}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Feature files
//! have columns `tile_id,x,y,f0,…`; label files `slide_id,time,event`.
//! Floats are written in shortest round-trip form, so reading back what was
//! written reproduces every bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TileSet;
use crate::losses::SurvivalLabel;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub features: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub feature_dim: usize,
    pub slides: Vec<ManifestEntry>,
}

/// A slide and its survival label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSlide {
    pub tiles: TileSet,
    pub label: SurvivalLabel,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::malformed(path, format!("{other:?}")),
    }
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::malformed(path, format!("line {line}: {what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::malformed(path, format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, SurvivalLabel>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["slide_id", "time", "event"] {
        return Err(Error::malformed(path, "expected header slide_id,time,event"));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let time = parse_f64(path, line, &rec[1], "time")?;
        if time <= 0.0 {
            return Err(Error::malformed(path, format!("line {line}: survival time {time} is not positive")));
        }
        let event = match rec[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::malformed(path, format!("line {line}: event `{other}` is not 0 or 1"))),
        };
        if out.insert(rec[0].to_string(), SurvivalLabel { time, event }).is_some() {
            return Err(Error::DuplicateSlide(rec[0].to_string()));
        }
    }
    Ok(out)
}

fn read_features(path: &Path, slide_id: &str, feature_dim: usize) -> Result<TileSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "tile_id" || &header[1] != "x" || &header[2] != "y" {
        return Err(Error::malformed(path, "expected header tile_id,x,y,f0,..."));
    }
    let found = header.len() - 3;
    if found != feature_dim {
        return Err(Error::FeatureDimension {
            slide: slide_id.to_string(),
            expected: feature_dim,
            found,
        });
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        ids.push(
            rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::malformed(path, format!("line {line}: bad tile_id `{}`", &rec[0])))?,
        );
        coords.push(parse_f64(path, line, &rec[1], "x")?);
        coords.push(parse_f64(path, line, &rec[2], "y")?);
        for f in rec.iter().skip(3) {
            feats.push(parse_f64(path, line, f, "feature")?);
        }
    }
    let n = ids.len();
    let coords = Matrix::from_vec(n, 2, coords)?;
    let features = Matrix::from_vec(n, feature_dim, feats)?;
    TileSet::with_ids(slide_id, ids, coords, features).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Reads every slide listed in a manifest.
pub fn ingest(manifest_path: &Path) -> Result<Vec<LabeledSlide>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(manifest_path, e.to_string()))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut label_files: BTreeMap<PathBuf, BTreeMap<String, SurvivalLabel>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(manifest.slides.len());
    for entry in &manifest.slides {
        if !seen.insert(entry.slide_id.clone()) {
            return Err(Error::DuplicateSlide(entry.slide_id.clone()));
        }
        let labels_path = root.join(&entry.labels);
        if !label_files.contains_key(&labels_path) {
            let parsed = read_labels(&labels_path)?;
            label_files.insert(labels_path.clone(), parsed);
        }
        let label = *label_files[&labels_path]
            .get(&entry.slide_id)
            .ok_or_else(|| Error::malformed(&labels_path, format!("no label for slide `{}`", entry.slide_id)))?;
        let tiles = read_features(&root.join(&entry.features), &entry.slide_id, manifest.feature_dim)?;
        out.push(LabeledSlide { tiles, label });
    }
    Ok(out)
}

/// Writes one features CSV per slide, a shared `labels.csv` and
/// `manifest.json` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, feature_dim: usize, slides: &[LabeledSlide]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(slides.len());
    let labels_path = dir.join("labels.csv");
    let mut labels = csv::Writer::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
    labels
        .write_record(["slide_id", "time", "event"])
        .map_err(|e| csv_err(&labels_path, e))?;
    for s in slides {
        let id = &s.tiles.slide_id;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSlide(id.clone()));
        }
        if s.tiles.feature_dim() != feature_dim {
            return Err(Error::FeatureDimension {
                slide: id.clone(),
                expected: feature_dim,
                found: s.tiles.feature_dim(),
            });
        }
        labels
            .write_record([id.clone(), s.label.time.to_string(), (s.label.event as u8).to_string()])
            .map_err(|e| csv_err(&labels_path, e))?;

        let file = format!("{id}.csv");
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["tile_id".to_string(), "x".into(), "y".into()];
        header.extend((0..feature_dim).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for p in 0..s.tiles.len() {
            let mut row = vec![
                s.tiles.tile_ids[p].to_string(),
                s.tiles.coords[(p, 0)].to_string(),
                s.tiles.coords[(p, 1)].to_string(),
            ];
            row.extend(s.tiles.features.row(p).iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            slide_id: id.clone(),
            features: file.into(),
            labels: "labels.csv".into(),
        });
    }
    labels.flush().map_err(|e| Error::io(&labels_path, e))?;
    let manifest = Manifest {
        feature_dim,
        slides: entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
