use std::fs;
use std::path::Path;

use carmil::io::{ingest, write_dataset, LabeledSlide};
use carmil::synth::{generate, SynthConfig};
use carmil::{Error, ErrorKind};
use tempfile::TempDir;

fn dataset(dir: &Path) -> (Vec<LabeledSlide>, std::path::PathBuf) {
    let data = generate(&SynthConfig {
        n_slides: 5,
        tiles_per_slide: 12,
        feature_dim: 3,
        grid_side: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let slides: Vec<LabeledSlide> = data
        .into_iter()
        .map(|s| LabeledSlide {
            tiles: s.tiles,
            label: s.label,
        })
        .collect();
    let manifest = write_dataset(dir, 3, &slides).unwrap();
    (slides, manifest)
}

fn edit(path: &Path, f: impl Fn(String) -> String) {
    let text = fs::read_to_string(path).unwrap();
    fs::write(path, f(text)).unwrap();
}

fn kind_of(manifest: &Path) -> ErrorKind {
    ingest(manifest).unwrap_err().kind()
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let (slides, manifest) = dataset(dir.path());
    assert_eq!(ingest(&manifest).unwrap(), slides);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(kind_of(&dir.path().join("manifest.json")), ErrorKind::Io);
    let (_, manifest) = dataset(dir.path());
    fs::remove_file(dir.path().join("slide_0003.csv")).unwrap();
    assert_eq!(kind_of(&manifest), ErrorKind::Io);
}

#[test]
fn bad_numbers_are_malformed() {
    let dir = TempDir::new().unwrap();
    let (_, manifest) = dataset(dir.path());
    let slide = dir.path().join("slide_0001.csv");
    edit(&slide, |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let mut cells: Vec<&str> = lines[1].split(',').collect();
        cells[3] = "NaN";
        lines[1] = cells.join(",");
        lines.join("\n") + "\n"
    });
    let err = ingest(&manifest).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::MalformedData);
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn label_problems_are_malformed() {
    let dir = TempDir::new().unwrap();
    let (_, manifest) = dataset(dir.path());
    let labels = dir.path().join("labels.csv");
    let original = fs::read_to_string(&labels).unwrap();

    edit(&labels, |t| t.replacen(",1\n", ",yes\n", 1));
    assert_eq!(kind_of(&manifest), ErrorKind::MalformedData);

    fs::write(&labels, original.replace("slide_0002,", "slide_9999,")).unwrap();
    let err = ingest(&manifest).unwrap_err();
    assert!(err.to_string().contains("no label for slide `slide_0002`"), "{err}");

    let mut lines: Vec<&str> = original.lines().collect();
    let time_field = lines[1].split(',').nth(1).unwrap().to_string();
    let negative = lines[1].replace(&time_field, "-1");
    lines[1] = &negative;
    fs::write(&labels, lines.join("\n") + "\n").unwrap();
    assert_eq!(kind_of(&manifest), ErrorKind::MalformedData);
}

#[test]
fn wrong_feature_count_names_the_slide() {
    let dir = TempDir::new().unwrap();
    let (_, manifest) = dataset(dir.path());
    edit(&manifest, |t| t.replace("\"feature_dim\": 3", "\"feature_dim\": 4"));
    match ingest(&manifest).unwrap_err() {
        Error::FeatureDimension { slide, expected, found } => {
            assert_eq!((slide.as_str(), expected, found), ("slide_0000", 4, 3));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn duplicates_are_rejected() {
    let dir = TempDir::new().unwrap();
    let (mut slides, _) = dataset(dir.path());
    slides[1].tiles.slide_id = slides[0].tiles.slide_id.clone();
    let other = TempDir::new().unwrap();
    let err = write_dataset(other.path(), 3, &slides).unwrap_err();
    assert!(matches!(err, Error::DuplicateSlide(_)));
    assert_eq!(err.kind(), ErrorKind::MalformedData);
}

#[test]
fn unknown_manifest_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let (_, manifest) = dataset(dir.path());
    edit(&manifest, |t| t.replacen('{', "{\"extra\": 1,", 1));
    assert_eq!(kind_of(&manifest), ErrorKind::MalformedData);
}

#[test]
fn empty_manifest_is_an_empty_dataset() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.json");
    fs::write(&manifest, r#"{"feature_dim": 4, "slides": []}"#).unwrap();
    assert!(ingest(&manifest).unwrap().is_empty());
}
