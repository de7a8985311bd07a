use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use carmil::graph::{joint_max_normalize, mean_neighbor_distance, spatial_adjacency, write_heatmap_csv};
use carmil::io::{ingest, write_dataset, LabeledSlide};
use carmil::losses::concordance_index;
use carmil::model::PreparedSlide;
use carmil::synth::{generate, SynthConfig};
use carmil::train::{
    ablate_shuffle, derive_seed, evaluate_context_awareness, mean_std, run_nested_cv, CvPlan, ShuffleSummary,
    TrainConfig,
};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::run::{io_err, load_checkpoint, to_json, write, RunFold, RunIndex};
use crate::Common;

/// Configuration of `train`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub train: TrainConfig,
    pub cv: CvPlan,
}

/// Configuration of the scoring subcommands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Master seed for anything random (shuffle seeds).
    pub seed: u64,
}

#[derive(Serialize)]
struct Echo<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    #[serde(flatten)]
    args: BTreeMap<&'a str, String>,
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C, CliError> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn echo<C: Serialize>(out: &Path, command: &str, config: &C, args: &[(&str, String)]) -> Result<(), CliError> {
    let echo = Echo {
        command,
        config,
        args: args.iter().cloned().collect(),
    };
    write(&out.join("config.json"), &to_json(&echo)?)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn bad_config(e: carmil::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn prepare(slides: Vec<LabeledSlide>, k: usize) -> Result<Vec<PreparedSlide>, CliError> {
    slides
        .into_iter()
        .map(|s| PreparedSlide::new(s.tiles, s.label, k).map_err(CliError::from))
        .collect()
}

pub fn gen_data(common: &Common) -> Result<String, CliError> {
    let mut cfg: SynthConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(bad_config)?;
    let data = generate(&cfg)?;
    let labeled: Vec<LabeledSlide> = data
        .iter()
        .map(|s| LabeledSlide {
            tiles: s.tiles.clone(),
            label: s.label,
        })
        .collect();
    let manifest = write_dataset(&common.out, cfg.feature_dim, &labeled)?;
    let mut truth = String::from("slide_id,tile_id,cluster,decoy\n");
    for s in &data {
        for p in 0..s.tiles.len() {
            let _ = writeln!(
                truth,
                "{},{},{},{}",
                s.tiles.slide_id, s.tiles.tile_ids[p], s.cluster[p] as u8, s.decoys[p] as u8
            );
        }
    }
    write(&common.out.join("clusters.csv"), &truth)?;
    echo(&common.out, "gen-data", &cfg, &[])?;
    let events = data.iter().filter(|s| s.label.event).count();
    Ok(format!(
        "wrote {} slides ({} events) to {}\n",
        data.len(),
        events,
        display(&manifest)
    ))
}

pub fn train(common: &Common, manifest: &Path) -> Result<String, CliError> {
    let mut cfg: TrainRunConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.cv.seed = seed;
    }
    cfg.train.validate().map_err(bad_config)?;
    let slides = prepare(ingest(manifest)?, cfg.train.k)?;
    if !slides.iter().any(|s| s.label.event) {
        return Err(carmil::Error::UnusableSurvivalData("every slide is censored".into()).into());
    }
    info!("nested cross-validation on {} slides", slides.len());
    let out = run_nested_cv(&slides, &cfg.train, &cfg.cv)?;

    // nothing is written until training has finished
    let ckpt_dir = common.out.join("checkpoints");
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    }
    let mut folds = Vec::with_capacity(out.ensembles.len());
    for (o, (ensemble, split)) in out.ensembles.iter().zip(&out.outer_splits).enumerate() {
        let mut members = Vec::with_capacity(ensemble.len());
        for (m, model) in ensemble.members.iter().enumerate() {
            let rel = PathBuf::from(format!("checkpoints/fold{o}/member{m:02}.json"));
            write(&common.out.join(&rel), &to_json(&model.checkpoint())?)?;
            members.push(rel);
        }
        folds.push(RunFold {
            fold: o,
            test: split.test.iter().map(|&i| slides[i].slide_id().to_string()).collect(),
            members,
        });
    }
    let index = RunIndex { k: cfg.train.k, folds };
    write(&common.out.join("run.json"), &to_json(&index)?)?;
    write(&common.out.join("report.json"), &out.report.to_json())?;
    let text = out.report.to_text();
    write(&common.out.join("report.txt"), &text)?;
    echo(&common.out, "train", &cfg, &[("manifest", display(manifest))])?;
    Ok(text)
}

pub fn evaluate(common: &Common, manifest: &Path, run_dir: &Path) -> Result<String, CliError> {
    let cfg: ScoreConfig = load_config(common.config.as_deref())?;
    let index = RunIndex::load(run_dir)?;
    let slides = prepare(ingest(manifest)?, index.k)?;
    let members = index.all_members(run_dir)?;
    let n_members = members.len();
    let ensemble = carmil::train::Ensemble::new(members)?;
    let risks = ensemble.predict(&slides)?;
    let labels: Vec<_> = slides.iter().map(|s| s.label).collect();
    let cindex = concordance_index(&risks, &labels)?;
    let mut csv = String::from("slide_id,risk\n");
    for (s, r) in slides.iter().zip(&risks) {
        let _ = writeln!(csv, "{},{}", s.slide_id(), r);
    }
    write(&common.out.join("predictions.csv"), &csv)?;
    #[derive(Serialize)]
    struct Metrics {
        n_slides: usize,
        n_members: usize,
        cindex: f64,
    }
    let metrics = Metrics {
        n_slides: slides.len(),
        n_members,
        cindex,
    };
    write(&common.out.join("metrics.json"), &to_json(&metrics)?)?;
    echo(
        &common.out,
        "evaluate",
        &cfg,
        &[("manifest", display(manifest)), ("run", display(run_dir))],
    )?;
    Ok(format!(
        "c-index {cindex:.4} on {} slides ({n_members} models)\n",
        slides.len()
    ))
}

pub fn deltacon(common: &Common, manifest: &Path, k: usize, run_dir: Option<&Path>) -> Result<String, CliError> {
    let cfg: ScoreConfig = load_config(common.config.as_deref())?;
    if k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }
    let slides = prepare(ingest(manifest)?, k)?;
    let models = match run_dir {
        Some(dir) => RunIndex::load(dir)?.all_members(dir)?,
        None => Vec::new(),
    };
    let report = evaluate_context_awareness(&models, &slides, k)?;
    write(&common.out.join("deltacon.csv"), &report.to_csv())?;
    write(&common.out.join("summary.json"), &to_json(&report.summary)?)?;
    let mut args = vec![("manifest", display(manifest)), ("k", k.to_string())];
    if let Some(dir) = run_dir {
        args.push(("run", display(dir)));
    }
    echo(&common.out, "deltacon", &cfg, &args)?;
    let s = &report.summary;
    Ok(format!(
        "deltacon x {:.4} ± {:.4}  z {:.4} ± {:.4}  z > x on {:.1}% of {} slides\n",
        s.mean_deltacon_x,
        s.std_deltacon_x,
        s.mean_deltacon_z,
        s.std_deltacon_z,
        100.0 * report.fraction_z_above_x(),
        report.rows.len()
    ))
}

pub fn ablate_shuffle_cmd(common: &Common, manifest: &Path, run_dir: &Path, n_seeds: u64) -> Result<String, CliError> {
    let mut cfg: ScoreConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if n_seeds == 0 {
        return Err(CliError::Config("--seeds must be positive".into()));
    }
    let index = RunIndex::load(run_dir)?;
    let slides = prepare(ingest(manifest)?, index.k)?;
    let by_id: BTreeMap<&str, &PreparedSlide> = slides.iter().map(|s| (s.slide_id(), s)).collect();
    let seeds: Vec<u64> = (0..n_seeds).map(|s| derive_seed(cfg.seed, &[s])).collect();
    let mut csv = String::from("fold,seed,cindex_original,cindex_shuffled\n");
    let (mut originals, mut shuffled) = (Vec::new(), Vec::new());
    for fold in &index.folds {
        let test = fold
            .test
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| CliError::Config(format!("slide `{id}` of fold {} is not in the manifest", fold.fold)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ensemble = index.fold_ensemble(run_dir, fold)?;
        for &seed in &seeds {
            let o = ablate_shuffle(&ensemble, &test, seed)?;
            let _ = writeln!(csv, "{},{},{},{}", fold.fold, seed, o.cindex_original, o.cindex_shuffled);
            originals.push(o.cindex_original);
            shuffled.push(o.cindex_shuffled);
        }
    }
    let (cindex_original, _) = mean_std(&originals);
    let (mean_cindex_shuffled, _) = mean_std(&shuffled);
    let summary = ShuffleSummary {
        seeds,
        cindex_original,
        mean_cindex_shuffled,
        mean_delta: cindex_original - mean_cindex_shuffled,
    };
    write(&common.out.join("shuffle.csv"), &csv)?;
    write(&common.out.join("summary.json"), &to_json(&summary)?)?;
    echo(
        &common.out,
        "ablate-shuffle",
        &cfg,
        &[
            ("manifest", display(manifest)),
            ("run", display(run_dir)),
            ("seeds", n_seeds.to_string()),
        ],
    )?;
    Ok(format!(
        "c-index original {:.4}  shuffled {:.4}  delta {:.4}\n",
        summary.cindex_original, summary.mean_cindex_shuffled, summary.mean_delta
    ))
}

pub fn heatmap(common: &Common, manifest: &Path, checkpoint: &Path, slide_id: &str, k: usize) -> Result<String, CliError> {
    let cfg: ScoreConfig = load_config(common.config.as_deref())?;
    if k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }
    let slide = ingest(manifest)?
        .into_iter()
        .find(|s| s.tiles.slide_id == slide_id)
        .ok_or_else(|| CliError::Config(format!("slide `{slide_id}` is not in the manifest")))?;
    let slide = PreparedSlide::new(slide.tiles, slide.label, k)?;
    let model = load_checkpoint(checkpoint)?;
    let graph = spatial_adjacency(&slide.tiles.coords, k.min(slide.tiles.len() - 1))?;
    let mut maps = vec![
        mean_neighbor_distance(&slide.tiles.features, &graph)?,
        mean_neighbor_distance(&model.embeddings(&slide)?, &graph)?,
    ];
    joint_max_normalize(&mut maps);
    for (name, values) in ["heatmap_x.csv", "heatmap_z.csv"].iter().zip(&maps) {
        let mut buf = Vec::new();
        write_heatmap_csv(&mut buf, &slide.tiles, values)?;
        write(&common.out.join(name), &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    echo(
        &common.out,
        "heatmap",
        &cfg,
        &[
            ("manifest", display(manifest)),
            ("checkpoint", display(checkpoint)),
            ("slide", slide_id.to_string()),
            ("k", k.to_string()),
        ],
    )?;
    let (mx, _) = mean_std(&maps[0]);
    let (mz, _) = mean_std(&maps[1]);
    Ok(format!("mean neighbor distance x {mx:.4}  z {mz:.4}\n"))
}
