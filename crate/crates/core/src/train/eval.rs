use serde::{Deserialize, Serialize};

use super::cv::Ensemble;
use super::derive_seed;
use super::report::{mean_std, ContextSummary};
use crate::error::Result;
use crate::graph::{deltacon, embedding_adjacency, shuffle_offdiagonal, spatial_adjacency, DeltaConConfig};
use crate::losses::{concordance_index, SurvivalLabel};
use crate::model::{CarmilModel, PreparedSlide};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleOutcome {
    pub cindex_original: f64,
    pub cindex_shuffled: f64,
}

/// Scores the ensemble on `test` twice: as is, and with every slide's
/// adjacency replaced by an off-diagonal shuffle of itself. Slide `i` is
/// shuffled with a seed derived from `(seed, i)`.
pub fn ablate_shuffle(ensemble: &Ensemble, test: &[PreparedSlide], seed: u64) -> Result<ShuffleOutcome> {
    let labels: Vec<SurvivalLabel> = test.iter().map(|s| s.label).collect();
    let cindex_original = concordance_index(&ensemble.predict(test)?, &labels)?;
    let shuffled = test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = shuffle_offdiagonal(&s.graph, derive_seed(seed, &[i as u64]));
            PreparedSlide::with_graph(s.tiles.clone(), g, s.label)
        })
        .collect::<Result<Vec<_>>>()?;
    let cindex_shuffled = concordance_index(&ensemble.predict(&shuffled)?, &labels)?;
    Ok(ShuffleOutcome {
        cindex_original,
        cindex_shuffled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub slide_id: String,
    pub deltacon_x: f64,
    pub deltacon_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub rows: Vec<ContextRow>,
    pub summary: ContextSummary,
}

impl ContextReport {
    /// `slide_id,deltacon_x,deltacon_z` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slide_id,deltacon_x,deltacon_z\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.slide_id, r.deltacon_x, r.deltacon_z));
        }
        out
    }

    /// Fraction of slides whose embeddings keep more spatial structure than
    /// the raw features.
    pub fn fraction_z_above_x(&self) -> f64 {
        let wins = self.rows.iter().filter(|r| r.deltacon_z > r.deltacon_x).count();
        wins as f64 / self.rows.len().max(1) as f64
    }
}

/// Per slide, DeltaCon between the spatial k-NN graph and the k-NN graphs of
/// the raw features and of the embeddings. With several models the embedding
/// score is the mean over models.
pub fn evaluate_context_awareness(models: &[CarmilModel], slides: &[PreparedSlide], k: usize) -> Result<ContextReport> {
    let cfg = DeltaConConfig {
        k,
        ..DeltaConConfig::default()
    };
    let mut rows = Vec::with_capacity(slides.len());
    for s in slides {
        let kk = k.min(s.tiles.len() - 1);
        let a = spatial_adjacency(&s.tiles.coords, kk)?;
        let gx = embedding_adjacency(&s.tiles.features, kk)?;
        let deltacon_x = deltacon(&a, &gx, &cfg)?;
        let mut deltacon_z = 0.0;
        for (i, m) in models.iter().enumerate() {
            let gz = embedding_adjacency(&m.embeddings(s)?, kk)?;
            deltacon_z += (deltacon(&a, &gz, &cfg)? - deltacon_z) / (i + 1) as f64;
        }
        if models.is_empty() {
            deltacon_z = deltacon_x;
        }
        rows.push(ContextRow {
            slide_id: s.slide_id().to_string(),
            deltacon_x,
            deltacon_z,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.deltacon_x).collect();
    let zs: Vec<f64> = rows.iter().map(|r| r.deltacon_z).collect();
    let (mx, sx) = mean_std(&xs);
    let (mz, sz) = mean_std(&zs);
    Ok(ContextReport {
        rows,
        summary: ContextSummary {
            k,
            mean_deltacon_x: mx,
            std_deltacon_x: sx,
            mean_deltacon_z: mz,
            std_deltacon_z: sz,
        },
    })
}
