use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::CvPlan;
use super::trainer::TrainConfig;

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub learning_rate: f64,
    pub epochs: usize,
    pub mean_inner_cindex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Selected grid point.
    pub learning_rate: f64,
    pub epochs: usize,
    pub ensemble_size: usize,
    pub test_cindex: f64,
    pub grid: Vec<GridScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSummary {
    pub seeds: Vec<u64>,
    pub cindex_original: f64,
    pub mean_cindex_shuffled: f64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub k: usize,
    pub mean_deltacon_x: f64,
    pub std_deltacon_x: f64,
    pub mean_deltacon_z: f64,
    pub std_deltacon_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub plan: CvPlan,
    pub n_slides: usize,
    pub folds: Vec<FoldReport>,
    pub mean_cindex: f64,
    /// Population standard deviation over outer folds.
    pub std_cindex: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<ShuffleSummary>,
}

impl ExperimentReport {
    pub fn new(config: TrainConfig, plan: CvPlan, n_slides: usize, folds: Vec<FoldReport>) -> Self {
        let scores: Vec<f64> = folds.iter().map(|f| f.test_cindex).collect();
        let (mean_cindex, std_cindex) = mean_std(&scores);
        Self {
            config,
            plan,
            n_slides,
            folds,
            mean_cindex,
            std_cindex,
            context: None,
            shuffle: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned-column summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "head {:?}  spatial {}  beta {}  slides {}",
            self.config.head.kind,
            match self.config.spatial {
                Some(g) => format!("{}x{}", g.encoder_layers, g.decoder_layers),
                None => "none".into(),
            },
            self.config.beta,
            self.n_slides
        );
        let _ = writeln!(out, "{:>4}  {:>7}  {:>6}  {:>6}  {:>6}  {:>7}", "fold", "lr", "epochs", "train", "test", "c-index");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{:>4}  {:>7}  {:>6}  {:>6}  {:>6}  {:>7.4}",
                f.fold, f.learning_rate, f.epochs, f.n_train, f.n_test, f.test_cindex
            );
        }
        let _ = writeln!(out, "mean (std) c-index: {:.4} ({:.4})", self.mean_cindex, self.std_cindex);
        if let Some(c) = &self.context {
            let _ = writeln!(
                out,
                "deltacon k={}: X {:.4} ({:.4})  Z {:.4} ({:.4})",
                c.k, c.mean_deltacon_x, c.std_deltacon_x, c.mean_deltacon_z, c.std_deltacon_z
            );
        }
        if let Some(s) = &self.shuffle {
            let _ = writeln!(
                out,
                "shuffle over {} seeds: original {:.4}  shuffled {:.4}  delta {:.4}",
                s.seeds.len(),
                s.cindex_original,
                s.mean_cindex_shuffled,
                s.mean_delta
            );
        }
        out
    }
}
