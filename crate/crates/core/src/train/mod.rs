//! Joint optimization, nested cross-validation, ensembling and the
//! evaluation protocols built on trained ensembles.

mod adam;
mod cv;
mod eval;
mod report;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use cv::{run_nested_cv, CvPlan, Ensemble, NestedCvOutput, Split};
pub use eval::{ablate_shuffle, evaluate_context_awareness, ContextReport, ContextRow, ShuffleOutcome};
pub use report::{mean_std, ContextSummary, ExperimentReport, FoldReport, GridScore, ShuffleSummary};
pub use trainer::{
    gradients_of, objective, predict, train_one, train_with_snapshots, EpochLosses, Objective, Pick, TrainConfig,
    EPOCHS, LEARNING_RATES,
};

/// Derives an independent seed from a master seed and a path of counters,
/// so parallel jobs never depend on scheduling order.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &c| splitmix(acc ^ splitmix(c.wrapping_add(0x632b_e59b_d9b4_e019))))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
