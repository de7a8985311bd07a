use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::report::{mean_std, ExperimentReport, FoldReport, GridScore};
use super::trainer::{predict, train_with_snapshots, TrainConfig, EPOCHS, LEARNING_RATES};
use crate::error::{Error, Result};
use crate::losses::{concordance_index, SurvivalLabel};
use crate::model::{CarmilModel, PreparedSlide};

/// Fold layout of the nested cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvPlan {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Independent initializations per inner split; folds are not reshuffled.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 5,
            repeats: 3,
            seed: 0,
        }
    }
}

/// Indices into a slide list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl CvPlan {
    pub fn validate(&self, n_slides: usize) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 || self.repeats == 0 {
            return Err(Error::InvalidArgument(format!("degenerate cross-validation plan {self:?}")));
        }
        if n_slides < self.outer_folds * self.inner_folds {
            return Err(Error::InvalidArgument(format!(
                "nested cross-validation needs at least {} slides, got {n_slides}",
                self.outer_folds * self.inner_folds
            )));
        }
        Ok(())
    }

    /// Fold index per item, stratified by event status. Items are ordered by
    /// key first so the assignment depends only on keys, labels and seed.
    pub fn assign_folds(keys: &[&str], events: &[bool], folds: usize, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].cmp(keys[b]));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = vec![0; keys.len()];
        let mut next = 0;
        for stratum in [true, false] {
            let mut members: Vec<usize> = order.iter().copied().filter(|&i| events[i] == stratum).collect();
            members.shuffle(&mut rng);
            for i in members {
                assignment[i] = next % folds;
                next += 1;
            }
        }
        assignment
    }

    pub fn outer_splits(&self, slides: &[PreparedSlide]) -> Vec<Split> {
        let keys: Vec<&str> = slides.iter().map(|s| s.slide_id()).collect();
        let events: Vec<bool> = slides.iter().map(|s| s.label.event).collect();
        splits_from(&Self::assign_folds(&keys, &events, self.outer_folds, derive_seed(self.seed, &[0])), self.outer_folds, &(0..slides.len()).collect::<Vec<_>>())
    }

    /// Inner splits of an outer training set, as indices into `slides`.
    pub fn inner_splits(&self, slides: &[PreparedSlide], outer: usize, outer_train: &[usize]) -> Vec<Split> {
        let keys: Vec<&str> = outer_train.iter().map(|&i| slides[i].slide_id()).collect();
        let events: Vec<bool> = outer_train.iter().map(|&i| slides[i].label.event).collect();
        let seed = derive_seed(self.seed, &[1, outer as u64]);
        splits_from(&Self::assign_folds(&keys, &events, self.inner_folds, seed), self.inner_folds, outer_train)
    }
}

fn splits_from(assignment: &[usize], folds: usize, items: &[usize]) -> Vec<Split> {
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..items.len()).partition(|&i| assignment[i] == f);
            Split {
                train: train.into_iter().map(|i| items[i]).collect(),
                test: test.into_iter().map(|i| items[i]).collect(),
            }
        })
        .collect()
}

/// Models whose risks are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<CarmilModel>,
}

impl Ensemble {
    pub fn new(members: Vec<CarmilModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty ensemble".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Arithmetic mean of member risks, accumulated as a running mean.
    pub fn risk(&self, slide: &PreparedSlide) -> Result<f64> {
        let mut mean = 0.0;
        for (i, m) in self.members.iter().enumerate() {
            mean += (m.risk(slide)? - mean) / (i + 1) as f64;
        }
        Ok(mean)
    }

    pub fn predict(&self, slides: &[PreparedSlide]) -> Result<Vec<f64>> {
        slides.iter().map(|s| self.risk(s)).collect()
    }
}

/// Everything a nested cross-validation run produces.
#[derive(Debug, Clone)]
pub struct NestedCvOutput {
    pub report: ExperimentReport,
    pub ensembles: Vec<Ensemble>,
    pub outer_splits: Vec<Split>,
}

struct Job {
    outer: usize,
    lr_index: usize,
    inner: usize,
    repeat: usize,
}

struct JobResult {
    /// C-index on the inner validation fold, one per entry of `EPOCHS`.
    scores: Vec<f64>,
    models: Vec<CarmilModel>,
}

fn labels(slides: &[PreparedSlide], idx: &[usize]) -> Vec<SurvivalLabel> {
    idx.iter().map(|&i| slides[i].label).collect()
}

fn subset(slides: &[PreparedSlide], idx: &[usize]) -> Vec<PreparedSlide> {
    idx.iter().map(|&i| slides[i].clone()).collect()
}

/// Nested cross-validation over the learning-rate and epoch grids.
///
/// Each outer fold trains every grid point on every inner split and repeat,
/// picks the grid point with the best mean inner-validation C-index (ties go
/// to the earlier grid point) and evaluates the ensemble of its
/// `inner_folds × repeats` models on the outer test fold.
pub fn run_nested_cv(slides: &[PreparedSlide], base: &TrainConfig, plan: &CvPlan) -> Result<NestedCvOutput> {
    plan.validate(slides.len())?;
    base.validate()?;
    let feature_dim = slides[0].tiles.feature_dim();
    let outer = plan.outer_splits(slides);
    let inner: Vec<Vec<Split>> = outer
        .iter()
        .enumerate()
        .map(|(f, s)| plan.inner_splits(slides, f, &s.train))
        .collect();

    let mut jobs = Vec::new();
    for f in 0..plan.outer_folds {
        for lr_index in 0..LEARNING_RATES.len() {
            for j in 0..plan.inner_folds {
                for r in 0..plan.repeats {
                    jobs.push(Job {
                        outer: f,
                        lr_index,
                        inner: j,
                        repeat: r,
                    });
                }
            }
        }
    }
    let max_epochs = *EPOCHS.iter().max().unwrap_or(&1);
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|job| {
            let split = &inner[job.outer][job.inner];
            let train = subset(slides, &split.train);
            let val = subset(slides, &split.test);
            let cfg = TrainConfig {
                learning_rate: LEARNING_RATES[job.lr_index],
                epochs: max_epochs,
                seed: derive_seed(plan.seed, &[2, job.outer as u64, job.inner as u64, job.repeat as u64]),
                ..*base
            };
            let mut model = CarmilModel::new(cfg.model_config(feature_dim), cfg.seed)?;
            let (_, snaps) = train_with_snapshots(&mut model, &train, &cfg, &EPOCHS)?;
            let val_labels = labels(slides, &split.test);
            let mut scores = Vec::with_capacity(EPOCHS.len());
            let mut models = Vec::with_capacity(EPOCHS.len());
            for &e in &EPOCHS {
                let m = snaps
                    .iter()
                    .find(|(se, _)| *se == e)
                    .map(|(_, m)| m.clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("missing snapshot for epoch {e}")))?;
                scores.push(concordance_index(&predict(&m, &val)?, &val_labels)?);
                models.push(m);
            }
            Ok(JobResult { scores, models })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_outer = LEARNING_RATES.len() * plan.inner_folds * plan.repeats;
    let mut folds = Vec::with_capacity(plan.outer_folds);
    let mut ensembles = Vec::with_capacity(plan.outer_folds);
    for (f, chunk) in results.chunks(per_outer).enumerate() {
        let mut grid = Vec::new();
        for (li, lr_chunk) in chunk.chunks(plan.inner_folds * plan.repeats).enumerate() {
            for (ei, &epochs) in EPOCHS.iter().enumerate() {
                let scores: Vec<f64> = lr_chunk.iter().map(|r| r.scores[ei]).collect();
                grid.push(GridScore {
                    learning_rate: LEARNING_RATES[li],
                    epochs,
                    mean_inner_cindex: mean_std(&scores).0,
                });
            }
        }
        let mut best = 0;
        for (i, g) in grid.iter().enumerate() {
            if g.mean_inner_cindex > grid[best].mean_inner_cindex {
                best = i;
            }
        }
        let (li, ei) = (best / EPOCHS.len(), best % EPOCHS.len());
        let members: Vec<CarmilModel> = chunk[li * plan.inner_folds * plan.repeats..(li + 1) * plan.inner_folds * plan.repeats]
            .iter()
            .map(|r| r.models[ei].clone())
            .collect();
        let ensemble = Ensemble::new(members)?;
        let test = subset(slides, &outer[f].test);
        let test_cindex = concordance_index(&ensemble.predict(&test)?, &labels(slides, &outer[f].test))?;
        folds.push(FoldReport {
            fold: f,
            n_train: outer[f].train.len(),
            n_test: outer[f].test.len(),
            learning_rate: grid[best].learning_rate,
            epochs: grid[best].epochs,
            ensemble_size: ensemble.len(),
            test_cindex,
            grid,
        });
        ensembles.push(ensemble);
    }
    let report = ExperimentReport::new(*base, *plan, slides.len(), folds);
    Ok(NestedCvOutput {
        report,
        ensembles,
        outer_splits: outer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_assignment_is_stratified_and_key_ordered() {
        let keys: Vec<String> = (0..23).map(|i| format!("s{i:02}")).collect();
        let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
        let events: Vec<bool> = (0..23).map(|i| i % 3 != 0).collect();
        let a = CvPlan::assign_folds(&refs, &events, 5, 4);
        for f in 0..5 {
            let ev = (0..23).filter(|&i| a[i] == f && events[i]).count();
            assert!((3..=4).contains(&ev), "fold {f} has {ev} events");
        }
        // reversing the input order does not change any item's fold
        let rev_refs: Vec<&str> = refs.iter().rev().copied().collect();
        let rev_events: Vec<bool> = events.iter().rev().copied().collect();
        let b = CvPlan::assign_folds(&rev_refs, &rev_events, 5, 4);
        for i in 0..23 {
            assert_eq!(a[i], b[22 - i]);
        }
    }

    #[test]
    fn plan_rejects_small_datasets() {
        assert!(CvPlan::default().validate(24).is_err());
        assert!(CvPlan::default().validate(25).is_ok());
    }
}
