//! Survival and reconstruction losses, their blend, and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Lower and upper clamp applied to reconstructed edge probabilities.
pub const CAR_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time: f64,
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::InvalidArgument(format!("survival time must be positive and finite, got {time}")));
        }
        Ok(Self { time, event })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBlendConfig {
    pub beta: f64,
}

impl LossBlendConfig {
    pub fn new(beta: f64) -> Result<Self> {
        let cfg = Self { beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

impl Default for LossBlendConfig {
    fn default() -> Self {
        Self { beta: 0.5 }
    }
}

/// Negative Breslow partial log-likelihood averaged over events.
///
/// `risks` holds one 1×1 node per sample.
pub fn cox_loss(tape: &mut Tape, risks: &[Var], labels: &[SurvivalLabel]) -> Result<Var> {
    if risks.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} risks for {} labels",
            risks.len(),
            labels.len()
        )));
    }
    let events: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].event).collect();
    if events.is_empty() {
        return Err(Error::UnusableSurvivalData("no observed events in batch".into()));
    }
    let n = labels.len();
    let r = tape.concat_rows(risks)?;
    if tape.shape(r) != (n, 1) {
        return Err(Error::ShapeMismatch {
            op: "cox_loss",
            left: tape.shape(r),
            right: (n, 1),
        });
    }
    // the partial likelihood is shift invariant; subtracting the max keeps
    // exp() in range without changing the value
    let max = tape.value(r).as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(r, -max)?;
    let e = tape.exp(shifted)?;
    let mut at_risk = Matrix::zeros(events.len(), n);
    for (row, &i) in events.iter().enumerate() {
        for j in 0..n {
            if labels[j].time >= labels[i].time {
                at_risk[(row, j)] = 1.0;
            }
        }
    }
    let at_risk = tape.constant(at_risk);
    let denom = tape.matmul(at_risk, e)?;
    let log_denom = tape.log(denom)?;
    let event_risk = tape.select_rows(shifted, &events)?;
    let per_event = tape.sub(log_denom, event_risk)?;
    let total = tape.sum(per_event);
    tape.scale(total, 1.0 / events.len() as f64)
}

/// Soft-target binary cross-entropy between `Â` and `A`, averaged over all
/// `n²` entries.
pub fn car_loss(tape: &mut Tape, a_hat: Var, a: &Matrix) -> Result<Var> {
    let (n, m) = tape.shape(a_hat);
    if n != m || a.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            op: "car_loss",
            left: (n, m),
            right: a.shape(),
        });
    }
    if let Some(bad) = tape.value(a_hat).as_slice().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Domain {
            op: "car_loss",
            detail: format!("reconstructed entry {bad} outside [0, 1]"),
        });
    }
    if let Some(bad) = a.as_slice().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Domain {
            op: "car_loss",
            detail: format!("target entry {bad} outside [0, 1]"),
        });
    }
    let p = tape.clamp(a_hat, CAR_CLAMP, 1.0 - CAR_CLAMP)?;
    let log_p = tape.log(p)?;
    let neg = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(neg, 1.0)?;
    let log_q = tape.log(q)?;
    let target = tape.constant(a.clone());
    let complement = tape.constant(a.map(|x| 1.0 - x));
    let pos = tape.hadamard(target, log_p)?;
    let negt = tape.hadamard(complement, log_q)?;
    let both = tape.add(pos, negt)?;
    let total = tape.sum(both);
    tape.scale(total, -1.0 / (n * n) as f64)
}

/// [`car_loss`] evaluated on the logits `Â = σ(logits)` in one fused node.
pub fn car_loss_from_logits(tape: &mut Tape, logits: Var, a: &Matrix) -> Result<Var> {
    let (n, m) = tape.shape(logits);
    if n != m || a.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            op: "car_loss",
            left: (n, m),
            right: a.shape(),
        });
    }
    if let Some(bad) = a.as_slice().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Domain {
            op: "car_loss",
            detail: format!("target entry {bad} outside [0, 1]"),
        });
    }
    tape.bce_with_logits(logits, a, CAR_CLAMP)
}

/// `(1-β)·mil + β·car`.
pub fn total_loss(tape: &mut Tape, mil: Var, car: Var, cfg: &LossBlendConfig) -> Result<Var> {
    cfg.validate()?;
    let a = tape.scale(mil, 1.0 - cfg.beta)?;
    let b = tape.scale(car, cfg.beta)?;
    tape.add(a, b)
}

/// Harrell's concordance index with censoring: a pair is comparable when the
/// earlier time is an observed event; tied risks count one half.
pub fn concordance_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} risks for {} labels",
            risks.len(),
            labels.len()
        )));
    }
    let mut comparable = 0u64;
    let mut score = 0u64; // in half-units
    for i in 0..labels.len() {
        if !labels[i].event {
            continue;
        }
        for j in 0..labels.len() {
            if labels[i].time < labels[j].time {
                comparable += 1;
                score += match risks[i].partial_cmp(&risks[j]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UnusableSurvivalData("no comparable pairs for the concordance index".into()));
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

/// Probability that a random edge of `a` scores above a random non-edge in
/// `a_hat`, over off-diagonal entries, ties counting one half.
pub fn edge_auc(a_hat: &Matrix, a: &Matrix) -> Result<f64> {
    if a_hat.shape() != a.shape() || a.rows() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "edge_auc",
            left: a_hat.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows();
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(n * n);
    for p in 0..n {
        for q in 0..n {
            if p != q {
                scored.push((a_hat[(p, q)], a[(p, q)] > 0.0));
            }
        }
    }
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument("edge_auc needs both edges and non-edges".into()));
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Mann-Whitney: sum of average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * scored[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let (p, q) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
