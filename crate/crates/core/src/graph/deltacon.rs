//! DeltaCon similarity extended to directed graphs.
//!
//! For a graph with adjacency `A`, in/out edge counts `D = D_in + D_out` and
//! a small `ε`, the affinity matrix is `S(A) = (I + ε²D - εA)⁻¹`. Two graphs
//! on the same node set score `1 / (1 + ‖S(A₁) - S(A₂)‖_F)`.

use serde::{Deserialize, Serialize};

use super::adjacency::{degree_pair, SpatialGraph};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// How `ε` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum EpsilonPolicy {
    Fixed(f64),
    /// `1 / (1 + max degree)` over both graphs.
    DegreeDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaConConfig {
    pub epsilon: EpsilonPolicy,
    pub k: usize,
}

impl Default for DeltaConConfig {
    fn default() -> Self {
        Self {
            epsilon: EpsilonPolicy::DegreeDerived,
            k: 8,
        }
    }
}

/// Per-slide similarity between the spatial graph and a representation graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaConReport {
    pub slide_id: String,
    pub score: f64,
}

fn total_degree(graph: &SpatialGraph) -> Vec<f64> {
    let (d_in, d_out) = degree_pair(graph);
    d_in.iter().zip(&d_out).map(|(a, b)| a + b).collect()
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

impl DeltaConConfig {
    /// Resolves `ε` shared by both graphs.
    pub fn resolve_epsilon(&self, a: &SpatialGraph, b: &SpatialGraph) -> Result<f64> {
        let max_degree = max_of(&total_degree(a)).max(max_of(&total_degree(b)));
        let eps = match self.epsilon {
            EpsilonPolicy::DegreeDerived => 1.0 / (1.0 + max_degree),
            EpsilonPolicy::Fixed(e) => e,
        };
        if !(eps > 0.0) || eps * max_degree >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon {eps} violates 0 < ε·max(D) < 1 (max degree {max_degree})"
            )));
        }
        Ok(eps)
    }
}

/// `(I + ε²D - εA)⁻¹` with `D` the total edge-count degree.
pub fn deltacon_s(graph: &SpatialGraph, epsilon: f64) -> Result<Matrix> {
    let n = graph.len();
    let degree = total_degree(graph);
    let mut m = graph.adjacency.scaled(-epsilon);
    for p in 0..n {
        m[(p, p)] += 1.0 + epsilon * epsilon * degree[p];
    }
    m.inverse()
}

/// DeltaCon similarity in `(0, 1]`, symmetric in its arguments.
pub fn deltacon(a: &SpatialGraph, b: &SpatialGraph, cfg: &DeltaConConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "deltacon",
            left: a.adjacency.shape(),
            right: b.adjacency.shape(),
        });
    }
    let eps = cfg.resolve_epsilon(a, b)?;
    let sa = deltacon_s(a, eps)?;
    let sb = deltacon_s(b, eps)?;
    let diff = sa.zip_map(&sb, |x, y| x - y).frobenius_norm();
    Ok(1.0 / (1.0 + diff))
}
