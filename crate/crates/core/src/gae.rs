//! Spatial encoder and decoder built from GCN layers.
//!
//! A GCN layer maps `(X, A')` to `A' ReLU(X) W`, with `A'` the preprocessed
//! adjacency (self-loops added, rows normalized to sum to one). The encoder
//! stacks `ℓ_E` layers to produce tile embeddings `Z`; the decoder stacks
//! `ℓ_D` more layers to `U` and reconstructs the graph as `σ(U Uᵀ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// Row-normalized `A + I`.
pub fn preprocess_adjacency(graph: &SpatialGraph) -> Matrix {
    let n = graph.len();
    let mut a = graph.adjacency.clone();
    for p in 0..n {
        a[(p, p)] += 1.0;
        let total: f64 = a.row(p).iter().sum();
        a.row_mut(p).iter_mut().for_each(|v| *v /= total);
    }
    a
}

/// Encoder/decoder depth and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaeConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Embedding width; `None` means the feature dimension.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 1,
            decoder_layers: 1,
            embedding_dim: None,
        }
    }
}

impl GaeConfig {
    /// Two encoder and two decoder layers.
    pub fn deep() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            embedding_dim: None,
        }
    }

    pub fn embedding_dim_for(&self, feature_dim: usize) -> usize {
        self.embedding_dim.unwrap_or(feature_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add_glorot(name, d_in, d_out)?,
            d_in,
            d_out,
        })
    }
}

/// `A' ReLU(x) W`.
pub fn gcn_forward(tape: &mut Tape, store: &ParamStore, x: Var, a_pre: Var, layer: &GcnLayer) -> Result<Var> {
    if tape.shape(x).1 != layer.d_in {
        return Err(Error::ShapeMismatch {
            op: "gcn_forward",
            left: tape.shape(x),
            right: (layer.d_in, layer.d_out),
        });
    }
    let h = tape.relu(x)?;
    let w = tape.param(store, layer.weight);
    let hw = tape.matmul(h, w)?;
    tape.matmul(a_pre, hw)
}

fn build_stack(store: &mut ParamStore, prefix: &str, d_in: usize, width: usize, depth: usize) -> Result<Vec<GcnLayer>> {
    if depth == 0 {
        return Err(Error::InvalidArgument(format!("{prefix} needs at least one layer")));
    }
    let mut layers = Vec::with_capacity(depth);
    let mut fan_in = d_in;
    for i in 0..depth {
        layers.push(GcnLayer::new(store, &format!("{prefix}.{i}.weight"), fan_in, width)?);
        fan_in = width;
    }
    Ok(layers)
}

fn run_stack(tape: &mut Tape, store: &ParamStore, x: Var, a_pre: Var, layers: &[GcnLayer]) -> Result<Var> {
    layers
        .iter()
        .try_fold(x, |h, layer| gcn_forward(tape, store, h, a_pre, layer))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEncoder {
    pub layers: Vec<GcnLayer>,
}

impl SpatialEncoder {
    pub fn new(store: &mut ParamStore, feature_dim: usize, cfg: &GaeConfig) -> Result<Self> {
        let width = cfg.embedding_dim_for(feature_dim);
        Ok(Self {
            layers: build_stack(store, "encoder", feature_dim, width, cfg.encoder_layers)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    /// `Z = GCN^{ℓ_E}(X, A')`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var, a_pre: Var) -> Result<Var> {
        run_stack(tape, store, x, a_pre, &self.layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDecoder {
    pub layers: Vec<GcnLayer>,
}

impl SpatialDecoder {
    /// Hidden widths equal the embedding width.
    pub fn new(store: &mut ParamStore, embedding_dim: usize, cfg: &GaeConfig) -> Result<Self> {
        Ok(Self {
            layers: build_stack(store, "decoder", embedding_dim, embedding_dim, cfg.decoder_layers)?,
        })
    }

    /// `Â = σ(U Uᵀ)` with `U = GCN^{ℓ_D}(Z, A')`.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var, a_pre: Var) -> Result<Var> {
        let logits = self.decode_logits(tape, store, z, a_pre)?;
        tape.sigmoid(logits)
    }

    /// `U Uᵀ`, the pre-sigmoid reconstruction.
    pub fn decode_logits(&self, tape: &mut Tape, store: &ParamStore, z: Var, a_pre: Var) -> Result<Var> {
        let u = run_stack(tape, store, z, a_pre, &self.layers)?;
        let ut = tape.transpose(u)?;
        tape.matmul(u, ut)
    }
}
