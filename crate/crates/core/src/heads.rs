//! MIL heads: bag of tile embeddings (n×d) to one scalar risk.
//!
//! Every reduction over tiles is order-independent down to the last bit, so
//! shuffling the rows of the bag never changes the risk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    MeanPool,
    Abmil,
    Chowder,
    AdditiveMil,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::MeanPool, HeadKind::Abmil, HeadKind::Chowder, HeadKind::AdditiveMil];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::MeanPool => "mean_pool",
            HeadKind::Abmil => "abmil",
            HeadKind::Chowder => "chowder",
            HeadKind::AdditiveMil => "additive_mil",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    #[serde(default = "HeadConfig::default_hidden")]
    pub hidden: usize,
    #[serde(default = "HeadConfig::default_attention")]
    pub attention: usize,
    /// Number of top and of bottom scores kept by Chowder.
    #[serde(default = "HeadConfig::default_r")]
    pub chowder_r: usize,
}

impl HeadConfig {
    fn default_hidden() -> usize {
        128
    }
    fn default_attention() -> usize {
        64
    }
    fn default_r() -> usize {
        5
    }

    pub fn new(kind: HeadKind) -> Self {
        Self {
            kind,
            hidden: Self::default_hidden(),
            attention: Self::default_attention(),
            chowder_r: Self::default_r(),
        }
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::new(HeadKind::MeanPool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add_glorot(format!("{name}.weight"), d_in, d_out)?,
            bias: store.add_zeros(format!("{name}.bias"), 1, d_out)?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row_broadcast(xw, b)
    }
}

/// `tanh(H V) ⊙ σ(H U)` projected to one logit per tile.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GatedAttention {
    tanh_branch: ParamId,
    gate_branch: ParamId,
    score: ParamId,
}

impl GatedAttention {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_attn: usize) -> Result<Self> {
        Ok(Self {
            tanh_branch: store.add_glorot(format!("{name}.v"), d_in, d_attn)?,
            gate_branch: store.add_glorot(format!("{name}.u"), d_in, d_attn)?,
            score: store.add_glorot(format!("{name}.w"), d_attn, 1)?,
        })
    }

    fn weights(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let v = tape.param(store, self.tanh_branch);
        let u = tape.param(store, self.gate_branch);
        let w = tape.param(store, self.score);
        let hv = tape.matmul(h, v)?;
        let t = tape.tanh(hv)?;
        let hu = tape.matmul(h, u)?;
        let g = tape.sigmoid(hu)?;
        let gated = tape.hadamard(t, g)?;
        let logits = tape.matmul(gated, w)?;
        tape.softmax_col(logits)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum HeadParams {
    MeanPool {
        out: Linear,
    },
    Abmil {
        proj: Linear,
        attn: GatedAttention,
        out: Linear,
    },
    Chowder {
        score: Linear,
        hidden: Linear,
        out: Linear,
        r: usize,
    },
    Additive {
        proj: Linear,
        attn: GatedAttention,
        psi: Linear,
        contribution: ParamId,
    },
}

/// Parameters of one MIL head, registered in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct MilHead {
    config: HeadConfig,
    params: HeadParams,
}

/// Risk plus the per-tile interpretability vectors the head produces.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// 1×1.
    pub risk: Var,
    /// n×1 attention weights (ABMIL, AdditiveMIL).
    pub attention: Option<Var>,
    /// n×1 per-tile contributions summing to the risk (AdditiveMIL).
    pub contributions: Option<Var>,
}

impl MilHead {
    pub fn new(store: &mut ParamStore, config: HeadConfig, d_in: usize) -> Result<Self> {
        let params = match config.kind {
            HeadKind::MeanPool => HeadParams::MeanPool {
                out: Linear::new(store, "head.out", d_in, 1)?,
            },
            HeadKind::Abmil => HeadParams::Abmil {
                proj: Linear::new(store, "head.proj", d_in, config.hidden)?,
                attn: GatedAttention::new(store, "head.attention", config.hidden, config.attention)?,
                out: Linear::new(store, "head.out", config.hidden, 1)?,
            },
            HeadKind::Chowder => {
                if config.chowder_r == 0 {
                    return Err(Error::InvalidArgument("chowder_r must be at least 1".into()));
                }
                HeadParams::Chowder {
                    score: Linear::new(store, "head.score", d_in, 1)?,
                    hidden: Linear::new(store, "head.hidden", 2 * config.chowder_r, config.hidden)?,
                    out: Linear::new(store, "head.out", config.hidden, 1)?,
                    r: config.chowder_r,
                }
            }
            HeadKind::AdditiveMil => HeadParams::Additive {
                proj: Linear::new(store, "head.proj", d_in, config.hidden)?,
                attn: GatedAttention::new(store, "head.attention", config.hidden, config.attention)?,
                psi: Linear::new(store, "head.psi", config.hidden, config.hidden)?,
                contribution: store.add_glorot("head.contribution", config.hidden, 1)?,
            },
        };
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn kind(&self) -> HeadKind {
        self.config.kind
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<HeadOutput> {
        let n = tape.shape(z).0;
        if n == 0 {
            return Err(Error::InvalidArgument("empty bag".into()));
        }
        match &self.params {
            HeadParams::MeanPool { out } => {
                let pooled = tape.row_mean(z)?;
                let risk = out.forward(tape, store, pooled)?;
                Ok(HeadOutput {
                    risk,
                    attention: None,
                    contributions: None,
                })
            }
            HeadParams::Abmil { proj, attn, out } => {
                let pre = proj.forward(tape, store, z)?;
                let h = tape.relu(pre)?;
                let a = attn.weights(tape, store, h)?;
                let weighted = tape.scale_rows(h, a)?;
                let pooled = tape.col_sum(weighted)?;
                let risk = out.forward(tape, store, pooled)?;
                Ok(HeadOutput {
                    risk,
                    attention: Some(a),
                    contributions: None,
                })
            }
            HeadParams::Chowder { score, hidden, out, r } => {
                if 2 * r > n {
                    return Err(Error::InvalidArgument(format!(
                        "chowder keeps 2r = {} scores but the bag has {n} tiles",
                        2 * r
                    )));
                }
                let s = score.forward(tape, store, z)?;
                let selected = extreme_indices(tape.value(s).as_slice(), *r);
                let picked = tape.select_rows(s, &selected)?;
                let row = tape.transpose(picked)?;
                let pre = hidden.forward(tape, store, row)?;
                let h = tape.relu(pre)?;
                let risk = out.forward(tape, store, h)?;
                Ok(HeadOutput {
                    risk,
                    attention: None,
                    contributions: None,
                })
            }
            HeadParams::Additive {
                proj,
                attn,
                psi,
                contribution,
            } => {
                let pre = proj.forward(tape, store, z)?;
                let h = tape.relu(pre)?;
                let a = attn.weights(tape, store, h)?;
                let weighted = tape.scale_rows(h, a)?;
                let hidden_pre = psi.forward(tape, store, weighted)?;
                let hidden = tape.relu(hidden_pre)?;
                let c = tape.param(store, *contribution);
                let per_tile = tape.matmul(hidden, c)?;
                let risk = tape.col_sum(per_tile)?;
                Ok(HeadOutput {
                    risk,
                    attention: Some(a),
                    contributions: Some(per_tile),
                })
            }
        }
    }
}

/// Indices of the `r` largest followed by the `r` smallest scores, all in
/// descending score order. Equal scores resolve to the lower index.
pub fn extreme_indices(scores: &[f64], r: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let n = order.len();
    order[..r].iter().chain(&order[n - r..]).copied().collect()
}
