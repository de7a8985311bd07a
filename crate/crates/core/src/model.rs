//! Encoder, decoder and head wired into one model with a JSON checkpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gae::{preprocess_adjacency, GaeConfig, SpatialDecoder, SpatialEncoder};
use crate::graph::{spatial_adjacency, SpatialGraph, TileSet};
use crate::heads::{HeadConfig, HeadOutput, MilHead};
use crate::losses::SurvivalLabel;
use crate::numerics::{Matrix, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// `None` feeds raw features straight into the head.
    pub spatial: Option<GaeConfig>,
    pub head: HeadConfig,
}

/// A slide with its spatial graph and preprocessed adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSlide {
    pub tiles: TileSet,
    pub graph: SpatialGraph,
    pub a_pre: Matrix,
    pub label: SurvivalLabel,
}

impl PreparedSlide {
    pub fn new(tiles: TileSet, label: SurvivalLabel, k: usize) -> Result<Self> {
        let k = k.min(tiles.len() - 1);
        let graph = spatial_adjacency(&tiles.coords, k)?;
        Self::with_graph(tiles, graph, label)
    }

    pub fn with_graph(tiles: TileSet, graph: SpatialGraph, label: SurvivalLabel) -> Result<Self> {
        if graph.len() != tiles.len() {
            return Err(Error::ShapeMismatch {
                op: "PreparedSlide",
                left: (tiles.len(), tiles.len()),
                right: graph.adjacency.shape(),
            });
        }
        let a_pre = preprocess_adjacency(&graph);
        Ok(Self {
            tiles,
            graph,
            a_pre,
            label,
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.tiles.slide_id
    }
}

/// Nodes recorded by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub embeddings: Var,
    /// `U Uᵀ`; the reconstruction is its sigmoid.
    pub reconstruction_logits: Option<Var>,
    pub head: HeadOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarmilModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: Option<SpatialEncoder>,
    decoder: Option<SpatialDecoder>,
    head: MilHead,
}

/// Serialized model: configuration, seed and every parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: BTreeMap<String, Matrix>,
}

impl CarmilModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        let mut store = ParamStore::new(seed);
        let (encoder, decoder, head_in) = match &config.spatial {
            Some(gae) => {
                let enc = SpatialEncoder::new(&mut store, config.feature_dim, gae)?;
                let dec = SpatialDecoder::new(&mut store, enc.output_dim(), gae)?;
                let d = enc.output_dim();
                (Some(enc), Some(dec), d)
            }
            None => (None, None, config.feature_dim),
        };
        let head = MilHead::new(&mut store, config.head, head_in)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn head(&self) -> &MilHead {
        &self.head
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder.is_some()
    }

    /// Records the forward pass on `tape`. The decoder only runs when
    /// `with_decoder` is set and the model has one.
    pub fn forward(&self, tape: &mut Tape, slide: &PreparedSlide, with_decoder: bool) -> Result<ForwardPass> {
        let d = slide.tiles.feature_dim();
        if d != self.config.feature_dim {
            return Err(Error::FeatureDimension {
                slide: slide.slide_id().to_string(),
                expected: self.config.feature_dim,
                found: d,
            });
        }
        let x = tape.constant(slide.tiles.features.clone());
        let (z, reconstruction) = match &self.encoder {
            Some(enc) => {
                let a = tape.constant(slide.a_pre.clone());
                let z = enc.encode(tape, &self.store, x, a)?;
                let rec = match (&self.decoder, with_decoder) {
                    (Some(dec), true) => Some(dec.decode_logits(tape, &self.store, z, a)?),
                    _ => None,
                };
                (z, rec)
            }
            None => (x, None),
        };
        let head = self.head.forward(tape, &self.store, z)?;
        Ok(ForwardPass {
            embeddings: z,
            reconstruction_logits: reconstruction,
            head,
        })
    }

    pub fn risk(&self, slide: &PreparedSlide) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, slide, false)?;
        Ok(tape.value(out.head.risk).item())
    }

    /// Tile representations fed to the head: `Z`, or `X` without an encoder.
    pub fn embeddings(&self, slide: &PreparedSlide) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(slide.tiles.features.clone());
        match &self.encoder {
            Some(enc) => {
                let a = tape.constant(slide.a_pre.clone());
                let z = enc.encode(&mut tape, &self.store, x, a)?;
                Ok(tape.value(z).clone())
            }
            None => Ok(slide.tiles.features.clone()),
        }
    }

    /// The reconstructed adjacency `Â`, if the model has a decoder.
    pub fn reconstruct(&self, slide: &PreparedSlide) -> Result<Option<Matrix>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, slide, true)?;
        match out.reconstruction_logits {
            Some(l) => {
                let a_hat = tape.sigmoid(l)?;
                Ok(Some(tape.value(a_hat).clone()))
            }
            None => Ok(None),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config,
            seed: self.store.seed(),
            params: self.store.values(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ckpt.config, ckpt.seed)?;
        model.store.load_values(&ckpt.params)?;
        Ok(model)
    }
}
