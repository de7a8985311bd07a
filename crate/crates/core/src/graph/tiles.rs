use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One slide: tile grid coordinates plus the tile feature matrix (the bag).
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub slide_id: String,
    pub tile_ids: Vec<usize>,
    /// n×2, tile-grid units.
    pub coords: Matrix,
    /// n×d.
    pub features: Matrix,
}

impl TileSet {
    /// Validates and builds a tile set with tile ids `0..n`.
    pub fn new(slide_id: impl Into<String>, coords: Matrix, features: Matrix) -> Result<Self> {
        let n = coords.rows();
        Self::with_ids(slide_id, (0..n).collect(), coords, features)
    }

    pub fn with_ids(
        slide_id: impl Into<String>,
        tile_ids: Vec<usize>,
        coords: Matrix,
        features: Matrix,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        let n = coords.rows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("slide `{slide_id}` has {n} tiles, need at least 2")));
        }
        if coords.cols() != 2 {
            return Err(Error::ShapeMismatch {
                op: "TileSet coords",
                left: coords.shape(),
                right: (n, 2),
            });
        }
        if features.rows() != n || tile_ids.len() != n {
            return Err(Error::ShapeMismatch {
                op: "TileSet features",
                left: coords.shape(),
                right: features.shape(),
            });
        }
        coords.ensure_finite("tile coordinates")?;
        features.ensure_finite("tile features")?;
        let mut seen = HashSet::with_capacity(n);
        for r in 0..n {
            let key = (coords[(r, 0)].to_bits(), coords[(r, 1)].to_bits());
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "slide `{slide_id}` has two tiles at ({}, {})",
                    coords[(r, 0)],
                    coords[(r, 1)]
                )));
            }
        }
        let unique_ids: HashSet<_> = tile_ids.iter().collect();
        if unique_ids.len() != n {
            return Err(Error::InvalidArgument(format!("slide `{slide_id}` has duplicate tile ids")));
        }
        Ok(Self {
            slide_id,
            tile_ids,
            coords,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}
