use std::io::Write;

use super::adjacency::SpatialGraph;
use super::tiles::TileSet;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-tile mean Euclidean distance between a tile's unit-normalized
/// representation and those of its spatial neighbors.
pub fn mean_neighbor_distance(reps: &Matrix, spatial: &SpatialGraph) -> Result<Vec<f64>> {
    let n = reps.rows();
    if spatial.len() != n {
        return Err(Error::ShapeMismatch {
            op: "mean_neighbor_distance",
            left: reps.shape(),
            right: spatial.adjacency.shape(),
        });
    }
    let mut unit = reps.clone();
    for p in 0..n {
        let norm = unit.row(p).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Domain {
                op: "mean_neighbor_distance",
                detail: format!("representation row {p} has zero norm"),
            });
        }
        unit.row_mut(p).iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; n];
    for (p, slot) in out.iter_mut().enumerate() {
        let mut total = 0.0;
        let mut count = 0usize;
        for q in spatial.neighbors(p) {
            total += unit
                .row(p)
                .iter()
                .zip(unit.row(q))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            count += 1;
        }
        if count > 0 {
            *slot = total / count as f64;
        }
    }
    Ok(out)
}

/// Divides every vector by the largest entry across all of them.
pub fn joint_max_normalize(maps: &mut [Vec<f64>]) {
    let max = maps.iter().flatten().copied().fold(0.0, f64::max);
    if max > 0.0 {
        maps.iter_mut().flatten().for_each(|v| *v /= max);
    }
}

/// Writes `tile_id,x,y,value` rows.
pub fn write_heatmap_csv<W: Write>(out: W, tiles: &TileSet, values: &[f64]) -> Result<()> {
    if values.len() != tiles.len() {
        return Err(Error::InvalidArgument(format!(
            "{} heatmap values for {} tiles",
            values.len(),
            tiles.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let write_err = |e: csv::Error| Error::malformed("heatmap", e.to_string());
    w.write_record(["tile_id", "x", "y", "value"]).map_err(write_err)?;
    for (p, v) in values.iter().enumerate() {
        w.write_record([
            tiles.tile_ids[p].to_string(),
            tiles.coords[(p, 0)].to_string(),
            tiles.coords[(p, 1)].to_string(),
            v.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("heatmap", e))?;
    Ok(())
}
