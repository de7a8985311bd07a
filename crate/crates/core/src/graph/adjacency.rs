//! Gaussian-kernel k-nearest-neighbor graphs over tiles.
//!
//! Both the spatial graph (built from tile coordinates) and the
//! embedding-space graph (built from feature or embedding rows) go through
//! the same two steps: a kernel `K_pq = exp(-‖c_p - c_q‖₂ / 2)` with a zero
//! diagonal, then per-row selection of the `k` largest kernel entries. Row
//! selection makes the graph directed in general.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Weighted directed adjacency with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub adjacency: Matrix,
    /// Neighbor count used to build the graph, if it came from k-NN.
    pub k: Option<usize>,
}

impl SpatialGraph {
    /// Wraps an arbitrary adjacency. Must be square with a zero diagonal and
    /// entries in `[0, 1]`.
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::ShapeMismatch {
                op: "SpatialGraph",
                left: adjacency.shape(),
                right: (n, n),
            });
        }
        adjacency.ensure_finite("adjacency")?;
        for p in 0..n {
            if adjacency[(p, p)] != 0.0 {
                return Err(Error::InvalidArgument(format!("adjacency has nonzero diagonal at {p}")));
            }
        }
        if let Some(v) = adjacency.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("adjacency weight {v} outside [0, 1]")));
        }
        Ok(Self { adjacency, k: None })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(n, n),
            k: None,
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.as_slice().iter().filter(|&&v| v != 0.0).count()
    }

    /// Out-neighbors of `p` in increasing index order.
    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(p)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(q, _)| q)
    }
}

/// `K_pq = exp(-‖x_p - x_q‖₂ / 2)` for `p ≠ q`, zero on the diagonal.
pub fn gaussian_kernel(points: &Matrix) -> Result<Matrix> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("kernel needs at least 2 points, got {n}")));
    }
    points.ensure_finite("kernel input")?;
    let mut k = Matrix::zeros(n, n);
    for p in 0..n {
        for q in p + 1..n {
            let d2: f64 = points
                .row(p)
                .iter()
                .zip(points.row(q))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-d2.sqrt() / 2.0).exp();
            k[(p, q)] = v;
            k[(q, p)] = v;
        }
    }
    Ok(k)
}

/// Keeps, in each row, the `k` largest off-diagonal kernel entries.
///
/// Ties go to the lower column index.
pub fn knn_adjacency(kernel: &Matrix, k: usize) -> Result<SpatialGraph> {
    let n = kernel.rows();
    if kernel.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "knn_adjacency",
            left: kernel.shape(),
            right: (n, n),
        });
    }
    if k == 0 || k + 1 > n {
        return Err(Error::InvalidArgument(format!("k = {k} out of range for {n} tiles")));
    }
    let mut a = Matrix::zeros(n, n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for p in 0..n {
        order.clear();
        order.extend((0..n).filter(|&q| q != p));
        let row = kernel.row(p);
        // stable sort keeps ascending index among equal values
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]));
        for &q in &order[..k] {
            a[(p, q)] = row[q];
        }
    }
    Ok(SpatialGraph {
        adjacency: a,
        k: Some(k),
    })
}

/// Spatial graph from tile coordinates.
pub fn spatial_adjacency(coords: &Matrix, k: usize) -> Result<SpatialGraph> {
    knn_adjacency(&gaussian_kernel(coords)?, k)
}

/// Graph built from representation rows (features or embeddings) instead of
/// coordinates.
pub fn embedding_adjacency(reps: &Matrix, k: usize) -> Result<SpatialGraph> {
    knn_adjacency(&gaussian_kernel(reps)?, k)
}

/// In- and out-degree as edge counts (nonzero entries per column / row).
pub fn degree_pair(graph: &SpatialGraph) -> (Vec<f64>, Vec<f64>) {
    let n = graph.len();
    let mut d_in = vec![0.0; n];
    let mut d_out = vec![0.0; n];
    for p in 0..n {
        for (q, &w) in graph.adjacency.row(p).iter().enumerate() {
            if w != 0.0 {
                d_out[p] += 1.0;
                d_in[q] += 1.0;
            }
        }
    }
    (d_in, d_out)
}

/// Randomly permutes all off-diagonal entries; the diagonal stays zero.
pub fn shuffle_offdiagonal(graph: &SpatialGraph, seed: u64) -> SpatialGraph {
    let n = graph.len();
    let a = &graph.adjacency;
    let mut values: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1));
    for p in 0..n {
        for q in 0..n {
            if p != q {
                values.push(a[(p, q)]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values.shuffle(&mut rng);
    let mut out = Matrix::zeros(n, n);
    let mut it = values.into_iter();
    for p in 0..n {
        for q in 0..n {
            if p != q {
                out[(p, q)] = it.next().expect("count matches");
            }
        }
    }
    SpatialGraph {
        adjacency: out,
        k: None,
    }
}

/// Moves a `fraction` of the edges to uniformly chosen non-neighbors of the
/// same source, keeping their weights. Out-degrees are preserved.
pub fn rewire_edges(graph: &SpatialGraph, fraction: f64, seed: u64) -> Result<SpatialGraph> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("rewire fraction {fraction} outside [0, 1]")));
    }
    let n = graph.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|p| graph.neighbors(p).map(move |q| (p, q)))
        .collect();
    edges.shuffle(&mut rng);
    let count = (fraction * edges.len() as f64).round() as usize;
    let mut a = graph.adjacency.clone();
    for &(p, q) in &edges[..count] {
        let free: Vec<usize> = (0..n).filter(|&r| r != p && a[(p, r)] == 0.0).collect();
        if free.is_empty() {
            continue;
        }
        let target = free[rng.random_range(0..free.len())];
        let w = a[(p, q)];
        a[(p, q)] = 0.0;
        a[(p, target)] = w;
    }
    Ok(SpatialGraph {
        adjacency: a,
        k: graph.k,
    })
}
