//! Synthetic slides whose survival signal lives in a spatial cluster.
//!
//! Each slide is a compact blob of tiles on an integer grid. A contiguous
//! cluster of "tumor" tiles, plus a few scattered decoy tiles, get a shifted
//! feature mean. The hazard grows with the cluster fraction only, so a model
//! that tells clustered tumor from scattered look-alikes ranks patients better
//! than one that just counts tumor-like tiles.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TileSet;
use crate::losses::SurvivalLabel;
use crate::numerics::Matrix;
use crate::train::derive_seed;

fn d_slides() -> usize {
    200
}
fn d_tiles() -> usize {
    64
}
fn d_dim() -> usize {
    32
}
fn d_side() -> usize {
    12
}
fn d_radius() -> f64 {
    3.0
}
fn d_signal() -> f64 {
    1.0
}
fn d_noise() -> f64 {
    0.5
}
fn d_censoring() -> f64 {
    0.3
}
fn d_decoys() -> f64 {
    0.6
}
fn d_gain() -> f64 {
    40.0
}
fn d_texture() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "d_slides")]
    pub n_slides: usize,
    #[serde(default = "d_tiles")]
    pub tiles_per_slide: usize,
    #[serde(default = "d_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_side")]
    pub grid_side: usize,
    /// Largest cluster radius in grid units; each slide draws its own.
    #[serde(default = "d_radius")]
    pub cluster_radius: f64,
    /// Root-mean-square per-feature shift of tumor tiles; the signal-to-noise
    /// ratio is `signal / noise_scale`.
    #[serde(default = "d_signal")]
    pub signal: f64,
    /// Standard deviation of the per-tile noise. Also the unit of every
    /// feature: base levels are drawn from `U(1, 2) · noise_scale`.
    #[serde(default = "d_noise")]
    pub noise_scale: f64,
    #[serde(default = "d_censoring")]
    pub censoring: f64,
    /// Largest fraction of scattered tumor-like tiles outside the cluster.
    /// Decoys never touch the cluster or each other, so fewer may fit.
    #[serde(default = "d_decoys")]
    pub decoy_fraction: f64,
    /// `γ` in the hazard `exp(γ · cluster fraction)`.
    #[serde(default = "d_gain")]
    pub hazard_gain: f64,
    /// Amplitude, relative to `noise_scale`, of a smooth per-feature plane
    /// wave over the slide: tissue texture that varies slowly in space.
    #[serde(default = "d_texture")]
    pub texture: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_slides: d_slides(),
            tiles_per_slide: d_tiles(),
            feature_dim: d_dim(),
            grid_side: d_side(),
            cluster_radius: d_radius(),
            signal: d_signal(),
            noise_scale: d_noise(),
            censoring: d_censoring(),
            decoy_fraction: d_decoys(),
            hazard_gain: d_gain(),
            texture: d_texture(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_slides == 0 || self.feature_dim == 0 || self.grid_side == 0 {
            return bad("n_slides, feature_dim and grid_side must be positive".into());
        }
        if self.tiles_per_slide < 2 {
            return bad("tiles_per_slide must be at least 2".into());
        }
        if self.tiles_per_slide > self.grid_side * self.grid_side {
            return bad(format!(
                "{} tiles do not fit on a {}x{} grid",
                self.tiles_per_slide, self.grid_side, self.grid_side
            ));
        }
        if !(0.0..1.0).contains(&self.censoring) {
            return bad(format!("censoring fraction {} outside [0, 1)", self.censoring));
        }
        if !(0.0..1.0).contains(&self.decoy_fraction) {
            return bad(format!("decoy fraction {} outside [0, 1)", self.decoy_fraction));
        }
        let finite = [self.cluster_radius, self.signal, self.noise_scale, self.hazard_gain, self.texture];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("radius, signal, noise, gain and texture must be finite and nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlide {
    pub tiles: TileSet,
    pub label: SurvivalLabel,
    /// Planted cluster membership per tile.
    pub cluster: Vec<bool>,
    /// Scattered tumor-like tiles outside the cluster.
    pub decoys: Vec<bool>,
}

impl SynthSlide {
    pub fn cluster_fraction(&self) -> f64 {
        self.cluster.iter().filter(|&&c| c).count() as f64 / self.cluster.len() as f64
    }
}

/// Grows a 4-connected blob of `n` cells from the grid center.
fn grow_tissue(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Vec<(i64, i64)> {
    let s = side as i64;
    let start = (s / 2, s / 2);
    let mut tissue = vec![start];
    let mut taken: BTreeSet<(i64, i64)> = [start].into();
    let mut frontier: BTreeSet<(i64, i64)> = BTreeSet::new();
    let push_neighbors = |c: (i64, i64), taken: &BTreeSet<(i64, i64)>, frontier: &mut BTreeSet<(i64, i64)>| {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let q = (c.0 + dx, c.1 + dy);
            if (0..s).contains(&q.0) && (0..s).contains(&q.1) && !taken.contains(&q) {
                frontier.insert(q);
            }
        }
    };
    push_neighbors(start, &taken, &mut frontier);
    while tissue.len() < n {
        let cells: Vec<_> = frontier.iter().copied().collect();
        let c = cells[rng.random_range(0..cells.len())];
        frontier.remove(&c);
        taken.insert(c);
        tissue.push(c);
        push_neighbors(c, &taken, &mut frontier);
    }
    tissue
}

/// Tiles within `radius` of `seed` reachable from it through 8-neighbor
/// steps that stay within the radius.
fn planted_cluster(tissue: &[(i64, i64)], seed: usize, radius: f64) -> Vec<bool> {
    let center = tissue[seed];
    let within = |c: (i64, i64)| {
        let (dx, dy) = ((c.0 - center.0) as f64, (c.1 - center.1) as f64);
        (dx * dx + dy * dy).sqrt() <= radius
    };
    let index: std::collections::BTreeMap<(i64, i64), usize> = tissue.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut member = vec![false; tissue.len()];
    member[seed] = true;
    let mut queue = VecDeque::from([seed]);
    while let Some(p) = queue.pop_front() {
        let c = tissue[p];
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(&q) = index.get(&(c.0 + dx, c.1 + dy)) {
                    if !member[q] && within(tissue[q]) {
                        member[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    member
}

/// Picks up to `target` tiles from `candidates`, in order, skipping any tile
/// with a tumor tile (cluster or an earlier pick) among its 8 neighbors.
fn isolated_decoys(tissue: &[(i64, i64)], cluster: &[bool], candidates: &[usize], target: usize) -> Vec<bool> {
    let index: std::collections::BTreeMap<(i64, i64), usize> = tissue.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut decoys = vec![false; tissue.len()];
    let mut picked = 0;
    for &p in candidates {
        if picked == target {
            break;
        }
        let c = tissue[p];
        let crowded = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                index
                    .get(&(c.0 + dx, c.1 + dy))
                    .is_some_and(|&q| q != p && (cluster[q] || decoys[q]))
            })
        });
        if !crowded {
            decoys[p] = true;
            picked += 1;
        }
    }
    decoys
}

/// Generates the dataset described by `cfg`; a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSlide>> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let mut shared = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let base: Vec<f64> = (0..d).map(|_| cfg.noise_scale * shared.random_range(1.0..2.0)).collect();
    let raw: Vec<f64> = (0..d).map(|_| shared.random_range(0.0..1.0)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let shift: Vec<f64> = raw.iter().map(|v| cfg.signal * v / norm * (d as f64).sqrt()).collect();

    (0..cfg.n_slides)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, i as u64]));
            let n = cfg.tiles_per_slide;
            let tissue = grow_tissue(&mut rng, cfg.grid_side, n);
            let radius = rng.random_range(0.0..=cfg.cluster_radius);
            let cluster = planted_cluster(&tissue, rng.random_range(0..n), radius);

            let mut outside: Vec<usize> = (0..n).filter(|&p| !cluster[p]).collect();
            outside.shuffle(&mut rng);
            let target = (rng.random_range(0.0..=cfg.decoy_fraction) * n as f64).round() as usize;
            let decoys = isolated_decoys(&tissue, &cluster, &outside, target);

            let waves: Vec<(f64, f64, f64)> = (0..d)
                .map(|_| {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let k = std::f64::consts::TAU / rng.random_range(4.0..12.0);
                    (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            let mut features = Matrix::zeros(n, d);
            for p in 0..n {
                let tumor = cluster[p] || decoys[p];
                let (x, y) = (tissue[p].0 as f64, tissue[p].1 as f64);
                for (j, &(kx, ky, phase)) in waves.iter().enumerate() {
                    let iid: f64 = rng.sample(StandardNormal);
                    let noise = cfg.texture * (kx * x + ky * y + phase).cos() + iid;
                    let v = base[j] + if tumor { shift[j] } else { 0.0 } + cfg.noise_scale * noise;
                    features[(p, j)] = v.max(0.0);
                }
            }
            let coords = Matrix::from_vec(n, 2, tissue.iter().flat_map(|&(x, y)| [x as f64, y as f64]).collect())?;
            let tiles = TileSet::new(format!("slide_{i:04}"), coords, features)?;

            let fraction = cluster.iter().filter(|&&c| c).count() as f64 / n as f64;
            let hazard = (cfg.hazard_gain * fraction).exp();
            let exp = Exp::new(hazard).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut time: f64 = exp.sample(&mut rng);
            let mut event = true;
            if rng.random::<f64>() < cfg.censoring {
                time *= 1.0 - rng.random::<f64>();
                event = false;
            }
            let label = SurvivalLabel::new(time.max(f64::MIN_POSITIVE), event)?;
            Ok(SynthSlide {
                tiles,
                label,
                cluster,
                decoys,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_slides: 6,
            tiles_per_slide: 30,
            feature_dim: 4,
            grid_side: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn tiles_sit_on_distinct_grid_points() {
        for s in generate(&small()).unwrap() {
            let pts: BTreeSet<(i64, i64)> = (0..s.tiles.len())
                .map(|p| (s.tiles.coords[(p, 0)] as i64, s.tiles.coords[(p, 1)] as i64))
                .collect();
            assert_eq!(pts.len(), 30);
            assert!(pts.iter().all(|&(x, y)| (0..8).contains(&x) && (0..8).contains(&y)));
        }
    }

    #[test]
    fn cluster_is_eight_connected() {
        for s in generate(&SynthConfig { n_slides: 20, ..small() }).unwrap() {
            let members: Vec<usize> = (0..s.tiles.len()).filter(|&p| s.cluster[p]).collect();
            let at = |p: usize| (s.tiles.coords[(p, 0)], s.tiles.coords[(p, 1)]);
            let mut seen = vec![members[0]];
            let mut i = 0;
            while i < seen.len() {
                let (x, y) = at(seen[i]);
                for &q in &members {
                    let (qx, qy) = at(q);
                    if !seen.contains(&q) && (qx - x).abs() <= 1.0 && (qy - y).abs() <= 1.0 {
                        seen.push(q);
                    }
                }
                i += 1;
            }
            assert_eq!(seen.len(), members.len());
        }
    }

    #[test]
    fn zero_noise_makes_tumor_tiles_identical() {
        let cfg = SynthConfig {
            noise_scale: 0.0,
            ..small()
        };
        for s in generate(&cfg).unwrap() {
            let tumor: Vec<usize> = (0..s.tiles.len()).filter(|&p| s.cluster[p] || s.decoys[p]).collect();
            for &p in &tumor {
                assert_eq!(s.tiles.features.row(p), s.tiles.features.row(tumor[0]));
            }
        }
    }

    #[test]
    fn zero_censoring_observes_every_event() {
        let cfg = SynthConfig {
            censoring: 0.0,
            n_slides: 40,
            ..small()
        };
        assert!(generate(&cfg).unwrap().iter().all(|s| s.label.event));
    }

    #[test]
    fn infeasible_packing_is_rejected() {
        let cfg = SynthConfig {
            tiles_per_slide: 65,
            grid_side: 8,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }
    #[test]
    fn decoys_are_isolated() {
        for s in generate(&SynthConfig { n_slides: 20, ..small() }).unwrap() {
            let at = |p: usize| (s.tiles.coords[(p, 0)], s.tiles.coords[(p, 1)]);
            for p in (0..s.tiles.len()).filter(|&p| s.decoys[p]) {
                assert!(!s.cluster[p]);
                let (x, y) = at(p);
                for q in (0..s.tiles.len()).filter(|&q| q != p && (s.cluster[q] || s.decoys[q])) {
                    let (qx, qy) = at(q);
                    assert!((qx - x).abs() > 1.0 || (qy - y).abs() > 1.0);
                }
            }
        }
    }

    fn average_ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            for &o in &order[i..=j] {
                ranks[o] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        ranks
    }

    #[test]
    fn larger_clusters_die_sooner() {
        let data = generate(&SynthConfig {
            censoring: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(data.len(), 200);
        let a = average_ranks(&data.iter().map(|s| s.cluster_fraction()).collect::<Vec<_>>());
        let b = average_ranks(&data.iter().map(|s| s.label.time).collect::<Vec<_>>());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let rho = cov / (va * vb).sqrt();
        assert!(rho < -0.3, "spearman {rho}");
    }
}
