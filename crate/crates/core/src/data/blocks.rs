//! Horizontal block partitioning, fixed-size sampling and normalization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: usize = 64;
pub const DEFAULT_N_TARGET: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub point_indices: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

struct Cell {
    lo: [i64; 2],
    hi: [i64; 2],
    points: Vec<usize>,
}

impl Cell {
    fn center(&self) -> [f64; 2] {
        [0, 1].map(|a| (self.lo[a] + self.hi[a] + 1) as f64 / 2.0)
    }
}

/// Splits the cloud into a `block_size` square grid anchored at its minimum
/// x/y. Cells with fewer than `min_count` points are merged into the
/// nearest cell that has at least `min_count` (by cell-center distance,
/// ties to the earlier cell in x-major order). If no cell is that large,
/// everything merges into the most populated one.
pub fn partition_blocks(cloud: &PointCloud, block_size: f64, min_count: usize) -> Result<Vec<Block>> {
    if !(block_size > 0.0 && block_size.is_finite()) {
        return Err(Error::invalid(format!("block size must be positive, got {block_size}")));
    }
    if cloud.is_empty() {
        return Err(Error::invalid("cannot partition an empty cloud"));
    }
    let min = [0, 1].map(|a| cloud.xyz.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.xyz.iter().enumerate() {
        let c = [0, 1].map(|a| ((p[a] - min[a]) / block_size).floor() as i64);
        grid.entry((c[0], c[1])).or_default().push(i);
    }
    let mut cells: Vec<Cell> = grid
        .into_iter()
        .map(|((x, y), points)| Cell {
            lo: [x, y],
            hi: [x, y],
            points,
        })
        .collect();
    let large: Vec<usize> = (0..cells.len()).filter(|&c| cells[c].points.len() >= min_count).collect();
    let targets: Vec<usize> = if large.is_empty() {
        let best = (0..cells.len()).max_by_key(|&c| (cells[c].points.len(), std::cmp::Reverse(c))).unwrap();
        vec![best]
    } else {
        large
    };
    let mut absorbed: Vec<(usize, usize)> = Vec::new();
    for c in 0..cells.len() {
        if targets.contains(&c) {
            continue;
        }
        let here = cells[c].center();
        let d2 = |t: usize| {
            let o = cells[t].center();
            (here[0] - o[0]).powi(2) + (here[1] - o[1]).powi(2)
        };
        let nearest = targets
            .iter()
            .copied()
            .min_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)))
            .unwrap();
        absorbed.push((c, nearest));
    }
    for &(from, into) in &absorbed {
        let pts = std::mem::take(&mut cells[from].points);
        let (lo, hi) = (cells[from].lo, cells[from].hi);
        let dst = &mut cells[into];
        dst.points.extend(pts);
        for a in 0..2 {
            dst.lo[a] = dst.lo[a].min(lo[a]);
            dst.hi[a] = dst.hi[a].max(hi[a]);
        }
    }
    Ok(targets
        .into_iter()
        .map(|t| {
            let cell = &mut cells[t];
            cell.points.sort_unstable();
            Block {
                origin: [0, 1].map(|a| min[a] + cell.lo[a] as f64 * block_size),
                extent: [0, 1].map(|a| (cell.hi[a] - cell.lo[a] + 1) as f64 * block_size),
                point_indices: std::mem::take(&mut cell.points),
            }
        })
        .collect())
}

/// `n_target` indices into `0..n`: a uniform subset without replacement
/// when `n >= n_target`, otherwise every index plus uniform draws with
/// replacement, shuffled.
pub fn sample_block(n: usize, n_target: usize, seed: u64) -> Result<Vec<usize>> {
    if n_target == 0 {
        return Err(Error::invalid("n_target must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot sample an empty block"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n >= n_target {
        return Ok(rand::seq::index::sample(&mut rng, n, n_target).into_vec());
    }
    let mut out: Vec<usize> = (0..n).collect();
    out.extend((n..n_target).map(|_| rng.random_range(0..n)));
    out.shuffle(&mut rng);
    Ok(out)
}

/// The transform applied by [`normalize_block`]: `(p − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.offset[a]) / self.scale)
    }

    pub fn invert(&self, q: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| q[a] * self.scale + self.offset[a])
    }
}

/// Centers on the horizontal centroid and the minimum height, then divides
/// by the largest absolute centered coordinate (1 for a degenerate cloud).
pub fn normalize_block(xyz: &[[f64; 3]]) -> Result<(Vec<[f64; 3]>, Normalization)> {
    if xyz.is_empty() {
        return Err(Error::invalid("cannot normalize an empty block"));
    }
    let n = xyz.len() as f64;
    let cx = xyz.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = xyz.iter().map(|p| p[1]).sum::<f64>() / n;
    let zmin = xyz.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let offset = [cx, cy, zmin];
    let extent = xyz
        .iter()
        .flat_map(|p| (0..3).map(move |a| (p[a] - offset[a]).abs()))
        .fold(0.0, f64::max);
    let scale = if extent > 0.0 { extent } else { 1.0 };
    let norm = Normalization { offset, scale };
    Ok((xyz.iter().map(|&p| norm.apply(p)).collect(), norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec(), None).unwrap()
    }

    #[test]
    fn one_square_is_one_block() {
        let c = cloud(&[[0.0, 0.0, 0.0], [10.0, 29.0, 1.0], [29.9, 5.0, 2.0]]);
        let b = partition_blocks(&c, 30.0, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].point_indices, vec![0, 1, 2]);
        assert_eq!(b[0].origin, [0.0, 0.0]);
    }

    #[test]
    fn zero_block_size_rejected() {
        let c = cloud(&[[0.0; 3]]);
        assert!(partition_blocks(&c, 0.0, 1).is_err());
    }

    #[test]
    fn stray_cell_merges_into_neighbor() {
        let mut pts: Vec<[f64; 3]> = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64, 0.0]).collect();
        pts.extend((0..100).map(|i| [100.0 + (i % 10) as f64, (i / 10) as f64, 0.0]));
        let two = partition_blocks(&cloud(&pts), 30.0, 64).unwrap();
        assert_eq!(two.len(), 2);
        pts.extend([[35.0, 1.0, 0.0], [36.0, 2.0, 0.0], [37.0, 3.0, 0.0]]);
        let merged = partition_blocks(&cloud(&pts), 30.0, 64).unwrap();
        assert_eq!(merged.len(), 2);
        assert!(merged[0].point_indices.ends_with(&[200, 201, 202]));
        assert_eq!(merged[0].extent, [60.0, 30.0]);
        let unmerged = partition_blocks(&cloud(&pts), 30.0, 1).unwrap();
        assert_eq!(unmerged.len(), 3);
    }

    #[test]
    fn sampling_contracts() {
        let full = sample_block(50, 50, 3).unwrap();
        let mut sorted = full.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());

        let filled = sample_block(10, 4096, 1).unwrap();
        assert_eq!(filled.len(), 4096);
        assert!((0..10).all(|i| filled.contains(&i)));
        assert_eq!(filled, sample_block(10, 4096, 1).unwrap());
        assert!(sample_block(10, 0, 1).is_err());
    }

    #[test]
    fn normalization_rules() {
        let centered = [[-1.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, -1.0, 0.5], [0.0, 1.0, 0.5]];
        let (out, n) = normalize_block(&centered).unwrap();
        assert_eq!(n.scale, 1.0);
        assert_eq!(out, centered.to_vec());

        let (single, n) = normalize_block(&[[5.0, 6.0, 7.0]]).unwrap();
        assert_eq!(single, vec![[0.0, 0.0, 0.0]]);
        assert_eq!(n.scale, 1.0);
    }
}
