//! Multi-resolution point hierarchy: FPS-sampled levels, per-level KNN
//! point graphs, mapping graphs into the finer level, interpolation tables
//! for upsampling, and labels carried through the FPS indices.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::neighbors::{annular_knn, knn_graph, sparse_knn, SparseNeighborhood};
use super::fps::farthest_point_sampling;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Neighbor count of point and mapping graphs.
    pub k: usize,
    /// Downsampling ratio between consecutive levels.
    pub ratios: Vec<usize>,
    pub seed: u64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            k: 32,
            ratios: vec![4, 4, 2],
            seed: 0,
        }
    }
}

impl HierarchyConfig {
    /// Point count of every level for an input of `n` points.
    pub fn level_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for &r in &self.ratios {
            let prev = *sizes.last().unwrap();
            sizes.push(prev / r.max(1));
        }
        sizes
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyLevel<T> {
    pub xyz: Vec<[T; 3]>,
    /// Indices into the previous (finer) level; empty at level 0.
    pub fps_indices: Vec<usize>,
    /// KNN graph within this level (levels ≥ 1).
    pub point_graph: Option<SparseNeighborhood>,
    /// For each point of this level, its neighbors in the finer level (levels ≥ 1).
    pub mapping_graph: Option<SparseNeighborhood>,
    pub labels: Option<Vec<usize>>,
}

impl<T> HierarchyLevel<T> {
    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }
}

/// Inverse-distance weights from a coarse point set onto a finer one.
#[derive(Clone, Debug)]
pub struct InterpolationTable<T> {
    pub k: usize,
    /// `[fine × k]` coarse indices.
    pub index: Arc<Vec<usize>>,
    /// `[fine × k]` weights, each row summing to one.
    pub weights: Arc<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct HierarchyLevels<T> {
    pub levels: Vec<HierarchyLevel<T>>,
    /// `upsample[l]` carries level `l+1` features onto level `l`.
    pub upsample: Vec<InterpolationTable<T>>,
}

impl<T: Scalar> HierarchyLevels<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len()).collect()
    }

    pub fn level(&self, l: usize) -> Result<&HierarchyLevel<T>> {
        self.levels
            .get(l)
            .ok_or_else(|| Error::invalid(format!("level {l} out of range (depth {})", self.levels.len())))
    }
}

const IDW_EPS: f64 = 1e-8;

/// Blend weights of the 3 nearest coarse points for every fine point,
/// `w ∝ 1/(d + 1e-8)`. A fine point that coincides with a coarse point
/// copies it exactly.
pub fn interpolation_table<T: Scalar>(coarse: &[[T; 3]], fine: &[[T; 3]]) -> Result<InterpolationTable<T>> {
    if coarse.is_empty() {
        return Err(Error::invalid("interpolation needs a nonempty coarse set"));
    }
    let k = coarse.len().min(3);
    let tree = KdTree::build(coarse);
    let mut index = Vec::with_capacity(fine.len() * k);
    let mut weights = Vec::with_capacity(fine.len() * k);
    let eps = T::of(IDW_EPS);
    for q in fine {
        let nn = tree.nearest(q, k);
        if nn[0].d2 == T::zero() {
            for (j, c) in nn.iter().enumerate() {
                index.push(c.index);
                weights.push(if j == 0 { T::one() } else { T::zero() });
            }
            continue;
        }
        let raw: Vec<T> = nn.iter().map(|c| T::one() / (c.d2.sqrt() + eps)).collect();
        let total: T = raw.iter().copied().sum();
        for (c, w) in nn.iter().zip(raw) {
            index.push(c.index);
            weights.push(w / total);
        }
    }
    Ok(InterpolationTable {
        k,
        index: Arc::new(index),
        weights: Arc::new(weights),
    })
}

/// `A_l[i] = A_{l-1}[fps_l[i]]` for every link of the chain.
pub fn downsample_labels(labels: &[usize], chain: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![labels.to_vec()];
    for fps in chain {
        let prev = out.last().unwrap();
        let next = fps
            .iter()
            .map(|&i| {
                prev.get(i).copied().ok_or(Error::Index {
                    op: "downsample_labels",
                    index: i,
                    len: prev.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(next);
    }
    Ok(out)
}

fn level_seed(seed: u64, level: usize) -> u64 {
    if seed == 0 {
        0
    } else {
        seed.wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Builds every level of the hierarchy. Neighbor searches run in the
/// coordinates given, which are the same space at every level.
pub fn build_hierarchy<T: Scalar>(
    xyz: &[[T; 3]],
    labels: Option<&[usize]>,
    cfg: &HierarchyConfig,
) -> Result<HierarchyLevels<T>> {
    if cfg.k == 0 {
        return Err(Error::invalid("hierarchy k must be at least 1"));
    }
    if let Some(l) = labels {
        if l.len() != xyz.len() {
            return Err(Error::shape("build_hierarchy", format!("{} points, {} labels", xyz.len(), l.len())));
        }
    }
    let sizes = cfg.level_sizes(xyz.len());
    if let Some((l, &s)) = sizes.iter().enumerate().find(|(_, &s)| s < cfg.k) {
        return Err(Error::InsufficientPoints {
            needed: cfg.k,
            available: s,
            context: format!("hierarchy level {l} of sizes {sizes:?} is smaller than k"),
        });
    }
    let mut levels = vec![HierarchyLevel {
        xyz: xyz.to_vec(),
        fps_indices: Vec::new(),
        point_graph: None,
        mapping_graph: None,
        labels: labels.map(<[usize]>::to_vec),
    }];
    let mut upsample = Vec::new();
    for (l, &m) in sizes.iter().enumerate().skip(1) {
        let prev = levels.last().unwrap();
        let fps = farthest_point_sampling(&prev.xyz, m, level_seed(cfg.seed, l))?;
        let pts: Vec<[T; 3]> = fps.iter().map(|&i| prev.xyz[i]).collect();
        let point_graph = knn_graph(&pts, &pts, cfg.k)?;
        let mapping_graph = knn_graph(&prev.xyz, &pts, cfg.k)?;
        let lab = prev.labels.as_ref().map(|a| fps.iter().map(|&i| a[i]).collect());
        upsample.push(interpolation_table(&pts, &prev.xyz)?);
        levels.push(HierarchyLevel {
            xyz: pts,
            fps_indices: fps,
            point_graph: Some(point_graph),
            mapping_graph: Some(mapping_graph),
            labels: lab,
        });
    }
    Ok(HierarchyLevels { levels, upsample })
}

/// Dilated and annular neighborhoods of one point set, one pair per
/// fusion dilation rate.
#[derive(Clone, Debug)]
pub struct FusionGraphs {
    pub rates: Vec<usize>,
    pub dilated: Vec<SparseNeighborhood>,
    pub annular: Vec<SparseNeighborhood>,
}

/// Annular dilation rate used for the fusion branch at rate `r`: the
/// `r`-th ring of `k` neighbors, i.e. `(r−1)·k + 1`.
pub fn ring_rate(k: usize, rate: usize) -> usize {
    (rate - 1) * k + 1
}

pub fn build_fusion_graphs<T: Scalar>(xyz: &[[T; 3]], k: usize, step: usize, rates: &[usize]) -> Result<FusionGraphs> {
    if rates.is_empty() || rates.contains(&0) {
        return Err(Error::invalid(format!("invalid dilation rates {rates:?}")));
    }
    let mut dilated = Vec::with_capacity(rates.len());
    let mut annular = Vec::with_capacity(rates.len());
    for &r in rates {
        dilated.push(sparse_knn(xyz, xyz, k, step, r)?);
        annular.push(annular_knn(xyz, xyz, k, ring_rate(k, r))?);
    }
    Ok(FusionGraphs {
        rates: rates.to_vec(),
        dilated,
        annular,
    })
}

#[derive(Serialize, Deserialize)]
pub struct LevelDump {
    pub level: usize,
    pub size: usize,
    pub fps_indices: Vec<usize>,
    pub point_graph: Option<Vec<Vec<usize>>>,
    pub mapping_graph: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
pub struct FusionDump {
    pub rate: usize,
    pub annular_rate: usize,
    pub dilated: Vec<Vec<usize>>,
    pub annular: Vec<Vec<usize>>,
}

/// JSON-friendly view of a hierarchy and its fusion graphs.
#[derive(Serialize, Deserialize)]
pub struct GraphDump {
    pub k: usize,
    pub level_sizes: Vec<usize>,
    pub levels: Vec<LevelDump>,
    pub fusion_k: usize,
    pub fusion_step: usize,
    pub fusion: Vec<FusionDump>,
}

fn rows(n: &SparseNeighborhood) -> Vec<Vec<usize>> {
    n.rows().map(<[usize]>::to_vec).collect()
}

impl GraphDump {
    pub fn new<T: Scalar>(h: &HierarchyLevels<T>, k: usize, fusion: &FusionGraphs) -> Self {
        let (fusion_k, fusion_step) = fusion
            .dilated
            .first()
            .map(|g| (g.k, g.step))
            .unwrap_or((0, 0));
        Self {
            k,
            level_sizes: h.sizes(),
            levels: h
                .levels
                .iter()
                .enumerate()
                .map(|(l, lv)| LevelDump {
                    level: l,
                    size: lv.len(),
                    fps_indices: lv.fps_indices.clone(),
                    point_graph: lv.point_graph.as_ref().map(rows),
                    mapping_graph: lv.mapping_graph.as_ref().map(rows),
                })
                .collect(),
            fusion_k,
            fusion_step,
            fusion: fusion
                .rates
                .iter()
                .zip(fusion.dilated.iter().zip(&fusion.annular))
                .map(|(&rate, (d, a))| FusionDump {
                    rate,
                    annular_rate: a.dilation,
                    dilated: rows(d),
                    annular: rows(a),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes_follow_ratios() {
        let cfg = HierarchyConfig::default();
        assert_eq!(cfg.level_sizes(4096), vec![4096, 1024, 256, 128]);
        assert_eq!(cfg.level_sizes(1000), vec![1000, 250, 62, 31]);
    }

    #[test]
    fn label_chain_hand_trace() {
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let out = downsample_labels(&labels, &[vec![0, 4]]).unwrap();
        assert_eq!(out[1], vec![0, 2]);
        assert!(downsample_labels(&labels, &[vec![8]]).is_err());
    }

    #[test]
    fn interpolation_midpoint_and_identity() {
        let coarse = [[0.0f64, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let t = interpolation_table(&coarse, &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(t.k, 2);
        assert!((t.weights[0] - 0.5).abs() < 1e-12 && (t.weights[1] - 0.5).abs() < 1e-12);
        let same = interpolation_table(&coarse, &coarse).unwrap();
        assert_eq!(same.index[0], 0);
        assert_eq!(same.weights[0], 1.0);
        assert_eq!(same.index[2], 1);
        assert_eq!(same.weights[2], 1.0);
        assert!(interpolation_table::<f64>(&[], &coarse).is_err());
    }

    #[test]
    fn too_small_input_names_the_level() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let err = build_hierarchy(&pts, None, &HierarchyConfig::default()).unwrap_err();
        assert!(err.to_string().contains("smaller than k"), "{err}");
    }
}
