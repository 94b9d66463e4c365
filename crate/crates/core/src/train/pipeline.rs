//! From a raw point cloud to a network-ready block and back.

use crate::data::{normalize_block, sample_block, Normalization, PointCloud};
use crate::error::{Error, Result};
use crate::graph::knn_search;
use crate::model::{prepare_block, ModelConfig, PreparedBlock};

/// A fixed-size sample of a cloud, normalised and prepared for the network.
#[derive(Clone, Debug)]
pub struct BlockSample {
    /// Indices into the source cloud, one per network point.
    pub indices: Vec<usize>,
    pub normalization: Normalization,
    pub block: PreparedBlock<f32>,
}

/// Samples `n_target` points, normalises their coordinates and builds the
/// hierarchy. Attributes are passed through unscaled.
pub fn prepare_cloud_block(cloud: &PointCloud, model: &ModelConfig, n_target: usize, seed: u64) -> Result<BlockSample> {
    if let Some(labels) = &cloud.labels {
        if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside the model's {} classes",
                model.num_classes
            )));
        }
    }
    let indices = sample_block(cloud.len(), n_target, seed)?;
    let sub = cloud.select(&indices);
    let (xyz, normalization) = normalize_block(&sub.xyz)?;
    let xyz32: Vec<[f32; 3]> = xyz.iter().map(|p| p.map(|v| v as f32)).collect();
    let attrs32: Vec<f32> = sub.attrs.iter().map(|&v| v as f32).collect();
    let attrs = (sub.attr_width() > 0).then_some((attrs32.as_slice(), sub.attr_width()));
    let block = prepare_block(&xyz32, attrs, sub.labels.as_deref(), model)?;
    Ok(BlockSample {
        indices,
        normalization,
        block,
    })
}

/// Spreads per-sample predictions to every point of the cloud: sampled
/// points keep their own label, the rest take the label of the nearest
/// sampled point.
pub fn label_by_nearest(cloud: &PointCloud, sample: &[usize], pred: &[usize]) -> Result<Vec<usize>> {
    if sample.len() != pred.len() || sample.is_empty() {
        return Err(Error::shape("label_by_nearest", "one prediction per sampled point required"));
    }
    let mut out = vec![usize::MAX; cloud.len()];
    for (&i, &p) in sample.iter().zip(pred) {
        if out[i] == usize::MAX {
            out[i] = p;
        }
    }
    let missing: Vec<usize> = (0..cloud.len()).filter(|&i| out[i] == usize::MAX).collect();
    if !missing.is_empty() {
        let sampled_xyz: Vec<[f64; 3]> = sample.iter().map(|&i| cloud.xyz[i]).collect();
        let queries: Vec<[f64; 3]> = missing.iter().map(|&i| cloud.xyz[i]).collect();
        let nearest = knn_search(&sampled_xyz, &queries, 1)?;
        for (&i, &j) in missing.iter().zip(&nearest) {
            out[i] = pred[j];
        }
    }
    Ok(out)
}

/// [`prepare_cloud_block`] over many clouds in parallel; cloud `i` is
/// sampled with seed `seed + i`, so results do not depend on scheduling.
pub fn prepare_cloud_blocks(
    clouds: &[PointCloud],
    model: &ModelConfig,
    n_target: usize,
    seed: u64,
) -> Result<Vec<BlockSample>> {
    use rayon::prelude::*;
    clouds
        .par_iter()
        .enumerate()
        .map(|(i, c)| prepare_cloud_block(c, model, n_target, seed.wrapping_add(i as u64)))
        .collect()
}
