use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::HierarchyLevels;
use crate::scalar::Scalar;
use crate::tensor::{LinearParams, ParamStore, ParamVars, Tape, Tensor, Var};

/// Local aggregator for one downsampling step: for every sampled centroid,
/// edges to its finer-level neighbors carry `[p_j − c_i, f_j]`; a shared
/// linear map + ReLU is max-pooled, then a pointwise linear + ReLU.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub edge: LinearParams,
    pub post: LinearParams,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            edge: LinearParams::init(store, &format!("{name}.edge"), 3 + in_channels, out_channels, rng),
            post: LinearParams::init(store, &format!("{name}.post"), out_channels, out_channels, rng),
            in_channels,
            out_channels,
        }
    }
}

pub(crate) fn xyz_tensor<T: Scalar>(xyz: &[[T; 3]]) -> Result<Tensor<T>> {
    Tensor::new(vec![xyz.len(), 3], xyz.iter().flatten().copied().collect())
}

/// Features of level `level` computed from the features of level `level − 1`.
pub fn encoder_extract<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    features: Var,
    hierarchy: &HierarchyLevels<T>,
    level: usize,
    layer: &EncoderLayer,
) -> Result<Var> {
    if level == 0 || level >= hierarchy.depth() {
        return Err(Error::invalid(format!(
            "encoder level {level} out of range 1..{}",
            hierarchy.depth()
        )));
    }
    let fine = &hierarchy.levels[level - 1];
    let coarse = &hierarchy.levels[level];
    let mapping = coarse
        .mapping_graph
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("level {level} has no mapping graph")))?;
    let f = tape.value(features);
    if f.shape() != [fine.len(), layer.in_channels] {
        return Err(Error::shape(
            "encoder_extract",
            format!("features {:?}, expected [{}, {}]", f.shape(), fine.len(), layer.in_channels),
        ));
    }
    mapping.validate(fine.len())?;

    let w = vars.var(layer.edge.weight);
    let w_pos = tape.slice_rows(w, 0, 3)?;
    let w_feat = tape.slice_rows(w, 3, 3 + layer.in_channels)?;
    let fine_xyz = tape.constant(xyz_tensor(&fine.xyz)?);
    let coarse_xyz = tape.constant(xyz_tensor(&coarse.xyz)?);

    // neighbor term: p_j·W_p + f_j·W_f
    let pos_term = tape.matmul(fine_xyz, w_pos)?;
    let feat_term = tape.matmul(features, w_feat)?;
    let nbr = tape.add(pos_term, feat_term)?;
    // centroid term: b − c_i·W_p
    let c_term = tape.matmul(coarse_xyz, w_pos)?;
    let c_term = tape.scale(c_term, -T::one());
    let center = tape.add_bias(c_term, vars.var(layer.edge.bias))?;

    let pooled = tape.gather_max(center, nbr, Arc::new(mapping.indices.clone()), mapping.k)?;
    let act = tape.relu(pooled);
    let h = layer.post.forward(tape, vars, act)?;
    Ok(tape.relu(h))
}
