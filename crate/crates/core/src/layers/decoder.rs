use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{HierarchyLevels, InterpolationTable};
use crate::scalar::Scalar;
use crate::tensor::{LinearParams, ParamStore, ParamVars, Tape, Var};

/// Inverse-distance upsampling of coarse features onto a finer point set.
pub fn upsample_interpolate<T: Scalar>(tape: &mut Tape<T>, coarse: Var, table: &InterpolationTable<T>) -> Result<Var> {
    tape.interpolate(coarse, table.index.clone(), table.weights.clone(), table.k)
}

/// Skip-fusion MLPs and per-level classification heads.
///
/// `fuse[l]` maps `[F_enc(l), up(G(l+1))]` to `G(l)` for `l < L`; `heads[l]`
/// maps `G(l)` to class logits for every level, the deepest `G(L)` being the
/// fusion output.
#[derive(Clone, Debug)]
pub struct DecoderStack {
    pub fuse: Vec<LinearParams>,
    pub heads: Vec<LinearParams>,
    pub channels: Vec<usize>,
}

impl DecoderStack {
    /// `encoder_channels[l]` are the channel counts of `F_enc(l)` for
    /// `l = 0..L−1`; `decoder_channels[l]` the widths of `G(l)`.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        encoder_channels: &[usize],
        deepest_channels: usize,
        decoder_channels: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if encoder_channels.len() != decoder_channels.len() {
            return Err(Error::invalid(format!(
                "{} encoder skip widths but {} decoder widths",
                encoder_channels.len(),
                decoder_channels.len()
            )));
        }
        let levels = decoder_channels.len();
        let mut channels = decoder_channels.to_vec();
        channels.push(deepest_channels);
        let mut fuse = Vec::with_capacity(levels);
        for l in 0..levels {
            let cin = encoder_channels[l] + channels[l + 1];
            fuse.push(LinearParams::init(store, &format!("{name}.fuse{l}"), cin, channels[l], rng));
        }
        let heads = (0..=levels)
            .map(|l| LinearParams::init(store, &format!("{name}.head{l}"), channels[l], num_classes, rng))
            .collect();
        Ok(Self { fuse, heads, channels })
    }
}

/// Shared upsampling ladder with skip fusion; returns logits for levels
/// `0..=L`, finest first.
pub fn multilevel_decode<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    encoder_features: &[Var],
    fused: Var,
    hierarchy: &HierarchyLevels<T>,
    stack: &DecoderStack,
) -> Result<Vec<Var>> {
    let levels = stack.fuse.len();
    if encoder_features.len() < levels || hierarchy.upsample.len() < levels {
        return Err(Error::invalid(format!(
            "decoder needs {levels} skip levels, got {} features and {} upsampling tables",
            encoder_features.len(),
            hierarchy.upsample.len()
        )));
    }
    let mut ladder = vec![fused; levels + 1];
    for l in (0..levels).rev() {
        let up = upsample_interpolate(tape, ladder[l + 1], &hierarchy.upsample[l])?;
        let skip = encoder_features[l];
        let (rs, ru) = (tape.value(skip).rows(), tape.value(up).rows());
        if rs != ru {
            return Err(Error::shape("multilevel_decode", format!("level {l}: skip {rs} rows, upsampled {ru}")));
        }
        let joined = tape.concat(&[skip, up])?;
        let width = tape.value(joined).cols();
        if width != stack.fuse[l].in_dim {
            return Err(Error::shape(
                "multilevel_decode",
                format!("level {l}: {width} channels into a {}-channel fusion", stack.fuse[l].in_dim),
            ));
        }
        let h = stack.fuse[l].forward(tape, vars, joined)?;
        ladder[l] = tape.relu(h);
    }
    ladder
        .iter()
        .zip(&stack.heads)
        .map(|(&g, head)| head.forward(tape, vars, g))
        .collect()
}
