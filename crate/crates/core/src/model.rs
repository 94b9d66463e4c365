//! The full network: shared encoder, multi-dilation fusion at the deepest
//! level, and the multi-level decoder ladder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_fusion_graphs, build_hierarchy, FusionGraphs, HierarchyConfig, HierarchyLevels};
use crate::layers::{
    dagfusion_forward, encoder_extract, multilevel_decode, DAGFusion, DAGFusionConfig, DecoderStack, EncoderLayer,
};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, ParamVars, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub hierarchy: HierarchyConfig,
    /// Output widths of the downsampling layers.
    pub encoder_channels: Vec<usize>,
    pub fusion: DAGFusionConfig,
    /// Widths of the decoder ladder, finest level first.
    pub decoder_channels: Vec<usize>,
}

impl ModelConfig {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            num_classes,
            hierarchy: HierarchyConfig::default(),
            encoder_channels: vec![64, 128, 256],
            fusion: DAGFusionConfig::default(),
            decoder_channels: vec![64, 64, 128],
        }
    }

    /// Number of resolution levels, including the input level.
    pub fn levels(&self) -> usize {
        self.encoder_channels.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.encoder_channels.len();
        if depth == 0 || self.hierarchy.ratios.len() != depth || self.decoder_channels.len() != depth {
            return Err(Error::invalid(format!(
                "{} encoder widths, {} ratios and {} decoder widths must agree",
                depth,
                self.hierarchy.ratios.len(),
                self.decoder_channels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        self.fusion.validate()
    }
}

/// A block with its hierarchy, fusion graphs and input features.
#[derive(Clone, Debug)]
pub struct PreparedBlock<T> {
    pub hierarchy: HierarchyLevels<T>,
    pub fusion: FusionGraphs,
    /// `[N × in_channels]`
    pub features: Tensor<T>,
}

impl<T: Scalar> PreparedBlock<T> {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-level labels, finest first, when the block was labeled.
    pub fn labels(&self) -> Option<Vec<&[usize]>> {
        self.hierarchy.levels.iter().map(|l| l.labels.as_deref()).collect()
    }
}

/// Builds the hierarchy and fusion graphs for normalized coordinates;
/// features are the coordinates followed by `attrs` (row-major `[N × A]`).
pub fn prepare_block<T: Scalar>(
    xyz: &[[T; 3]],
    attrs: Option<(&[T], usize)>,
    labels: Option<&[usize]>,
    config: &ModelConfig,
) -> Result<PreparedBlock<T>> {
    let a = attrs.map(|(_, w)| w).unwrap_or(0);
    if 3 + a != config.in_channels {
        return Err(Error::invalid(format!(
            "model expects {} input channels, block provides {}",
            config.in_channels,
            3 + a
        )));
    }
    if let Some((data, w)) = attrs {
        if data.len() != xyz.len() * w {
            return Err(Error::shape("prepare_block", "attribute array size"));
        }
    }
    let hierarchy = build_hierarchy(xyz, labels, &config.hierarchy)?;
    let deepest = &hierarchy.levels.last().unwrap().xyz;
    let fusion = build_fusion_graphs(deepest, config.fusion.k, config.fusion.step, &config.fusion.dilation_rates)?;
    let mut feats = Vec::with_capacity(xyz.len() * config.in_channels);
    for (i, p) in xyz.iter().enumerate() {
        feats.extend_from_slice(p);
        if let Some((data, w)) = attrs {
            feats.extend_from_slice(&data[i * w..(i + 1) * w]);
        }
    }
    Ok(PreparedBlock {
        hierarchy,
        fusion,
        features: Tensor::new(vec![xyz.len(), config.in_channels], feats)?,
    })
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub encoders: Vec<EncoderLayer>,
    pub fusion: DAGFusion,
    pub decoder: DecoderStack,
}

impl Network {
    /// Creates the layers and registers freshly initialised parameters.
    pub fn new<T: Scalar>(config: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![config.in_channels];
        widths.extend(&config.encoder_channels);
        let encoders = (0..config.encoder_channels.len())
            .map(|l| EncoderLayer::new(store, &format!("enc{}", l + 1), widths[l], widths[l + 1], &mut rng))
            .collect();
        let deepest = *widths.last().unwrap();
        let fusion = DAGFusion::new(store, "fusion", deepest, config.fusion.clone(), &mut rng)?;
        let decoder = DecoderStack::new(
            store,
            "dec",
            &widths[..widths.len() - 1],
            fusion.out_channels(),
            &config.decoder_channels,
            config.num_classes,
            &mut rng,
        )?;
        Ok(Self {
            config,
            encoders,
            fusion,
            decoder,
        })
    }

    /// Logits for every level, finest first.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &ParamVars, block: &PreparedBlock<T>) -> Result<Vec<Var>> {
        if block.hierarchy.depth() != self.config.levels() {
            return Err(Error::invalid(format!(
                "block hierarchy has {} levels, model expects {}",
                block.hierarchy.depth(),
                self.config.levels()
            )));
        }
        if block.features.cols() != self.config.in_channels {
            return Err(Error::shape(
                "network",
                format!("{} input channels, model expects {}", block.features.cols(), self.config.in_channels),
            ));
        }
        let mut feats = vec![tape.constant(block.features.clone())];
        for (l, enc) in self.encoders.iter().enumerate() {
            let f = encoder_extract(tape, vars, *feats.last().unwrap(), &block.hierarchy, l + 1, enc)?;
            feats.push(f);
        }
        let fused = dagfusion_forward(tape, vars, *feats.last().unwrap(), &block.fusion, &self.fusion)?;
        multilevel_decode(tape, vars, &feats[..feats.len() - 1], fused, &block.hierarchy, &self.decoder)
    }

    /// Full-resolution class ids (argmax of the finest logits, ties to the
    /// smaller class).
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, block: &PreparedBlock<T>) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let vars = params.bind_frozen(&mut tape);
        let logits = self.forward(&mut tape, &vars, block)?;
        Ok(tape.value(logits[0]).argmax_rows())
    }
}
