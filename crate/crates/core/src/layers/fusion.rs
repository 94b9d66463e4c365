//! Densely connected cascades of dilated and annular convolutions at
//! increasing dilation rates, fused by MLPs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{adconv_forward, dgconv_forward, DGConvLayer};
use crate::error::{Error, Result};
use crate::graph::FusionGraphs;
use crate::scalar::Scalar;
use crate::tensor::{LinearParams, ParamStore, ParamVars, Tape, Var};

/// How a branch combines its input with the outputs of its layers before
/// the branch MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `[F_0, F_1, …, F_M]`
    #[default]
    Concat,
    /// `[F_0, F_1 + … + F_M]`
    Add,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "add" => Ok(Self::Add),
            other => Err(Error::invalid(format!("unknown aggregation '{other}' (concat|add)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DAGFusionConfig {
    pub dilation_rates: Vec<usize>,
    /// Output channels of each convolution in a branch.
    pub branch_channels: usize,
    pub dense_connections: bool,
    pub aggregation: Aggregation,
    /// Neighbors per dilated / annular neighborhood.
    pub k: usize,
    /// Sparse-KNN sampling step.
    pub step: usize,
    pub out_channels: usize,
}

impl Default for DAGFusionConfig {
    fn default() -> Self {
        Self {
            dilation_rates: vec![1, 2, 4, 8],
            branch_channels: 64,
            dense_connections: true,
            aggregation: Aggregation::Concat,
            k: 16,
            step: 4,
            out_channels: 256,
        }
    }
}

impl DAGFusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilation_rates.is_empty() {
            return Err(Error::invalid("dilation rates must be nonempty"));
        }
        if self.dilation_rates[0] == 0 || self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "dilation rates must be positive and strictly increasing, got {:?}",
                self.dilation_rates
            )));
        }
        if self.branch_channels == 0 || self.out_channels == 0 || self.k == 0 || self.step == 0 {
            return Err(Error::invalid("fusion widths, k and step must be positive"));
        }
        Ok(())
    }

    /// Input channels of the `m`-th (0-based) convolution of a branch.
    pub fn layer_input(&self, input: usize, m: usize) -> usize {
        match (self.dense_connections, m) {
            (_, 0) => input,
            (true, m) => input + m * self.branch_channels,
            (false, _) => self.branch_channels,
        }
    }

    /// Input channels of the branch MLP.
    pub fn branch_mlp_input(&self, input: usize) -> usize {
        match self.aggregation {
            Aggregation::Concat => input + self.dilation_rates.len() * self.branch_channels,
            Aggregation::Add => input + self.branch_channels,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DAGFusion {
    pub config: DAGFusionConfig,
    pub in_channels: usize,
    pub dgconv: Vec<DGConvLayer>,
    pub adconv: Vec<DGConvLayer>,
    pub dg_mlp: LinearParams,
    pub ad_mlp: LinearParams,
    pub out_mlp: LinearParams,
}

impl DAGFusion {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        config: DAGFusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut dgconv = Vec::new();
        let mut adconv = Vec::new();
        for (m, r) in config.dilation_rates.iter().enumerate() {
            let cin = config.layer_input(in_channels, m);
            dgconv.push(DGConvLayer::new(store, &format!("{name}.dg{m}_r{r}"), cin, config.branch_channels, rng));
        }
        for (m, r) in config.dilation_rates.iter().enumerate() {
            let cin = config.layer_input(in_channels, m);
            adconv.push(DGConvLayer::new(store, &format!("{name}.ad{m}_r{r}"), cin, config.branch_channels, rng));
        }
        let mlp_in = config.branch_mlp_input(in_channels);
        let dg_mlp = LinearParams::init(store, &format!("{name}.dg_mlp"), mlp_in, config.out_channels, rng);
        let ad_mlp = LinearParams::init(store, &format!("{name}.ad_mlp"), mlp_in, config.out_channels, rng);
        let out_mlp = LinearParams::init(store, &format!("{name}.out_mlp"), 2 * config.out_channels, config.out_channels, rng);
        Ok(Self {
            config,
            in_channels,
            dgconv,
            adconv,
            dg_mlp,
            ad_mlp,
            out_mlp,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels
    }

    fn branch<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        input: Var,
        graphs: &FusionGraphs,
        annular: bool,
    ) -> Result<Var> {
        let mut maps = vec![input];
        for m in 0..self.config.dilation_rates.len() {
            let x = if self.config.dense_connections {
                tape.concat(&maps)?
            } else {
                *maps.last().unwrap()
            };
            let y = if annular {
                adconv_forward(tape, vars, x, &graphs.annular[m], &self.adconv[m])?
            } else {
                dgconv_forward(tape, vars, x, &graphs.dilated[m], &self.dgconv[m])?
            };
            maps.push(y);
        }
        let gathered = match self.config.aggregation {
            Aggregation::Concat => tape.concat(&maps)?,
            Aggregation::Add => {
                let mut acc = maps[1];
                for &y in &maps[2..] {
                    acc = tape.add(acc, y)?;
                }
                tape.concat(&[maps[0], acc])?
            }
        };
        let mlp = if annular { &self.ad_mlp } else { &self.dg_mlp };
        let h = mlp.forward(tape, vars, gathered)?;
        Ok(tape.relu(h))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &ParamVars, x: Var, graphs: &FusionGraphs) -> Result<Var> {
        dagfusion_forward(tape, vars, x, graphs, self)
    }
}

/// Dilated branch and annular branch, each a cascade over the configured
/// rates, fused as `MLP([F_dg, F_ad])`.
pub fn dagfusion_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    x: Var,
    graphs: &FusionGraphs,
    fusion: &DAGFusion,
) -> Result<Var> {
    let rates = &fusion.config.dilation_rates;
    if graphs.rates != *rates || graphs.dilated.len() != rates.len() || graphs.annular.len() != rates.len() {
        return Err(Error::invalid(format!(
            "fusion graphs cover rates {:?}, layer needs {:?}",
            graphs.rates, rates
        )));
    }
    let dg = fusion.branch(tape, vars, x, graphs, false)?;
    let ad = fusion.branch(tape, vars, x, graphs, true)?;
    let both = tape.concat(&[dg, ad])?;
    let out = fusion.out_mlp.forward(tape, vars, both)?;
    Ok(tape.relu(out))
}
