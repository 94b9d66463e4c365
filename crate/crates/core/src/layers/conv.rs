//! Dilated and annular graph convolution.
//!
//! Per edge `(i, j)` the edge feature is `[x_i, x_j − x_i]`, mapped by a
//! shared linear layer and ReLU, then max-pooled over the neighbors of `i`.
//! Splitting the weight as `[W_c; W_r]` gives
//! `x_i·(W_c − W_r) + b + x_j·W_r`, a center term plus a neighbor term, so
//! the forward pass never materialises the `[N × K × 2C]` edge tensor.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NeighborMode, SparseNeighborhood};
use crate::scalar::Scalar;
use crate::tensor::{LinearParams, ParamStore, ParamVars, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct DGConvLayer {
    pub edge: LinearParams,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DGConvLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            edge: LinearParams::init(store, name, 2 * in_channels, out_channels, rng),
            in_channels,
            out_channels,
        }
    }

    fn check<T: Scalar>(&self, tape: &Tape<T>, x: Var, graph: &SparseNeighborhood) -> Result<()> {
        let t = tape.value(x);
        if t.shape().len() != 2 || t.cols() != self.in_channels {
            return Err(Error::shape(
                "graph conv",
                format!("features {:?}, layer expects {} channels", t.shape(), self.in_channels),
            ));
        }
        if graph.center_count != t.rows() {
            return Err(Error::shape(
                "graph conv",
                format!("graph has {} centers, features have {} rows", graph.center_count, t.rows()),
            ));
        }
        graph.validate(t.rows())
    }

    /// Fused forward over any neighborhood.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        x: Var,
        graph: &SparseNeighborhood,
    ) -> Result<Var> {
        self.check(tape, x, graph)?;
        let c = self.in_channels;
        let w = vars.var(self.edge.weight);
        let w_center = tape.slice_rows(w, 0, c)?;
        let w_rel = tape.slice_rows(w, c, 2 * c)?;
        let w_self = tape.sub(w_center, w_rel)?;
        let center = tape.linear(x, w_self, vars.var(self.edge.bias))?;
        let nbr = tape.matmul(x, w_rel)?;
        let pooled = tape.gather_max(center, nbr, Arc::new(graph.indices.clone()), graph.k)?;
        Ok(tape.relu(pooled))
    }

    /// Unfused forward built from gather, concat, linear, relu and
    /// max-over-neighbors. Numerically equivalent to [`forward`](Self::forward).
    pub fn forward_reference<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        x: Var,
        graph: &SparseNeighborhood,
    ) -> Result<Var> {
        self.check(tape, x, graph)?;
        let (n, k) = (graph.center_count, graph.k);
        let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let xi = tape.gather_neighbors(x, Arc::new(centers), k)?;
        let xj = tape.gather_neighbors(x, Arc::new(graph.indices.clone()), k)?;
        let rel = tape.sub(xj, xi)?;
        let edge = tape.concat(&[xi, rel])?;
        let mapped = self.edge.forward(tape, vars, edge)?;
        let act = tape.relu(mapped);
        Ok(tape.max_over_neighbors(act)?.0)
    }
}

/// Dilated graph convolution over a Sparse-KNN neighborhood.
pub fn dgconv_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    x: Var,
    graph: &SparseNeighborhood,
    layer: &DGConvLayer,
) -> Result<Var> {
    if graph.mode != NeighborMode::Dilated {
        return Err(Error::invalid("dgconv expects a dilated neighborhood"));
    }
    layer.forward(tape, vars, x, graph)
}

/// Annular dilated convolution: the same edge map over a ring neighborhood.
pub fn adconv_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    x: Var,
    graph: &SparseNeighborhood,
    layer: &DGConvLayer,
) -> Result<Var> {
    if graph.mode != NeighborMode::Annular {
        return Err(Error::invalid("adconv expects an annular neighborhood"));
    }
    layer.forward(tape, vars, x, graph)
}
