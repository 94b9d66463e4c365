#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rffs::tensor::{ParamStore, ParamVars};
use rffs::{Result, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, for near-zero gradients.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_points(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect()
}

/// `sum(x · R)` for a fixed random `R`, reducing any 2-D output to a scalar.
pub fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let c = tape.value(x).cols();
    let r = random_tensor(&mut rng(seed), vec![c, 3]);
    let r = tape.constant(r);
    let y = tape.matmul(x, r)?;
    Ok(tape.sum(y))
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates whose ±step perturbation changes a ReLU sign or a max
    /// winner; finite differences straddle a kink there.
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel < FD_TOLERANCE && self.skipped * 4 <= self.checked + self.skipped
    }

    pub fn assert_ok(&self, what: &str) {
        eprintln!("{what}: {} checked, {} skipped, max rel {:.2e}", self.checked, self.skipped, self.max_rel);
        assert!(self.passes(), "{what}: {self:?}");
    }
}

/// Compares reverse-mode gradients of a scalar function of `params` and
/// `inputs` with central differences.
pub fn check_gradients<F>(params: &mut ParamStore<f64>, inputs: &mut [Tensor<f64>], f: F) -> GradReport
where
    F: Fn(&mut Tape<f64>, &ParamVars, &[Var]) -> Result<Var>,
{
    let eval = |params: &ParamStore<f64>, inputs: &[Tensor<f64>], grad: bool| {
        let mut tape = Tape::new();
        let vars = if grad { params.bind(&mut tape) } else { params.bind_frozen(&mut tape) };
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let loss = f(&mut tape, &vars, &leaves).expect("forward");
        (tape, vars, leaves, loss)
    };
    let (tape, vars, leaves, loss) = eval(params, inputs, true);
    let base_pattern = tape.switch_pattern();
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .vars()
        .iter()
        .chain(&leaves)
        .map(|&v| grads.get(v).unwrap().to_vec())
        .collect();

    let mut report = GradReport::default();
    let np = params.len();
    for (slot, analytic) in analytic.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let at = |delta: f64, params: &mut ParamStore<f64>, inputs: &mut [Tensor<f64>]| {
                let cell = if slot < np {
                    let id = params.ids().nth(slot).unwrap();
                    &mut params.get_mut(id).data_mut()[i]
                } else {
                    &mut inputs[slot - np].data_mut()[i]
                };
                let orig = *cell;
                *cell = orig + delta;
                let (t, _, _, l) = eval(params, inputs, false);
                let value = t.value(l).data()[0];
                let pattern = t.switch_pattern();
                let cell = if slot < np {
                    let id = params.ids().nth(slot).unwrap();
                    &mut params.get_mut(id).data_mut()[i]
                } else {
                    &mut inputs[slot - np].data_mut()[i]
                };
                *cell = orig;
                (value, pattern)
            };
            let (fp, pp) = at(FD_STEP, params, inputs);
            let (fm, pm) = at(-FD_STEP, params, inputs);
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("slot {slot} index {i}: analytic {a}, numeric {numeric}");
            }
        }
    }
    report
}

use rffs::graph::HierarchyConfig;
use rffs::layers::DAGFusionConfig;
use rffs::model::ModelConfig;

/// A network small enough for finite differences: 64 points, levels
/// 64/32/16/8, 4-neighbor graphs and single-digit channel widths.
pub fn toy_model(num_classes: usize) -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        num_classes,
        hierarchy: HierarchyConfig {
            k: 4,
            ratios: vec![2, 2, 2],
            seed: 0,
        },
        encoder_channels: vec![4, 5, 6],
        fusion: DAGFusionConfig {
            dilation_rates: vec![1, 2],
            branch_channels: 3,
            dense_connections: true,
            aggregation: Default::default(),
            k: 2,
            step: 1,
            out_channels: 4,
        },
        decoder_channels: vec![3, 4, 4],
    }
}

pub fn toy_hierarchy_config() -> HierarchyConfig {
    HierarchyConfig {
        k: 4,
        ratios: vec![2, 2, 2],
        seed: 0,
    }
}
