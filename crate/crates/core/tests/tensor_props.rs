mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rffs::model::{prepare_block, Network};
use rffs::tensor::{LossReduction, ParamStore};
use rffs::train::{mrfa_loss, LossWeights};
use rffs::{Tape, Tensor};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Tensor<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

proptest! {
    #[test]
    fn concat_then_slice_recovers_inputs(a in matrix(3..4, 1..5), b in matrix(3..4, 1..5), c in matrix(3..4, 1..5)) {
        let mut tape = Tape::new();
        let vs: Vec<_> = [&a, &b, &c].iter().map(|t| tape.constant((*t).clone())).collect();
        let cat = tape.concat(&vs).unwrap();
        let mut start = 0;
        for t in [&a, &b, &c] {
            let s = tape.slice_cols(cat, start, start + t.cols()).unwrap();
            prop_assert_eq!(tape.value(s), t);
            start += t.cols();
        }
    }

    #[test]
    fn max_is_invariant_to_neighbor_permutation(
        data in prop::collection::vec(-5.0f64..5.0, 4 * 5 * 3),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (n, k, c) = (4, 5, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![n, k, c], data.clone()).unwrap());
        let (a, _) = tape.max_over_neighbors(x).unwrap();
        let mut r = rng(seed);
        let mut shuffled = Vec::with_capacity(data.len());
        for i in 0..n {
            let mut slots: Vec<usize> = (0..k).collect();
            slots.shuffle(&mut r);
            for j in slots {
                shuffled.extend_from_slice(&data[(i * k + j) * c..(i * k + j + 1) * c]);
            }
        }
        let y = tape.constant(Tensor::new(vec![n, k, c], shuffled).unwrap());
        let (b, _) = tape.max_over_neighbors(y).unwrap();
        prop_assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn gather_max_equals_materialised_max(
        center in matrix(5..6, 3..4),
        source in matrix(7..8, 3..4),
        idx in prop::collection::vec(0usize..7, 5 * 4),
    ) {
        let mut tape = Tape::new();
        let c = tape.constant(center);
        let s = tape.constant(source);
        let idx = Arc::new(idx);
        let fused = tape.gather_max(c, s, idx.clone(), 4).unwrap();
        let centers = Arc::new((0..5).flat_map(|i| [i; 4]).collect::<Vec<_>>());
        let ci = tape.gather_neighbors(c, centers, 4).unwrap();
        let sj = tape.gather_neighbors(s, idx, 4).unwrap();
        let e = tape.add(ci, sj).unwrap();
        let (m, _) = tape.max_over_neighbors(e).unwrap();
        prop_assert_eq!(tape.value(fused), tape.value(m));
    }

    #[test]
    fn matmul_agrees_with_naive(a in matrix(1..40, 1..30), seed in any::<u64>()) {
        let b = random_tensor(&mut rng(seed), vec![a.cols(), 17]);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let y = tape.matmul(va, vb).unwrap();
        for i in 0..a.rows() {
            for j in 0..17 {
                let want: f64 = (0..a.cols()).map(|k| a.row(i)[k] * b.row(k)[j]).sum();
                prop_assert!((tape.value(y).row(i)[j] - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut r = rng(40);
    let cfg = toy_model(3);
    let pts = random_points(&mut r, 64);
    let labels: Vec<usize> = (0..64).map(|_| r.random_range(0..3)).collect();
    let block = prepare_block(&pts, None, Some(&labels), &cfg).unwrap();
    let mut store = ParamStore::<f64>::new();
    let net = Network::new(cfg, &mut store, 2).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let logits = net.forward(&mut tape, &vars, &block).unwrap();
        let loss = mrfa_loss(&mut tape, &logits, &block.labels().unwrap(), &LossWeights::default(), LossReduction::Mean)
            .unwrap();
        let g = tape.backward(loss.total).unwrap();
        vars.vars()
            .iter()
            .flat_map(|&v| g.get(v).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn relu_gradient_at_mixed_signs() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), true);
    let y = tape.relu(x);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::zeros(vec![2, 2]), true);
    assert!(tape.backward(x).is_err());
}
