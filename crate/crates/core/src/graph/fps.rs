use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kdtree::dist2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Starting index for a farthest-point run: 0 for seed 0, otherwise a
/// uniformly drawn point.
pub fn fps_start(n: usize, seed: u64) -> usize {
    if seed == 0 || n == 0 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
    }
}

/// Greedy max-min subset selection. Each pick maximizes the distance to
/// the already selected set; ties go to the smaller index.
pub fn farthest_point_sampling<T: Scalar>(points: &[[T; 3]], m: usize, seed: u64) -> Result<Vec<usize>> {
    farthest_point_sampling_from(points, m, fps_start(points.len(), seed))
}

pub fn farthest_point_sampling_from<T: Scalar>(points: &[[T; 3]], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::InsufficientPoints {
            needed: m,
            available: n,
            context: "farthest point sampling".into(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::Index {
            op: "farthest_point_sampling",
            index: start,
            len: n,
        });
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![T::infinity(); n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let c = points[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            let d = dist2(&points[i], &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !taken[i] && best.is_none_or(|b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        current = best.expect("m <= n leaves an untaken point");
    }
    Ok(selected)
}
