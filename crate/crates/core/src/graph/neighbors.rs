//! Plain, dilated (skip/take) and annular neighbor selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a neighbor list was selected from the sorted nearest neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    Dilated,
    Annular,
}

/// Fixed-width neighbor lists, one row of `k` point indices per center.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseNeighborhood {
    pub center_count: usize,
    pub k: usize,
    pub dilation: usize,
    pub step: usize,
    pub mode: NeighborMode,
    /// Row-major `[center_count × k]`.
    pub indices: Vec<usize>,
}

impl SparseNeighborhood {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k)
    }

    /// Checks shape and that every entry indexes one of `source_len` points.
    pub fn validate(&self, source_len: usize) -> Result<()> {
        if self.indices.len() != self.center_count * self.k {
            return Err(Error::shape(
                "neighborhood",
                format!("{} entries for {}×{}", self.indices.len(), self.center_count, self.k),
            ));
        }
        if let Some(&bad) = self.indices.iter().find(|&&j| j >= source_len) {
            return Err(Error::Index {
                op: "neighborhood",
                index: bad,
                len: source_len,
            });
        }
        Ok(())
    }
}

const PAR_QUERIES: usize = 256;

/// Sorted `k` nearest neighbors of every query, flattened `[M × k]`.
/// Distance ties resolve to the smaller index.
pub fn knn_search<T: Scalar>(points: &[[T; 3]], queries: &[[T; 3]], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::InsufficientPoints {
            needed: k,
            available: points.len(),
            context: format!("knn_search with k={k}"),
        });
    }
    let tree = KdTree::build(points);
    let row = |q: &[T; 3]| tree.nearest(q, k).into_iter().map(|c| c.index).collect::<Vec<_>>();
    let rows: Vec<Vec<usize>> = if queries.len() >= PAR_QUERIES {
        queries.par_iter().map(row).collect()
    } else {
        queries.iter().map(row).collect()
    };
    Ok(rows.concat())
}

/// Reference search without the tree; identical output to [`knn_search`].
pub fn knn_search_brute<T: Scalar>(points: &[[T; 3]], queries: &[[T; 3]], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::InsufficientPoints {
            needed: k,
            available: points.len(),
            context: "knn_search_brute".into(),
        });
    }
    Ok(queries
        .iter()
        .flat_map(|q| {
            super::kdtree::brute_force_nearest(points, q, k)
                .into_iter()
                .map(|c| c.index)
        })
        .collect())
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Size of the expansion region for `k` targets, sampling step `step` and
/// dilation `rate`:
/// `⌊k/Δ⌋·(r−1+Δ) + ⌈(k/Δ − ⌊k/Δ⌋)·(r−1+Δ)⌉`, evaluated in exact integers.
pub fn expansion_size(k: usize, step: usize, rate: usize) -> Result<usize> {
    check_positive("k", k)?;
    check_positive("step", step)?;
    check_positive("dilation rate", rate)?;
    let group = rate - 1 + step;
    let full = k / step;
    let rem = k % step;
    Ok(full * group + (rem * group).div_ceil(step))
}

/// 1-based sorted ranks kept by the skip/take pattern: in every group of
/// `r−1+Δ` consecutive ranks, skip the first `r−1` and keep the next `Δ`,
/// until `k` ranks are kept. The last kept rank is the smallest region that
/// holds `k` selected neighbors.
pub fn dilated_ranks(k: usize, step: usize, rate: usize) -> Result<Vec<usize>> {
    check_positive("k", k)?;
    check_positive("step", step)?;
    check_positive("dilation rate", rate)?;
    let group = rate - 1 + step;
    let mut ranks = Vec::with_capacity(k);
    let mut g = 0;
    while ranks.len() < k {
        let first = g * group + rate;
        let take = step.min(k - ranks.len());
        ranks.extend(first..first + take);
        g += 1;
    }
    Ok(ranks)
}

/// 1-based ranks of the outermost ring: `(n−1)k+1 ..= nk` with `n = (r−1)/k + 1`.
pub fn annular_ranks(k: usize, rate: usize) -> Result<Vec<usize>> {
    check_positive("k", k)?;
    check_positive("dilation rate", rate)?;
    if !(rate - 1).is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "annular dilation rate {rate} requires (r-1) divisible by k={k}"
        )));
    }
    let n = (rate - 1) / k + 1;
    Ok(((n - 1) * k + 1..=n * k).collect())
}

fn select_ranks<T: Scalar>(
    points: &[[T; 3]],
    queries: &[[T; 3]],
    ranks: &[usize],
    context: String,
) -> Result<Vec<usize>> {
    let region = *ranks.last().expect("nonempty ranks");
    if region > points.len() {
        return Err(Error::InsufficientPoints {
            needed: region,
            available: points.len(),
            context,
        });
    }
    let sorted = knn_search(points, queries, region)?;
    Ok(sorted
        .chunks(region)
        .flat_map(|row| ranks.iter().map(move |&r| row[r - 1]))
        .collect())
}

/// Dilated neighbor lists: the skip/take selection of [`dilated_ranks`]
/// over each query's sorted nearest neighbors.
pub fn sparse_knn<T: Scalar>(
    points: &[[T; 3]],
    queries: &[[T; 3]],
    k: usize,
    step: usize,
    rate: usize,
) -> Result<SparseNeighborhood> {
    let ranks = dilated_ranks(k, step, rate)?;
    let indices = select_ranks(
        points,
        queries,
        &ranks,
        format!("sparse_knn k={k} step={step} rate={rate}"),
    )?;
    Ok(SparseNeighborhood {
        center_count: queries.len(),
        k,
        dilation: rate,
        step,
        mode: NeighborMode::Dilated,
        indices,
    })
}

/// Annular neighbor lists: the outer ring of `k` neighbors of the
/// `((r−1)/k + 1)·k` nearest.
pub fn annular_knn<T: Scalar>(
    points: &[[T; 3]],
    queries: &[[T; 3]],
    k: usize,
    rate: usize,
) -> Result<SparseNeighborhood> {
    let ranks = annular_ranks(k, rate)?;
    let indices = select_ranks(points, queries, &ranks, format!("annular_knn k={k} rate={rate}"))?;
    Ok(SparseNeighborhood {
        center_count: queries.len(),
        k,
        dilation: rate,
        step: k,
        mode: NeighborMode::Annular,
        indices,
    })
}

/// Plain KNN graph wrapped as a neighborhood (dilation 1).
pub fn knn_graph<T: Scalar>(points: &[[T; 3]], queries: &[[T; 3]], k: usize) -> Result<SparseNeighborhood> {
    Ok(SparseNeighborhood {
        center_count: queries.len(),
        k,
        dilation: 1,
        step: k,
        mode: NeighborMode::Dilated,
        indices: knn_search(points, queries, k)?,
    })
}
