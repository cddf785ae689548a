//! k-NN graphs, neighbour-mixing augmentation and paired minibatches.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::tensor::{squared_distance, Matrix};

/// Exact k-nearest-neighbour table. Row `i` lists the `k` closest other points
/// in nondecreasing distance, ties going to the lower index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    indices: Vec<usize>,
    dists: Vec<f64>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }
}

/// Brute-force Euclidean k-NN over the rows of `data`.
pub fn build_knn(data: &Matrix, k: usize) -> Result<NeighborGraph> {
    let n = data.rows();
    if k == 0 || k >= n {
        return Err(DlmeError::Contract(format!(
            "k-NN needs 0 < k < n, got k = {k} with n = {n}"
        )));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        let xi = data.row(i);
        row.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(xi, data.row(j)), j)),
        );
        // (distance, index) order gives the lower-index tie rule for free
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        row.select_nth_unstable_by(k - 1, cmp);
        let head = &mut row[..k];
        head.sort_unstable_by(cmp);
        for &(sq, j) in head.iter() {
            indices.push(j);
            dists.push(sq.sqrt());
        }
    }
    Ok(NeighborGraph {
        n,
        k,
        indices,
        dists,
    })
}

/// Interval `[lo, hi] ⊂ [0, 1]` from which mixing weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixRange {
    pub lo: f64,
    pub hi: f64,
}

impl MixRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = MixRange { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo <= self.hi && self.hi <= 1.0) {
            return Err(DlmeError::Config(format!(
                "mixing range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl Default for MixRange {
    fn default() -> Self {
        MixRange { lo: 0.5, hi: 1.0 }
    }
}

/// `r·x_i + (1 − r)·x_n` for a uniformly chosen neighbour `x_n` of point `i`
/// and `r` uniform in `range`.
pub fn augment_lc<R: Rng + ?Sized>(
    data: &Matrix,
    graph: &NeighborGraph,
    i: usize,
    rng: &mut R,
    range: MixRange,
) -> Vec<f64> {
    let mut out = vec![0.0; data.cols()];
    augment_into(data, graph, i, rng, range, &mut out);
    out
}

fn augment_into<R: Rng + ?Sized>(
    data: &Matrix,
    graph: &NeighborGraph,
    i: usize,
    rng: &mut R,
    range: MixRange,
    out: &mut [f64],
) {
    let nb = graph.neighbors(i)[rng.random_range(0..graph.k())];
    let r = rng.random_range(range.lo..=range.hi);
    for ((o, &x), &xn) in out.iter_mut().zip(data.row(i)).zip(data.row(nb)) {
        *o = r * x + (1.0 - r) * xn;
    }
}

/// Two augmented views per anchor. Rows `2a` and `2a + 1` of `views` come from
/// `origin_ids[a]`; `homology` marks exactly those pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub origin_ids: Vec<usize>,
    pub views: Matrix,
    pub homology: Matrix,
}

/// Homology matrix for `b` anchors laid out as consecutive view pairs.
pub fn pair_homology(b: usize) -> Matrix {
    let mut a = Matrix::zeros(2 * b, 2 * b);
    for p in 0..b {
        a[(2 * p, 2 * p + 1)] = 1.0;
        a[(2 * p + 1, 2 * p)] = 1.0;
    }
    a
}

/// Builds a batch from a given list of (distinct) anchors.
pub fn pair_batch_from_anchors<R: Rng + ?Sized>(
    data: &Matrix,
    graph: &NeighborGraph,
    anchors: &[usize],
    rng: &mut R,
    range: MixRange,
) -> PairBatch {
    let d = data.cols();
    let mut views = Matrix::zeros(2 * anchors.len(), d);
    for (a, &i) in anchors.iter().enumerate() {
        for v in 0..2 {
            augment_into(data, graph, i, rng, range, views.row_mut(2 * a + v));
        }
    }
    PairBatch {
        origin_ids: anchors.to_vec(),
        views,
        homology: pair_homology(anchors.len()),
    }
}

/// Samples `b` distinct anchors and augments each twice.
pub fn sample_pair_batch<R: Rng + ?Sized>(
    data: &Matrix,
    graph: &NeighborGraph,
    b: usize,
    rng: &mut R,
    range: MixRange,
) -> Result<PairBatch> {
    let n = data.rows();
    if b == 0 || b > n {
        return Err(DlmeError::Contract(format!(
            "batch size must lie in 1..={n}, got {b}"
        )));
    }
    if graph.n() != n {
        return Err(DlmeError::dim(
            "sample_pair_batch",
            format!("graph over {} points, data has {n} rows", graph.n()),
        ));
    }
    let anchors = index::sample(rng, n, b).into_vec();
    Ok(pair_batch_from_anchors(data, graph, &anchors, rng, range))
}
