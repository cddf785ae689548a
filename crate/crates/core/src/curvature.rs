//! Discrete curvature of point clouds from angle deficits around k-NN rings,
//! and the hop-1/hop-2 distance-ordering check.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::graph::NeighborGraph;
use crate::tensor::{squared_distance, Matrix};

/// A vertex is treated as interior when its ring covers at least this share
/// of the full turn (see [`ring_span`]).
pub const SPAN_FRACTION: f64 = 0.9;
const ANGLE_TIE_TOL: f64 = 1e-12;

/// Angle at `b` between the rays to `a` and `c`, in `[0, π]`.
pub fn angle(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    let u: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let v: Vec<f64> = c.iter().zip(b).map(|(x, y)| x - y).collect();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(DlmeError::Degenerate("angle with a zero-length side".into()));
    }
    let cos = u.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / (nu * nv);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// A vertex with its neighbours ordered around it in a fitted tangent plane.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPatch {
    pub center: usize,
    pub ring: Vec<usize>,
    /// Polar angle of each ring member in the tangent plane, increasing in (−π, π].
    pub polar: Vec<f64>,
    pub basis: [Vec<f64>; 2],
}

impl LocalPatch {
    /// Angular coverage of the ring: `Σ min(g, 2π − g)` over the gaps `g`
    /// between cyclically consecutive members. Equals 2π unless one gap
    /// exceeds π, i.e. unless the neighbours all lie on one side.
    pub fn ring_span(&self) -> f64 {
        ring_span(&self.polar)
    }

    pub fn is_boundary(&self) -> bool {
        self.ring_span() < SPAN_FRACTION * 2.0 * PI
    }
}

fn ring_span(polar: &[f64]) -> f64 {
    let m = polar.len();
    (0..m)
        .map(|j| {
            let next = if j + 1 < m { polar[j + 1] } else { polar[0] + 2.0 * PI };
            let g = next - polar[j];
            g.min(2.0 * PI - g)
        })
        .sum()
}

/// Top-2 principal directions of the centred point set, as unit vectors with
/// their largest-magnitude coordinate positive.
fn tangent_basis(points: &[&[f64]]) -> Result<[Vec<f64>; 2]> {
    let m = points.len();
    let d = points[0].len();
    if d < 2 {
        return Err(DlmeError::Degenerate("need at least 2 ambient dimensions".into()));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (acc, v) in mean.iter_mut().zip(p.iter()) {
            *acc += v / m as f64;
        }
    }
    let centred = DMatrix::from_fn(m, d, |i, j| points[i][j] - mean[j]);
    // eigenvectors of the small m×m Gram matrix map to principal axes
    let gram = &centred * centred.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(DlmeError::Degenerate(
            "neighbourhood is rank-deficient (collinear points)".into(),
        ));
    }
    let mut basis: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    for (slot, &k) in basis.iter_mut().zip(&order[..2]) {
        let dir = centred.transpose() * eig.eigenvectors.column(k);
        *slot = dir.iter().copied().collect();
    }
    // Gram–Schmidt to clean up rounding, then fix signs canonically
    normalize(&mut basis[0]);
    let proj: f64 = basis[0].iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
    let b0 = basis[0].clone();
    for (v, u) in basis[1].iter_mut().zip(&b0) {
        *v -= proj * u;
    }
    normalize(&mut basis[1]);
    for b in &mut basis {
        let lead = b.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            b.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(basis)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Orders `neighbors` of `center` by polar angle in the plane of the first two
/// principal directions of the neighbourhood (centre included).
pub fn patch_from_neighbors(data: &Matrix, center: usize, neighbors: &[usize]) -> Result<LocalPatch> {
    if neighbors.len() < 3 {
        return Err(DlmeError::Degenerate(format!(
            "vertex {center} has {} neighbours, need at least 3",
            neighbors.len()
        )));
    }
    let mut pts: Vec<&[f64]> = neighbors.iter().map(|&j| data.row(j)).collect();
    pts.push(data.row(center));
    let basis = tangent_basis(&pts)?;
    let c = data.row(center);
    let mut ring: Vec<(f64, usize)> = neighbors
        .iter()
        .map(|&j| {
            let off: Vec<f64> = data.row(j).iter().zip(c).map(|(a, b)| a - b).collect();
            let u: f64 = off.iter().zip(&basis[0]).map(|(a, b)| a * b).sum();
            let v: f64 = off.iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
            let mut theta = v.atan2(u);
            if theta <= -PI {
                theta = PI;
            }
            (theta, j)
        })
        .collect();
    ring.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if ring.windows(2).any(|w| w[1].0 - w[0].0 <= ANGLE_TIE_TOL) {
        return Err(DlmeError::Degenerate(format!(
            "vertex {center}: two neighbours project to the same direction"
        )));
    }
    Ok(LocalPatch {
        center,
        polar: ring.iter().map(|r| r.0).collect(),
        ring: ring.into_iter().map(|r| r.1).collect(),
        basis,
    })
}

pub fn build_patch(data: &Matrix, graph: &NeighborGraph, i: usize) -> Result<LocalPatch> {
    if graph.n() != data.rows() || i >= data.rows() {
        return Err(DlmeError::dim(
            "build_patch",
            format!("vertex {i}, graph over {} points, data has {} rows", graph.n(), data.rows()),
        ));
    }
    patch_from_neighbors(data, i, graph.neighbors(i))
}

/// Angle deficit `2π − Σ θ(x_j, x_i, x_{j+1})` around the ring, wrapping at the end.
pub fn vertex_curvature(data: &Matrix, patch: &LocalPatch) -> Result<f64> {
    let m = patch.ring.len();
    if m < 3 {
        return Err(DlmeError::Degenerate("ring with fewer than 3 members".into()));
    }
    let c = data.row(patch.center);
    let mut total = 0.0;
    for j in 0..m {
        let a = data.row(patch.ring[j]);
        let b = data.row(patch.ring[(j + 1) % m]);
        total += angle(a, c, b)?;
    }
    Ok(2.0 * PI - total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    /// Mean of `|k|` over interior vertices (the flatness score).
    pub mean_abs_k: f64,
    /// Plain sum of `k` over interior vertices.
    pub signed_sum_k: f64,
    pub evaluated: usize,
    pub skipped_degenerate: usize,
    pub skipped_boundary: usize,
    /// Curvature per vertex; `None` where the vertex was skipped.
    #[serde(skip)]
    pub per_vertex: Vec<Option<f64>>,
}

/// Curvature of `data` over the neighbourhoods of `graph` (which may have been
/// built on a different representation of the same points).
pub fn mean_curvature(data: &Matrix, graph: &NeighborGraph) -> Result<CurvatureSummary> {
    if graph.n() != data.rows() {
        return Err(DlmeError::dim(
            "mean_curvature",
            format!("graph over {} points, data has {} rows", graph.n(), data.rows()),
        ));
    }
    let mut per_vertex = Vec::with_capacity(data.rows());
    let (mut degenerate, mut boundary) = (0, 0);
    for i in 0..data.rows() {
        let k = match build_patch(data, graph, i) {
            Ok(p) if p.is_boundary() => {
                boundary += 1;
                None
            }
            Ok(p) => match vertex_curvature(data, &p) {
                Ok(k) => Some(k),
                Err(DlmeError::Degenerate(_)) => {
                    degenerate += 1;
                    None
                }
                Err(e) => return Err(e),
            },
            Err(DlmeError::Degenerate(_)) => {
                degenerate += 1;
                None
            }
            Err(e) => return Err(e),
        };
        per_vertex.push(k);
    }
    let ks: Vec<f64> = per_vertex.iter().flatten().copied().collect();
    let mean_abs_k = if ks.is_empty() {
        0.0
    } else {
        ks.iter().map(|k| k.abs()).sum::<f64>() / ks.len() as f64
    };
    Ok(CurvatureSummary {
        mean_abs_k,
        signed_sum_k: ks.iter().sum(),
        evaluated: ks.len(),
        skipped_degenerate: degenerate,
        skipped_boundary: boundary,
        per_vertex,
    })
}

/// Neighbours of neighbours of `i`, excluding `i` and its own neighbours. Sorted.
pub fn hop2_set(graph: &NeighborGraph, i: usize) -> Vec<usize> {
    let h1 = graph.neighbors(i);
    let mut out: Vec<usize> = h1
        .iter()
        .flat_map(|&j| graph.neighbors(j).iter().copied())
        .filter(|&m| m != i && !h1.contains(&m))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hop12Report {
    pub satisfied: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub fraction: f64,
    #[serde(skip)]
    pub per_vertex: Vec<Option<bool>>,
}

/// Per vertex: is every hop-1 distance below every hop-2 distance?
/// Distances are measured in `data`, the space the graph was built on.
pub fn hop12_check(data: &Matrix, graph: &NeighborGraph) -> Result<Hop12Report> {
    if graph.n() != data.rows() {
        return Err(DlmeError::dim(
            "hop12_check",
            format!("graph over {} points, data has {} rows", graph.n(), data.rows()),
        ));
    }
    let mut per_vertex = Vec::with_capacity(graph.n());
    for i in 0..graph.n() {
        let h2 = hop2_set(graph, i);
        if h2.is_empty() {
            per_vertex.push(None);
            continue;
        }
        let xi = data.row(i);
        let max1 = graph
            .neighbors(i)
            .iter()
            .map(|&j| squared_distance(xi, data.row(j)))
            .fold(0.0, f64::max);
        let min2 = h2
            .iter()
            .map(|&j| squared_distance(xi, data.row(j)))
            .fold(f64::INFINITY, f64::min);
        per_vertex.push(Some(max1 < min2));
    }
    let evaluated = per_vertex.iter().flatten().count();
    let satisfied = per_vertex.iter().flatten().filter(|&&b| b).count();
    Ok(Hop12Report {
        satisfied,
        evaluated,
        skipped: per_vertex.len() - evaluated,
        fraction: if evaluated == 0 {
            0.0
        } else {
            satisfied as f64 / evaluated as f64
        },
        per_vertex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn;

    #[test]
    fn angle_cases() {
        let o = [0.0, 0.0];
        assert!((angle(&[1.0, 0.0], &o, &[0.0, 1.0]).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((angle(&[1.0, 0.0], &o, &[-2.0, 0.0]).unwrap() - PI).abs() < 1e-15);
        let h = 3f64.sqrt() / 2.0;
        assert!((angle(&[1.0, 0.0], &o, &[0.5, h]).unwrap() - PI / 3.0).abs() < 1e-15);
        assert!(angle(&o, &o, &[1.0, 0.0]).is_err());
    }

    fn hexagon(z: impl Fn(usize) -> f64) -> Matrix {
        let mut rows = vec![vec![0.0, 0.0, 0.0]];
        for j in 0..6 {
            let t = j as f64 * PI / 3.0;
            rows.push(vec![t.cos(), t.sin(), z(j)]);
        }
        Matrix::from_rows(&rows).unwrap()
    }

    /// Same cycle, allowing a shift of the start and a reversal of direction.
    fn same_cycle(a: &[usize], b: &[usize]) -> bool {
        let m = a.len();
        let rev: Vec<usize> = b.iter().rev().copied().collect();
        [b, &rev[..]]
            .iter()
            .any(|c| (0..m).any(|s| (0..m).all(|j| a[j] == c[(j + s) % m])))
    }

    #[test]
    fn hexagon_ring_is_cyclic_and_flat() {
        let data = hexagon(|_| 0.0);
        let p = patch_from_neighbors(&data, 0, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(same_cycle(&p.ring, &[1, 2, 3, 4, 5, 6]));
        assert!(vertex_curvature(&data, &p).unwrap().abs() < 1e-10);

        let q = patch_from_neighbors(&data, 0, &[4, 1, 6, 3, 2, 5]).unwrap();
        assert!(same_cycle(&p.ring, &q.ring));
    }

    #[test]
    fn cone_matches_closed_form() {
        let beta: f64 = 1.0;
        // ring points at unit distance from the apex, half-angle β from the axis
        let mut rows = vec![vec![0.0, 0.0, 0.0]];
        for j in 0..6 {
            let t = j as f64 * PI / 3.0;
            rows.push(vec![beta.sin() * t.cos(), beta.sin() * t.sin(), -beta.cos()]);
        }
        let data = Matrix::from_rows(&rows).unwrap();
        let p = patch_from_neighbors(&data, 0, &[1, 2, 3, 4, 5, 6]).unwrap();
        let k = vertex_curvature(&data, &p).unwrap();
        let expect =
            2.0 * PI - 6.0 * (beta.cos().powi(2) + beta.sin().powi(2) * (PI / 3.0).cos()).acos();
        assert!(expect > 0.0);
        assert!((k - expect).abs() < 1e-12);
    }

    #[test]
    fn saddle_has_negative_deficit() {
        let data = hexagon(|j| if j % 2 == 0 { 0.5 } else { -0.5 });
        let p = patch_from_neighbors(&data, 0, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(vertex_curvature(&data, &p).unwrap() < 0.0);
    }

    #[test]
    fn collinear_neighbourhood_is_degenerate() {
        let data = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(matches!(
            patch_from_neighbors(&data, 0, &[1, 2, 3]),
            Err(DlmeError::Degenerate(_))
        ));
    }

    #[test]
    fn boundary_span() {
        // neighbours confined to a half-plane
        let data = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.3], [0.0, 1.0], [-1.0, 0.3]]).unwrap();
        let p = patch_from_neighbors(&data, 0, &[1, 2, 3]).unwrap();
        assert!(p.is_boundary());
        let data = hexagon(|_| 0.0);
        let p = patch_from_neighbors(&data, 0, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!((p.ring_span() - 2.0 * PI).abs() < 1e-12);
        assert!(!p.is_boundary());
    }

    #[test]
    fn hop_sets_on_a_path() {
        let data = Matrix::from_vec(7, 1, (0..7).map(|i| i as f64).collect()).unwrap();
        let g = build_knn(&data, 2).unwrap();
        // 2-NN on a line: interior i has i−1, i+1
        assert_eq!(hop2_set(&g, 3), vec![1, 5]);
        let data = Matrix::from_vec(10, 1, (0..10).map(|i| i as f64).collect()).unwrap();
        let g = build_knn(&data, 1).unwrap();
        let rep = hop12_check(&data, &g).unwrap();
        assert!(rep.per_vertex.iter().flatten().all(|&b| b));
    }
}
