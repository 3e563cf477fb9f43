//! Empirical 1-Wasserstein distances with Euclidean ground cost.
//!
//! [`wasserstein_exact`] solves the equal-size uniform case as a linear
//! assignment problem. [`wasserstein_sliced`] averages closed-form 1-D
//! distances over seeded random directions and accepts unequal sizes.

use alloc::vec;
use alloc::vec::Vec;

use crate::disentangle::FeatureBundle;
use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::rng::DetRng;

/// Largest support size accepted by the exact solver.
pub const EXACT_MAX_POINTS: usize = 64;

/// Uniformly weighted point cloud.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalDistribution<'a> {
    support: &'a Matrix,
}

impl<'a> EmpiricalDistribution<'a> {
    pub fn new(support: &'a Matrix) -> Result<Self> {
        if support.rows() == 0 {
            bail!(Data, "empirical distribution needs at least one point");
        }
        if !support.is_finite() {
            bail!(Data, "empirical distribution has non-finite coordinates");
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &Matrix {
        self.support
    }

    pub fn len(&self) -> usize {
        self.support.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.support.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DistanceKind {
    Exact,
    Sliced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMethod {
    Exact,
    Sliced { n_projections: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub value: f64,
    pub method: DistanceKind,
    pub n_projections: Option<usize>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
/// potentials, O(n³)). Returns `assignment[row] = col` and the total cost.
pub fn solve_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        bail!(Dimension, "assignment needs a square cost matrix, got {}x{}", n, cost.cols());
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual column holding the row being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok((assignment, total))
}

/// Exact W₁ between two equal-size uniform clouds via optimal assignment.
pub fn wasserstein_exact(
    a: &EmpiricalDistribution<'_>,
    b: &EmpiricalDistribution<'_>,
) -> Result<DistanceReport> {
    if a.dim() != b.dim() {
        bail!(Dimension, "dimension {} vs {}", a.dim(), b.dim());
    }
    if a.len() != b.len() {
        bail!(
            Size,
            "exact solver needs equal sizes ({} vs {}); use the sliced estimator",
            a.len(),
            b.len()
        );
    }
    if a.len() > EXACT_MAX_POINTS {
        bail!(
            Size,
            "exact solver limited to {} points, got {}",
            EXACT_MAX_POINTS,
            a.len()
        );
    }
    let n = a.len();
    let cost = Matrix::from_fn(n, n, |i, j| euclid(a.support().row(i), b.support().row(j)));
    let (_, total) = solve_assignment(&cost)?;
    Ok(DistanceReport {
        value: total / n as f64,
        method: DistanceKind::Exact,
        n_projections: None,
    })
}

/// W₁ between two 1-D empirical distributions of possibly different sizes:
/// `∫₀¹ |F⁻¹(u) − G⁻¹(u)| du` evaluated on the merged quantile grid.
/// Both slices are sorted in place.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        return s / n as f64;
    }
    // Walk breakpoints i/n and j/m in exact integer arithmetic (scaled by n·m).
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0usize;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        total += (next - prev) as f64 * (a[i] - b[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total / (n * m) as f64
}

/// Seeded unit directions in `dim` dimensions.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = DetRng::new(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn project(m: &Matrix, dir: &[f64]) -> Vec<f64> {
    m.iter_rows()
        .map(|r| r.iter().zip(dir).map(|(x, d)| x * d).sum())
        .collect()
}

/// Sliced W₁: mean over `n_projections` seeded directions of the 1-D W₁ between
/// the projected clouds.
pub fn wasserstein_sliced(
    a: &EmpiricalDistribution<'_>,
    b: &EmpiricalDistribution<'_>,
    n_projections: usize,
    seed: u64,
) -> Result<DistanceReport> {
    if a.dim() == 0 || b.dim() == 0 {
        bail!(Config, "sliced distance needs features with at least one dimension");
    }
    if a.dim() != b.dim() {
        bail!(Dimension, "dimension {} vs {}", a.dim(), b.dim());
    }
    if n_projections == 0 {
        bail!(Config, "n_projections must be >= 1");
    }
    let dirs = random_directions(a.dim(), n_projections, seed);
    let mut total = 0.0;
    for dir in &dirs {
        let mut pa = project(a.support(), dir);
        let mut pb = project(b.support(), dir);
        total += wasserstein_1d(&mut pa, &mut pb);
    }
    Ok(DistanceReport {
        value: total / n_projections as f64,
        method: DistanceKind::Sliced,
        n_projections: Some(n_projections),
    })
}

pub fn distance(a: &Matrix, b: &Matrix, method: DistanceMethod) -> Result<DistanceReport> {
    let (a, b) = (EmpiricalDistribution::new(a)?, EmpiricalDistribution::new(b)?);
    match method {
        DistanceMethod::Exact => wasserstein_exact(&a, &b),
        DistanceMethod::Sliced {
            n_projections,
            seed,
        } => wasserstein_sliced(&a, &b, n_projections, seed),
    }
}

/// Symmetric matrix of distances between point clouds; the diagonal is zero and
/// only the upper triangle is computed.
pub fn pairwise_cloud_distances(clouds: &[&Matrix], method: DistanceMethod) -> Result<Matrix> {
    if clouds.len() < 2 {
        bail!(Config, "need at least two clouds, got {}", clouds.len());
    }
    let n = clouds.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(clouds[i], clouds[j], method)?.value;
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

/// Pairwise distances between the domain-specific feature clouds of `bundles`.
pub fn pairwise_domain_distances(
    bundles: &[FeatureBundle],
    method: DistanceMethod,
) -> Result<Matrix> {
    let clouds: Vec<&Matrix> = bundles.iter().map(|b| &b.f_ds).collect();
    pairwise_cloud_distances(&clouds, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn exact(a: &Matrix, b: &Matrix) -> f64 {
        distance(a, b, DistanceMethod::Exact).unwrap().value
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = cloud(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]]);
        assert_eq!(exact(&a, &a), 0.0);
        let s = distance(
            &a,
            &a,
            DistanceMethod::Sliced {
                n_projections: 16,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.n_projections, Some(16));
    }

    #[test]
    fn one_dimensional_sorted_matching() {
        let a = cloud(&[&[0.0], &[1.0]]);
        let b = cloud(&[&[3.0], &[2.0]]);
        assert!((exact(&a, &b) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes_rejected_by_exact() {
        let a = cloud(&[&[0.0], &[1.0]]);
        let b = cloud(&[&[0.0]]);
        assert!(matches!(
            distance(&a, &b, DistanceMethod::Exact),
            Err(crate::Error::Size(_))
        ));
    }

    #[test]
    fn oversize_rejected_by_exact() {
        let a = Matrix::zeros(EXACT_MAX_POINTS + 1, 1);
        assert!(matches!(
            distance(&a, &a, DistanceMethod::Exact),
            Err(crate::Error::Size(_))
        ));
    }

    #[test]
    fn one_d_unequal_sizes_quantile_grid() {
        // {0} vs {0, 1}: half the mass moves distance 1.
        assert!((wasserstein_1d(&mut [0.0], &mut [0.0, 1.0]) - 0.5).abs() < 1e-15);
        // {0,1,2} vs {0,3}: quantiles on [0,1/3,1/2,2/3,1]
        // |0-0|/3 + |1-0|/6 + |1-3|/6 + |2-3|/3 = 0 + 1/6 + 1/3 + 1/3 = 5/6
        let w = wasserstein_1d(&mut [2.0, 0.0, 1.0], &mut [3.0, 0.0]);
        assert!((w - 5.0 / 6.0).abs() < 1e-15, "{w}");
    }

    #[test]
    fn sliced_rejects_zero_dim_and_zero_projections() {
        let z = Matrix::zeros(3, 0);
        let ez = EmpiricalDistribution::new(&z).unwrap();
        assert!(matches!(
            wasserstein_sliced(&ez, &ez, 4, 0),
            Err(crate::Error::Config(_))
        ));
        let a = cloud(&[&[1.0]]);
        let ea = EmpiricalDistribution::new(&a).unwrap();
        assert!(wasserstein_sliced(&ea, &ea, 0, 0).is_err());
    }

    #[test]
    fn pairwise_matrix_is_symmetric_with_zero_diagonal() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = cloud(&[&[0.0, 2.0], &[1.0, 1.0]]);
        let c = cloud(&[&[3.0, 0.0], &[1.0, -1.0]]);
        let d = pairwise_cloud_distances(&[&a, &b, &c], DistanceMethod::Exact).unwrap();
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        assert!(pairwise_cloud_distances(&[&a], DistanceMethod::Exact).is_err());
    }
}
