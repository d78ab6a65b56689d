//! Exact optimal transport between equal-size uniform empirical measures.
//!
//! With uniform weights on both sides an optimal coupling can be taken to be
//! a permutation, so the transport cost reduces to a linear assignment
//! problem solved here with the shortest-augmenting-path Hungarian method.

use crate::error::{Error, Result};

/// `n` points in `dim` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    points: Vec<f64>,
}

impl SampleCloud {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::EmptyPointSet);
        }
        Ok(Self { dim, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }
}

fn check_pair(a: &SampleCloud, b: &SampleCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    Ok(())
}

/// Optimal transport cost under `‖x − y‖²`, normalized by the sample count.
pub fn ot_cost(a: &SampleCloud, b: &SampleCloud) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let p = a.point(i);
        for j in 0..n {
            cost[i * n + j] = p
                .iter()
                .zip(b.point(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    }
    let (_, total) = solve_assignment(&cost, n);
    Ok((total / n as f64).max(0.0))
}

/// 1-D transport cost under `|x − y|`: mean gap between sorted samples.
pub fn w1_1d_abs(a: &SampleCloud, b: &SampleCloud) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim != 1 {
        return Err(Error::DimMismatch {
            expected: 1,
            got: a.dim,
        });
    }
    let mut x = a.points.clone();
    let mut y = b.points.clone();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64)
}

/// Minimum-cost perfect matching on a dense `n × n` row-major cost matrix.
///
/// Returns `assignment[row] = column` and the total cost. O(n³).
pub fn solve_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> SampleCloud {
        SampleCloud::new(dim, (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn brute_force(a: &SampleCloud, b: &SampleCloud) -> f64 {
        fn rec(a: &SampleCloud, b: &SampleCloud, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            let n = a.len();
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    let c: f64 = a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                    rec(a, b, i + 1, used, acc + c, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(a, b, 0, &mut vec![false; a.len()], 0.0, &mut best);
        best / a.len() as f64
    }

    #[test]
    fn identical_clouds_cost_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(2, 12, &mut rng);
        assert_eq!(ot_cost(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn singleton_pair() {
        let a = SampleCloud::new(2, vec![0.0, 0.0]).unwrap();
        let b = SampleCloud::new(2, vec![1.0, 0.0]).unwrap();
        assert_eq!(ot_cost(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn six_points_match_all_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(2, 6, &mut rng);
        let b = cloud(2, 6, &mut rng);
        assert!((ot_cost(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch() {
        let a = SampleCloud::new(1, vec![0.0, 1.0]).unwrap();
        let b = SampleCloud::new(1, vec![0.0]).unwrap();
        assert!(matches!(ot_cost(&a, &b), Err(Error::SizeMismatch(2, 1))));
        assert!(matches!(w1_1d_abs(&a, &b), Err(Error::SizeMismatch(2, 1))));
    }

    #[test]
    fn sorted_1d_examples() {
        let a = SampleCloud::new(1, vec![0.0, 1.0]).unwrap();
        let b = SampleCloud::new(1, vec![1.0, 2.0]).unwrap();
        assert_eq!(w1_1d_abs(&a, &a).unwrap(), 0.0);
        assert_eq!(w1_1d_abs(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn sorted_1d_agrees_with_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(1, 50, &mut rng);
        let b = cloud(1, 50, &mut rng);
        let mut cost = vec![0.0; 2500];
        for i in 0..50 {
            for j in 0..50 {
                cost[i * 50 + j] = (a.point(i)[0] - b.point(j)[0]).abs();
            }
        }
        let (assign, total) = solve_assignment(&cost, 50);
        let mut seen = assign.clone();
        seen.sort();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        assert!((total / 50.0 - w1_1d_abs(&a, &b).unwrap()).abs() < 1e-10);
    }
}
