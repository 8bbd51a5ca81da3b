//! Local outlier factor over (patient, drug) points.
//!
//! Each prescribed drug becomes one point `[diagnosis multi-hot ‖ one-hot(drug)]`.
//! A drug whose point sits in a sparse region, i.e. few other patients
//! combine that drug with similar diagnoses, gets a high LOF.
//!
//! Neighborhoods follow the original definition: every point within the
//! k-distance is a neighbor, so ties can make a neighborhood larger than `k`.

use crate::corpus::Corpus;
use crate::detector::RankingTable;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};

/// Lower bound on the mean reachability distance, so duplicate points give
/// a large but finite density.
pub const LRD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LofConfig {
    pub k_nn: usize,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig { k_nn: 10 }
    }
}

struct Neighborhood {
    k_distance: f64,
    members: Vec<(usize, f64)>,
}

fn neighborhood<F>(p: usize, n: usize, k: usize, dist: &F) -> Neighborhood
where
    F: Fn(usize, usize) -> f64,
{
    let mut all: Vec<(usize, f64)> = (0..n).filter(|&q| q != p).map(|q| (q, dist(p, q))).collect();
    let (_, kth, _) = all.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1));
    let k_distance = kth.1;
    all.retain(|&(_, d)| d <= k_distance);
    all.sort_unstable_by_key(|&(q, _)| q);
    Neighborhood {
        k_distance,
        members: all,
    }
}

/// LOF of each of `n` points under an arbitrary symmetric distance.
pub fn lof_scores<F>(n: usize, k: usize, dist: F, mode: Parallelism) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "LOF needs 1 <= k_nn < number of points (k_nn = {k}, points = {n})"
        )));
    }
    let hoods = exec::map_range(n, mode, |p| neighborhood(p, n, k, &dist));
    let lrd = exec::map_range(n, mode, |p| {
        let h = &hoods[p];
        let reach: f64 = h
            .members
            .iter()
            .map(|&(o, d)| hoods[o].k_distance.max(d))
            .sum::<f64>()
            / h.members.len() as f64;
        1.0 / reach.max(LRD_EPSILON)
    });
    Ok(exec::map_range(n, mode, |p| {
        let h = &hoods[p];
        let mean: f64 = h.members.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / h.members.len() as f64;
        mean / lrd[p]
    }))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn lof_euclidean(points: &[Vec<f64>], k: usize, mode: Parallelism) -> Result<Vec<f64>> {
    lof_scores(points.len(), k, |i, j| euclidean(&points[i], &points[j]), mode)
}

struct PatientDrugPoint {
    patient: usize,
    drug: u32,
    diagnoses: Vec<u64>,
    diagnosis_count: u32,
}

/// Ranks each patient's drugs by negated LOF of their (patient, drug) point.
pub fn lof_rank(corpus: &Corpus, cfg: &LofConfig, mode: Parallelism) -> Result<Vec<RankingTable>> {
    let words = corpus.vocabulary.num_diseases().div_ceil(64).max(1);
    let mut points = Vec::new();
    for (pi, p) in corpus.patients.iter().enumerate() {
        let mut bits = vec![0u64; words];
        for d in &p.diagnoses {
            bits[d.index() / 64] |= 1 << (d.index() % 64);
        }
        for m in &p.prescriptions {
            points.push(PatientDrugPoint {
                patient: pi,
                drug: m.0,
                diagnoses: bits.clone(),
                diagnosis_count: p.diagnoses.len() as u32,
            });
        }
    }
    // Binary vectors: squared distance = |A| + |B| - 2|A ∩ B|, plus 2 for
    // differing drug one-hots.
    let dist = |i: usize, j: usize| {
        let a = &points[i];
        let b = &points[j];
        let shared: u32 = a
            .diagnoses
            .iter()
            .zip(&b.diagnoses)
            .map(|(x, y)| (x & y).count_ones())
            .sum();
        let mut sq = a.diagnosis_count + b.diagnosis_count - 2 * shared;
        if a.drug != b.drug {
            sq += 2;
        }
        f64::from(sq).sqrt()
    };
    let scores = lof_scores(points.len(), cfg.k_nn, dist, mode)?;
    let mut tables: Vec<RankingTable> = corpus
        .patients
        .iter()
        .map(|p| RankingTable {
            patient_id: p.patient_id.clone(),
            sum_rank: Default::default(),
            contexts_used: 1,
        })
        .collect();
    for (pt, lof) in points.iter().zip(scores) {
        tables[pt.patient]
            .sum_rank
            .insert(crate::corpus::DrugId(pt.drug), -lof);
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_must_be_below_point_count() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(lof_euclidean(&pts, 3, Parallelism::Sequential).is_err());
        assert!(lof_euclidean(&pts, 0, Parallelism::Sequential).is_err());
        assert!(lof_euclidean(&pts, 2, Parallelism::Sequential).is_ok());
    }

    #[test]
    fn known_four_point_example() {
        // Three close points and one far away, k = 2.
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.0], vec![1.0, 1.0]];
        let s = lof_euclidean(&pts, 2, Parallelism::Sequential).unwrap();
        assert!(s[2] > 1.5, "{s:?}");
        assert!((s[3] - 1.0).abs() < 0.2, "{s:?}");
    }

    #[test]
    fn grid_is_uniformly_dense() {
        // Wrap-around distance removes edge effects, so every point sees the
        // same neighborhood.
        let side = 10usize;
        let wrap = |a: usize, b: usize| {
            let d = a.abs_diff(b);
            d.min(side - d) as f64
        };
        let dist = |i: usize, j: usize| {
            let (dx, dy) = (wrap(i % side, j % side), wrap(i / side, j / side));
            (dx * dx + dy * dy).sqrt()
        };
        for k in [4, 8, 12] {
            let s = lof_scores(side * side, k, dist, Parallelism::Sequential).unwrap();
            for (i, v) in s.iter().enumerate() {
                assert!((v - 1.0).abs() <= 0.1, "k {k}, point {i}: {v}");
            }
        }
        // An open grid is close to uniform away from its border.
        let pts: Vec<Vec<f64>> = (0..side * side).map(|i| vec![(i % side) as f64, (i / side) as f64]).collect();
        let s = lof_euclidean(&pts, 4, Parallelism::Sequential).unwrap();
        for (i, v) in s.iter().enumerate() {
            let (x, y) = (i % side, i / side);
            if (2..side - 2).contains(&x) && (2..side - 2).contains(&y) {
                assert!((v - 1.0).abs() <= 0.1, "point {i}: {v}");
            }
        }
    }

    #[test]
    fn far_outlier_in_tight_cluster() {
        let mut pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1])
            .collect();
        pts.push(vec![5.0, 5.0]);
        let s = lof_euclidean(&pts, 5, Parallelism::Sequential).unwrap();
        assert!(s[20] > 1.5);
    }

    #[test]
    fn duplicates_stay_finite() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let s = lof_euclidean(&pts, 2, Parallelism::Sequential).unwrap();
        assert!(s.iter().all(|v| v.is_finite()), "{s:?}");
    }
}
