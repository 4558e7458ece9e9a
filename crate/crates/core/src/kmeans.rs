//! Lloyd's k-means with k-means++ seeding, and the prototype initializers
//! built on it.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::seed;
use crate::store::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    /// Index of the nearest center for every input point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances of points to their assigned centers.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, in order.
    pub inertia_history: Vec<f64>,
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>], assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (a, p) in assignment.iter_mut().zip(points) {
        let (j, d) = nearest(p, centers);
        *a = j;
        inertia += d;
    }
    inertia
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding leaving us on an already-chosen point
            if d2[pick] == 0.0 {
                pick = d2
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = points[next].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn distinct_points(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    points
        .iter()
        .filter(|p| seen.insert(p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>()))
        .cloned()
        .collect()
}

/// Moves the farthest point of the largest cluster into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centers: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        if counts[largest] < 2 {
            return;
        }
        let far = (0..points.len())
            .filter(|&i| assignment[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centers[largest])
                    .total_cmp(&sq_dist(&points[b], &centers[largest]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        centers[empty] = points[far].clone();
        assignment[far] = empty;
    }
}

/// Lloyd iterations from a seeded k-means++ start.
///
/// If the input has fewer distinct points than `k`, the distinct points are
/// returned as centers (so fewer than `k` centers) and a warning is logged.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, cfg: KMeansConfig) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Data("k-means on empty input".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::Data(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dim("k-means point", dim, p.len()));
    }

    let mut assignment = vec![0; points.len()];
    let distinct = distinct_points(points);
    if distinct.len() < k {
        log::warn!(
            "only {} distinct points for k={k}; using them as centers",
            distinct.len()
        );
        let inertia = assign(points, &distinct, &mut assignment);
        return Ok(KMeansResult {
            centers: distinct,
            assignment,
            inertia,
            iterations: 0,
            inertia_history: vec![inertia],
        });
    }

    let mut rng = seed::rng(seed, seed::stream::KMEANS);
    let mut centers = kmeans_pp(points, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        history.push(assign(points, &centers, &mut assignment));
        repair_empty(points, &mut centers, &mut assignment);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centers[j]).sqrt());
            centers[j] = mean;
        }
        if shift < cfg.tol {
            break;
        }
    }
    let inertia = assign(points, &centers, &mut assignment);
    history.push(inertia);

    Ok(KMeansResult {
        centers,
        assignment,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// k-means per sarcasm class over `e_ct`. Returns `2 * k_per_class`
/// prototypes tagged with their class, class 0 first.
pub fn init_semantic_prototypes(
    ds: &Dataset,
    k_per_class: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<Vec<(Vec<f64>, u8)>> {
    let mut out = Vec::with_capacity(2 * k_per_class);
    for class in 0..2u8 {
        let points: Vec<Vec<f64>> = ds
            .records
            .iter()
            .filter(|r| r.y == class)
            .map(|r| r.e_ct.clone())
            .collect();
        if points.len() < k_per_class.max(1) {
            return Err(Error::Data(format!(
                "class y={class} has {} records, need at least {k_per_class} for semantic prototypes",
                points.len()
            )));
        }
        let res = kmeans(&points, k_per_class, seed::child(seed, class as u64), cfg)?;
        out.extend(res.centers.into_iter().map(|c| (c, class)));
    }
    Ok(out)
}

/// k-means per polarity over `e_st_full` of non-sarcastic records. Returns
/// `2 * k_per_polarity` prototypes tagged with their polarity, negative first.
pub fn init_sentiment_prototypes(
    ds: &Dataset,
    k_per_polarity: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<Vec<(Vec<f64>, u8)>> {
    let non_sarcastic: Vec<_> = ds.records.iter().filter(|r| r.y == 0).collect();
    if let Some(r) = non_sarcastic.iter().find(|r| r.e_st_full.is_none()) {
        return Err(Error::Data(format!(
            "record {:?} lacks e_st_full, required for sentiment prototype initialization",
            r.id
        )));
    }
    let mut out = Vec::with_capacity(2 * k_per_polarity);
    for polarity in 0..2u8 {
        let points: Vec<Vec<f64>> = non_sarcastic
            .iter()
            .filter(|r| r.z_full == polarity)
            .filter_map(|r| r.e_st_full.clone())
            .collect();
        if points.len() < k_per_polarity.max(1) {
            return Err(Error::Data(format!(
                "non-sarcastic records with z_full={polarity}: {} found, need at least {k_per_polarity}",
                points.len()
            )));
        }
        let res = kmeans(
            &points,
            k_per_polarity,
            seed::child(seed, 16 + polarity as u64),
            cfg,
        )?;
        out.extend(res.centers.into_iter().map(|c| (c, polarity)));
    }
    Ok(out)
}
