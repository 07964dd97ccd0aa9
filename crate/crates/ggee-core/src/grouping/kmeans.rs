//! Lloyd's k-means with k-means++ seeding and restarts, used to turn
//! per-subject coefficient estimates into initial group centers.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) struct KmeansFit {
    pub centers: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn nearest(point: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, the rest sampled with
/// probability proportional to the squared distance to the nearest chosen
/// center.
fn seed_centers(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(
    points: &[DVector<f64>],
    mut centers: Vec<DVector<f64>>,
    max_iter: usize,
) -> KmeansFit {
    let n = points.len();
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centers).0;
        }
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[labels[i]] += p;
            counts[labels[i]] += 1;
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centers[labels[a]]);
                        let db = sq_dist(&points[b], &centers[labels[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                moved = moved.max(sq_dist(&centers[c], &points[far]));
                centers[c] = points[far].clone();
                labels[far] = c;
            } else {
                let new = &sums[c] / counts[c] as f64;
                moved = moved.max(sq_dist(&centers[c], &new));
                centers[c] = new;
            }
        }
        if moved < 1e-24 {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(p, &centers).0;
    }
    let inertia = points
        .iter()
        .zip(labels.iter())
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    KmeansFit { centers, labels, inertia }
}

/// Best of `restarts` k-means++ runs (ties keep the earliest run).
pub(crate) fn kmeans(
    points: &[DVector<f64>],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> KmeansFit {
    let mut best: Option<KmeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, seed_centers(points, k, rng), max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}
