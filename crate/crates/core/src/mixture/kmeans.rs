//! Seeded k-means used to seed EM from per-patient summary vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gp::ObservationBlock;

const LLOYD_ITERS: usize = 100;

/// Per-stream mean and population std of one block; absent streams give zeros.
pub fn summary_vector(block: &ObservationBlock, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut count = vec![0usize; dim];
    for (&(d, _), &v) in block.index.iter().zip(&block.values) {
        sum[d] += v;
        sq[d] += v * v;
        count[d] += 1;
    }
    let mut out = Vec::with_capacity(2 * dim);
    for d in 0..dim {
        if count[d] == 0 {
            out.extend([0.0, 0.0]);
        } else {
            let m = sum[d] / count[d] as f64;
            out.push(m);
            out.push((sq[d] / count[d] as f64 - m * m).max(0.0).sqrt());
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-`restarts` k-means++ / Lloyd clustering. Columns are standardized
/// first. Returns one cluster label per point; every cluster is non-empty when
/// `points.len() >= k`.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if k <= 1 || n == 0 {
        return vec![0; n];
    }
    let dim = points[0].len();
    let mut scaled = points.to_vec();
    for j in 0..dim {
        let m = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let s = (points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        for p in &mut scaled {
            p[j] = if s > 0.0 { (p[j] - m) / s } else { 0.0 };
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = lloyd(&scaled, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = points.len();
    let dim = points[0].len();
    // k-means++ seeding
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, dist2(p, ctr)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..dim {
                sums[l][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[labels[a]]).total_cmp(&dist2(&points[b], &centers[labels[b]]))
                    })
                    .expect("non-empty");
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    // duplicated points can leave a cluster empty after the last reassignment;
    // hand it the worst-fitting point of a cluster that can spare one
    if n >= k {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let donor = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[labels[a]]).total_cmp(&dist2(&points[b], &centers[labels[b]]))
                    })
                    .expect("some cluster holds two points");
                counts[labels[donor]] -= 1;
                labels[donor] = c;
                counts[c] = 1;
                centers[c] = points[donor].clone();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centers[l])).sum();
    (inertia, labels)
}
