//! One-dimensional k-means (k-means++ seeding, Lloyd iterations) and a
//! Gaussian mixture fit by EM, both used to cluster z into strata.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StratifyError;

pub const KMEANS_MAX_ITER: usize = 300;
pub const GMM_MAX_ITER: usize = 500;
/// Convergence threshold on the per-point mean log-likelihood.
pub const GMM_TOLERANCE: f64 = 1e-8;
/// Component variances never drop below this fraction of var(z).
pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Centers in ascending order; `labels` index into this.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// Components in ascending order of mean.
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Maximum-posterior component per point.
    pub labels: Vec<usize>,
    pub mean_log_likelihood: f64,
    pub iterations: usize,
}

fn check_distinct(values: &[f64], k: usize) -> Result<(), StratifyError> {
    if k == 0 {
        return Err(StratifyError::ZeroStrata);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < k {
        return Err(StratifyError::TooFewDistinct {
            distinct: sorted.len(),
            k,
        });
    }
    Ok(())
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centers.iter().enumerate() {
        let d = (x - c).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn wcss(values: &[f64], centers: &[f64], labels: &[usize]) -> f64 {
    values
        .iter()
        .zip(labels)
        .map(|(x, &l)| (x - centers[l]).powi(2))
        .sum()
}

fn kmeans_plus_plus(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.random_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let threshold = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // Fall back to the last point with positive weight if rounding
        // leaves the threshold unreached.
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            if acc >= threshold {
                pick = i;
                break;
            }
        }
        let c = values[pick];
        centers.push(c);
        for (slot, x) in d2.iter_mut().zip(values) {
            *slot = slot.min((x - c).powi(2));
        }
    }
    centers
}

/// Sorts centers ascending and rewrites labels to match.
fn relabel_ascending(centers: &mut Vec<f64>, labels: &mut [usize]) {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut rank = vec![0; centers.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    *centers = order.iter().map(|&j| centers[j]).collect();
    for l in labels.iter_mut() {
        *l = rank[*l];
    }
}

pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<KMeansFit, StratifyError> {
    check_distinct(values, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(values, k, &mut rng);
    let mut labels: Vec<usize> = values.iter().map(|&x| nearest(&centers, x)).collect();
    let mut trace = Vec::new();

    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in values.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        trace.push(wcss(values, &centers, &labels));

        let next: Vec<usize> = values.iter().map(|&x| nearest(&centers, x)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }

    relabel_ascending(&mut centers, &mut labels);
    Ok(KMeansFit {
        centers,
        labels,
        objective_trace: trace,
    })
}

/// E-step: fills `resp` (row-major, k per point) and returns the mean
/// log-likelihood.
fn e_step(values: &[f64], weights: &[f64], means: &[f64], vars: &[f64], resp: &mut [f64]) -> f64 {
    let k = weights.len();
    // log(w_j) - log(2 pi var_j) / 2, and 1 / (2 var_j).
    let offset: Vec<f64> = (0..k)
        .map(|j| {
            if weights[j] > 0.0 {
                weights[j].ln() - 0.5 * (2.0 * std::f64::consts::PI * vars[j]).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let scale: Vec<f64> = vars.iter().map(|v| 0.5 / v).collect();
    let mut ll = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            row[j] = offset[j] - (x - means[j]).powi(2) * scale[j];
            max = max.max(row[j]);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
        ll += max + sum.ln();
    }
    ll / values.len() as f64
}

pub fn gmm_1d(values: &[f64], k: usize, seed: u64) -> Result<GmmFit, StratifyError> {
    let init = kmeans_1d(values, k, seed)?;
    let n = values.len();
    let nf = n as f64;
    let mean_all = values.iter().sum::<f64>() / nf;
    let var_all = values.iter().map(|x| (x - mean_all).powi(2)).sum::<f64>() / nf;
    let floor = GMM_VARIANCE_FLOOR * var_all;

    let mut means = init.centers.clone();
    let mut weights = vec![0.0; k];
    let mut vars = vec![0.0; k];
    for (&x, &l) in values.iter().zip(&init.labels) {
        weights[l] += 1.0;
        vars[l] += (x - means[l]).powi(2);
    }
    for j in 0..k {
        vars[j] = if weights[j] > 0.0 { (vars[j] / weights[j]).max(floor) } else { var_all.max(floor) };
        weights[j] /= nf;
    }

    let mut resp = vec![0.0; n * k];
    let mut prev = e_step(values, &weights, &means, &vars, &mut resp);
    let mut iterations = 0;
    for _ in 0..GMM_MAX_ITER {
        iterations += 1;
        for j in 0..k {
            let mut nj = 0.0;
            let mut sx = 0.0;
            for (i, &x) in values.iter().enumerate() {
                let r = resp[i * k + j];
                nj += r;
                sx += r * x;
            }
            if nj <= f64::MIN_POSITIVE {
                // Dead component: keep its parameters, drop its weight.
                weights[j] = 0.0;
                continue;
            }
            let m = sx / nj;
            let sv: f64 = values
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * k + j] * (x - m).powi(2))
                .sum();
            means[j] = m;
            vars[j] = (sv / nj).max(floor);
            weights[j] = nj / nf;
        }
        let ll = e_step(values, &weights, &means, &vars, &mut resp);
        let converged = (ll - prev).abs() < GMM_TOLERANCE;
        prev = ll;
        if converged {
            break;
        }
    }

    let mut labels: Vec<usize> = (0..n)
        .map(|i| {
            let row = &resp[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let weights_sorted = order.iter().map(|&j| weights[j]).collect();
    let vars_sorted = order.iter().map(|&j| vars[j]).collect();
    relabel_ascending(&mut means, &mut labels);

    Ok(GmmFit {
        weights: weights_sorted,
        means,
        variances: vars_sorted,
        labels,
        mean_log_likelihood: prev,
        iterations,
    })
}
