use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossError, LossObservation};
use crate::class::LossClass;
use crate::seed::mix64;

/// Fewest values accepted by [`fit_quantizer`].
pub const MIN_FIT_VALUES: usize = 50;

/// Two-parameter Box-Cox transform `((y + shift)^lambda - 1) / lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    pub lambda: f64,
    pub shift: f64,
}

const MIN_SHIFTED: f64 = 1e-12;

impl BoxCox {
    pub fn transform(&self, y: f64) -> f64 {
        // Values below the fit domain are clamped, which keeps the map monotone.
        let z = (y + self.shift).max(MIN_SHIFTED);
        if self.lambda.abs() < 1e-12 {
            z.ln()
        } else {
            (z.powf(self.lambda) - 1.0) / self.lambda
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        let z = if self.lambda.abs() < 1e-12 {
            t.exp()
        } else {
            (self.lambda * t + 1.0).max(0.0).powf(1.0 / self.lambda)
        };
        z - self.shift
    }
}

fn box_cox_log_likelihood(lambda: f64, shifted: &[f64], sum_log: f64) -> f64 {
    let n = shifted.len() as f64;
    let bc = BoxCox { lambda, shift: 0.0 };
    let t: Vec<f64> = shifted.iter().map(|&z| bc.transform(z)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

/// Profile-likelihood fit of lambda on the grid -2.00, -1.99, ..., 2.00 with
/// shift `1 - min(y)`, so every shifted value is at least 1.
pub fn fit_box_cox(values: &[f64]) -> BoxCox {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;
    let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
    let sum_log: f64 = shifted.iter().map(|z| z.ln()).sum();
    let mut best = (f64::NEG_INFINITY, 1.0);
    for step in 0..=400 {
        let lambda = -2.0 + step as f64 * 0.01;
        let ll = box_cox_log_likelihood(lambda, &shifted, sum_log);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    BoxCox {
        lambda: best.1,
        shift,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans1d {
    /// Strictly increasing.
    pub centers: Vec<f64>,
    /// Cluster index per input value (index into `centers`).
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

/// Nearest center; exact midpoints go to the higher center.
fn nearest_center(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centers.iter().enumerate() {
        let d = (x - c).abs();
        if d <= best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn kmeans_plus_plus(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = values.len();
    let mut centers = vec![values[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
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
            values[pick]
        } else {
            values[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

fn lloyd(values: &[f64], mut centers: Vec<f64>, max_iter: usize) -> Option<KMeans1d> {
    let k = centers.len();
    centers.sort_by(f64::total_cmp);
    let mut assignments = vec![usize::MAX; values.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, &v) in assignments.iter_mut().zip(values) {
            let j = nearest_center(&centers, v);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&a, &v) in assignments.iter().zip(values) {
            sums[a] += v;
            counts[a] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        for j in 0..k {
            centers[j] = sums[j] / counts[j] as f64;
        }
        if !changed {
            break;
        }
    }
    if centers.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    let inertia = assignments
        .iter()
        .zip(values)
        .map(|(&a, &v)| (v - centers[a]).powi(2))
        .sum();
    Some(KMeans1d {
        centers,
        assignments,
        inertia,
    })
}

/// Lloyd's k-means on scalars with k-means++ seeding; the lowest-inertia
/// restart wins. Restarts that end with an empty cluster are discarded.
pub fn kmeans_1d(
    values: &[f64],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KMeans1d, LossError> {
    if k == 0 || values.len() < k {
        return Err(LossError::InsufficientData {
            need: k.max(1),
            got: values.len(),
        });
    }
    let mut best: Option<KMeans1d> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(r as u64 + 1)));
        let init = kmeans_plus_plus(values, k, &mut rng);
        if let Some(fit) = lloyd(values, init, 300) {
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(LossError::DegenerateCluster { k })
}

/// Mean silhouette of a 1-D clustering in O(n log n) using sorted prefix sums.
/// Points in singleton clusters score zero.
pub fn silhouette_1d(values: &[f64], assignments: &[usize], k: usize) -> f64 {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&a, &v) in assignments.iter().zip(values) {
        members[a].push(v);
    }
    let prefix: Vec<(Vec<f64>, Vec<f64>)> = members
        .iter_mut()
        .map(|m| {
            m.sort_by(f64::total_cmp);
            let mut p = Vec::with_capacity(m.len() + 1);
            p.push(0.0);
            for &v in m.iter() {
                p.push(p.last().copied().unwrap_or(0.0) + v);
            }
            (m.clone(), p)
        })
        .collect();
    // Sum of |x - v| over a sorted cluster.
    let abs_sum = |c: usize, x: f64| -> f64 {
        let (sorted, p) = &prefix[c];
        let n = sorted.len();
        let below = sorted.partition_point(|&v| v <= x);
        let lo = x * below as f64 - p[below];
        let hi = (p[n] - p[below]) - x * (n - below) as f64;
        lo + hi
    };
    let mut total = 0.0;
    for (&a, &x) in assignments.iter().zip(values) {
        let n_own = members[a].len();
        if n_own <= 1 {
            continue;
        }
        let a_i = abs_sum(a, x) / (n_own - 1) as f64;
        let b_i = (0..k)
            .filter(|&c| c != a && !members[c].is_empty())
            .map(|c| abs_sum(c, x) / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a_i.max(b_i);
        if denom > 0.0 && b_i.is_finite() {
            total += (b_i - a_i) / denom;
        }
    }
    total / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Points used for the silhouette sweep.
    pub sweep_sample: usize,
    pub seed: u64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 10,
            restarts: 10,
            sweep_sample: 5000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub silhouette: Option<f64>,
    pub inertia: Option<f64>,
}

/// Box-Cox transform plus three sorted k-means centers in transformed space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossQuantizer {
    pub transform: BoxCox,
    pub centers: Vec<f64>,
    /// Class of each center, ascending.
    pub classes: Vec<LossClass>,
    /// Silhouette per k, kept for reporting only.
    pub sweep: Vec<SweepEntry>,
    pub n_fit: usize,
}

impl LossQuantizer {
    pub fn classify(&self, loss: f64) -> LossClass {
        self.classes[nearest_center(&self.centers, self.transform.transform(loss))]
    }

    /// Class boundaries mapped back to dB/m.
    pub fn thresholds(&self) -> Vec<f64> {
        self.centers
            .windows(2)
            .map(|w| self.transform.inverse(0.5 * (w[0] + w[1])))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("quantizer serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Fits the three-level loss quantizer and the silhouette sweep table.
pub fn fit_quantizer(losses: &[f64], config: &QuantizerConfig) -> Result<LossQuantizer, LossError> {
    if losses.len() < MIN_FIT_VALUES {
        return Err(LossError::InsufficientData {
            need: MIN_FIT_VALUES,
            got: losses.len(),
        });
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    if config.k_min < 2 || config.k_max < config.k_min {
        return Err(LossError::InvalidConfig(
            "k range must satisfy 2 <= k_min <= k_max".into(),
        ));
    }
    let transform = fit_box_cox(losses);
    let t: Vec<f64> = losses.iter().map(|&v| transform.transform(v)).collect();
    let fit = kmeans_1d(&t, 3, config.restarts, config.seed)?;

    let sub: Vec<f64> = if t.len() > config.sweep_sample {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x5111));
        let mut idx = sample_indices(&mut rng, t.len(), config.sweep_sample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| t[i]).collect()
    } else {
        t.clone()
    };
    let sweep = (config.k_min..=config.k_max)
        .map(
            |k| match kmeans_1d(&sub, k, config.restarts, config.seed ^ k as u64) {
                Ok(f) => SweepEntry {
                    k,
                    silhouette: Some(silhouette_1d(&sub, &f.assignments, k)),
                    inertia: Some(f.inertia),
                },
                Err(_) => SweepEntry {
                    k,
                    silhouette: None,
                    inertia: None,
                },
            },
        )
        .collect();
    Ok(LossQuantizer {
        transform,
        centers: fit.centers,
        classes: LossClass::ALL.to_vec(),
        sweep,
        n_fit: losses.len(),
    })
}

pub fn label_losses(quantizer: &LossQuantizer, observations: &[LossObservation]) -> Vec<LossClass> {
    observations
        .iter()
        .map(|o| quantizer.classify(o.loss))
        .collect()
}
