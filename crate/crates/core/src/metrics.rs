//! Evaluation: accuracy and macro-F1, prediction entropy, mean maximum
//! predicted probability (MMPP), silhouette and building-level majority votes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::{argmax_high, LossClass, N_CLASSES};
use crate::forest::ClassDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("distribution {index} is not on the simplex (sum {sum})")]
    InvalidDistribution { index: usize, sum: f64 },
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
}

/// Simplex tolerance for entropy and MMPP inputs.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

fn check_simplex(dists: &[ClassDistribution]) -> Result<(), MetricsError> {
    for (index, d) in dists.iter().enumerate() {
        let sum: f64 = d.0.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE
            || d.0
                .iter()
                .any(|p| !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(p))
        {
            return Err(MetricsError::InvalidDistribution { index, sum });
        }
    }
    Ok(())
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Mean per-sample entropy (bits) over a building's sample distributions.
pub fn building_entropy(dists: &[ClassDistribution]) -> Result<f64, MetricsError> {
    if dists.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_simplex(dists)?;
    Ok(dists.iter().map(|d| entropy_bits(&d.0)).sum::<f64>() / dists.len() as f64)
}

/// Mean of each sample's largest class probability.
pub fn mmpp(dists: &[ClassDistribution]) -> Result<f64, MetricsError> {
    if dists.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_simplex(dists)?;
    Ok(dists.iter().map(ClassDistribution::max_prob).sum::<f64>() / dists.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingLabel {
    pub building: String,
    pub band: u32,
    pub class: LossClass,
    /// Votes per class in low, medium, high order.
    pub votes: [usize; N_CLASSES],
    pub n_samples: usize,
    pub mean_confidence: f64,
}

/// One per-(building, band) group of sample-level predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteGroup {
    pub building: String,
    pub band: u32,
    pub predictions: Vec<ClassDistribution>,
}

/// Class with most votes; ties go to the higher loss class.
pub fn vote(votes: &[usize; N_CLASSES]) -> LossClass {
    let as_f: Vec<f64> = votes.iter().map(|&v| v as f64).collect();
    LossClass::from_index(argmax_high(&as_f)).expect("three classes")
}

/// Majority vote over each group's predicted classes. Groups must be
/// non-empty; empty groups are skipped. Output is sorted by (building, band).
pub fn majority_vote(groups: &[VoteGroup]) -> Vec<BuildingLabel> {
    let mut out: Vec<BuildingLabel> = groups
        .iter()
        .filter(|g| !g.predictions.is_empty())
        .map(|g| {
            let mut votes = [0usize; N_CLASSES];
            for d in &g.predictions {
                votes[d.class().index()] += 1;
            }
            let n = g.predictions.len();
            BuildingLabel {
                building: g.building.clone(),
                band: g.band,
                class: vote(&votes),
                votes,
                n_samples: n,
                mean_confidence: g
                    .predictions
                    .iter()
                    .map(ClassDistribution::max_prob)
                    .sum::<f64>()
                    / n as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| a.building.cmp(&b.building).then(a.band.cmp(&b.band)));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: LossClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows are truth, columns prediction.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub per_class: Vec<ClassScores>,
    /// Mean over buildings of each building's mean sample entropy.
    pub mean_building_entropy: Option<f64>,
    /// Mean over all samples.
    pub mean_sample_entropy: Option<f64>,
    pub mmpp: Option<f64>,
    pub building_entropy: BTreeMap<String, f64>,
}

/// Accuracy, confusion matrix and macro-F1. Classes absent from both truth
/// and prediction are left out of the F1 average.
pub fn classification_report(
    truth: &[LossClass],
    predicted: &[LossClass],
) -> Result<EvalReport, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::new();
    let mut f1_sum = 0.0;
    let mut f1_n = 0usize;
    for c in LossClass::ALL {
        let i = c.index();
        let tp = confusion[i][i] as f64;
        let support: usize = confusion[i].iter().sum();
        let predicted_c: usize = (0..N_CLASSES).map(|r| confusion[r][i]).sum();
        let precision = if predicted_c > 0 {
            tp / predicted_c as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 || predicted_c > 0 {
            f1_sum += f1;
            f1_n += 1;
        }
        per_class.push(ClassScores {
            class: c,
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(EvalReport {
        n,
        accuracy: correct as f64 / n as f64,
        macro_f1: f1_sum / f1_n as f64,
        confusion,
        per_class,
        mean_building_entropy: None,
        mean_sample_entropy: None,
        mmpp: None,
        building_entropy: BTreeMap::new(),
    })
}

impl EvalReport {
    /// Adds entropy and MMPP from per-building sample distributions.
    pub fn with_uncertainty(
        mut self,
        per_building: &BTreeMap<String, Vec<ClassDistribution>>,
    ) -> Result<Self, MetricsError> {
        let mut all = Vec::new();
        for (b, d) in per_building {
            if d.is_empty() {
                continue;
            }
            self.building_entropy
                .insert(b.clone(), building_entropy(d)?);
            all.extend_from_slice(d);
        }
        if !all.is_empty() {
            self.mean_building_entropy = Some(
                self.building_entropy.values().sum::<f64>() / self.building_entropy.len() as f64,
            );
            self.mean_sample_entropy = Some(building_entropy(&all)?);
            self.mmpp = Some(mmpp(&all)?);
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One-line table with accuracy, F1, entropy and MMPP columns.
    pub fn to_table(&self, label: &str) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>8} {:>8} {:>8} {:>8}",
            "model", "Acc", "F1", "Entropy", "MMPP"
        );
        let _ = writeln!(
            s,
            "{:<24} {:>8.4} {:>8.4} {:>8} {:>8}",
            label,
            self.accuracy,
            self.macro_f1,
            opt(self.mean_building_entropy),
            opt(self.mmpp)
        );
        s
    }
}

/// Mean silhouette with Euclidean distance, by the pairwise definition.
/// Points in singleton clusters score zero.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64, MetricsError> {
    if points.len() != assignments.len() {
        return Err(MetricsError::LengthMismatch(
            points.len(),
            assignments.len(),
        ));
    }
    if points.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = assignments.iter().copied().max().unwrap_or(0) + 1;
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[assignments[j]] += dist(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}
