use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LossObservation;
use crate::class::LinkType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZScoreConfig {
    pub max_abs_z: f64,
    /// Groups smaller than this pass through unfiltered.
    pub min_group: usize,
}

impl Default for ZScoreConfig {
    fn default() -> Self {
        Self {
            max_abs_z: 3.0,
            min_group: 3,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices of observations kept after per-(building, band, link) outlier removal.
///
/// Each value is scored against the mean and sample standard deviation of the
/// other members of its group (leave-one-out), so a single gross outlier
/// cannot inflate the spread used to judge it. Groups with zero spread or fewer
/// than `min_group` members are kept whole.
pub fn zscore_filter(observations: &[LossObservation], config: &ZScoreConfig) -> Vec<usize> {
    let mut groups: BTreeMap<(usize, u32, LinkType), Vec<usize>> = BTreeMap::new();
    for (i, o) in observations.iter().enumerate() {
        groups
            .entry((o.building, o.earfcn, o.link))
            .or_default()
            .push(i);
    }
    let mut keep = vec![true; observations.len()];
    for members in groups.values() {
        if members.len() < config.min_group.max(2) {
            continue;
        }
        let values = members.iter().map(|&i| observations[i].loss);
        let (_, sd) = mean_std(values.clone());
        if sd == 0.0 {
            continue;
        }
        let n = members.len() as f64;
        let sum: f64 = values.clone().sum();
        let sum_sq: f64 = values.clone().map(|v| v * v).sum();
        for &i in members {
            let x = observations[i].loss;
            let m = (sum - x) / (n - 1.0);
            let var = ((sum_sq - x * x - (n - 1.0) * m * m) / (n - 2.0)).max(0.0);
            let s = var.sqrt();
            let dev = (x - m).abs();
            let outlier = if s > 1e-12 * m.abs().max(1.0) {
                dev / s > config.max_abs_z
            } else {
                dev > 1e-12 * m.abs().max(1.0)
            };
            if outlier {
                keep[i] = false;
            }
        }
    }
    (0..observations.len()).filter(|&i| keep[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(values: &[f64]) -> Vec<LossObservation> {
        values
            .iter()
            .enumerate()
            .map(|(i, &loss)| LossObservation {
                link: LinkType::O2I,
                first: i,
                second: 100 + i,
                building: 0,
                cell_id: 1,
                earfcn: 1300,
                distance: 5.0,
                loss,
            })
            .collect()
    }

    #[test]
    fn gross_outlier_is_dropped() {
        let kept = zscore_filter(&obs(&[2.0, 2.1, 1.9, 50.0]), &ZScoreConfig::default());
        assert_eq!(kept, vec![0, 1, 2]);
    }

    #[test]
    fn identical_values_pass_through() {
        let kept = zscore_filter(&obs(&[3.0; 6]), &ZScoreConfig::default());
        assert_eq!(kept.len(), 6);
    }

    #[test]
    fn two_member_groups_pass_through() {
        let kept = zscore_filter(&obs(&[1.0, 1000.0]), &ZScoreConfig::default());
        assert_eq!(kept, vec![0, 1]);
    }

    #[test]
    fn groups_are_independent() {
        let mut o = obs(&[2.0, 2.1, 1.9, 50.0]);
        o[3].earfcn = 6300;
        assert_eq!(zscore_filter(&o, &ZScoreConfig::default()).len(), 4);
    }

    #[test]
    fn moderate_spread_is_kept() {
        let v: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * i as f64).collect();
        assert_eq!(zscore_filter(&obs(&v), &ZScoreConfig::default()).len(), 30);
    }
}
