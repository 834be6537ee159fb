use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IndoorVerdict;
use crate::class::LinkType;
use crate::dataset::MeasurementSample;
use crate::geoplane::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub d_min: f64,
    pub d_max: f64,
    /// Nearest partners kept per indoor sample.
    pub max_pairs_per_sample: usize,
    /// Assumed indoor receiver height above outdoor ones (m); zero keeps
    /// distances horizontal.
    pub indoor_height: f64,
    /// Outdoor samples whose best footprint overlap exceeds this are not
    /// used as O2I partners; 1 admits every non-indoor sample.
    pub max_outdoor_overlap: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            d_max: 300.0,
            max_pairs_per_sample: 5,
            indoor_height: 0.0,
            max_outdoor_overlap: 0.05,
        }
    }
}

/// One sample pair's distance-normalized relative loss.
///
/// For O2I, `first` is the indoor sample and `second` the outdoor one. For
/// I2I both are in `building`; `first` is the stronger sample so the loss is
/// non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossObservation {
    pub link: LinkType,
    pub first: usize,
    pub second: usize,
    pub building: usize,
    pub cell_id: u64,
    pub earfcn: u32,
    pub distance: f64,
    /// dB/m; positive means the lower-power sample is more attenuated.
    pub loss: f64,
}

/// `(p_a - p_b) / d`. Swapping the samples negates the value.
pub fn relative_loss(p_a: f64, p_b: f64, d: f64) -> f64 {
    (p_a - p_b) / d
}

struct PointGrid {
    cell: f64,
    bins: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[(usize, Point)], cell: f64) -> Self {
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for &(i, p) in points {
            bins.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, bins }
    }

    fn key(cell: f64, p: Point) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Up to `k` nearest points with distance in `[d_min, d_max]`, ties by index.
    fn nearest(
        &self,
        at: Point,
        k: usize,
        d_min: f64,
        d_max: f64,
        dist: impl Fn(usize) -> f64,
    ) -> Vec<(f64, usize)> {
        let (cx, cy) = Self::key(self.cell, at);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let max_ring = (d_max / self.cell).ceil() as i64 + 1;
        for r in 0..=max_ring {
            for gx in cx - r..=cx + r {
                for gy in cy - r..=cy + r {
                    if (gx - cx).abs() != r && (gy - cy).abs() != r {
                        continue;
                    }
                    if let Some(v) = self.bins.get(&(gx, gy)) {
                        for &j in v {
                            let d = dist(j);
                            if d >= d_min && d <= d_max {
                                found.push((d, j));
                            }
                        }
                    }
                }
            }
            // Every point within r * cell of `at` has been visited.
            let covered = r as f64 * self.cell;
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if found.len() >= k && found[k - 1].0 <= covered {
                break;
            }
        }
        found.truncate(k);
        found
    }
}

/// Forms O2I and I2I pairs and computes their relative losses.
///
/// Each indoor sample is paired with its nearest outdoor samples on the same
/// cell and band (O2I) and with its nearest indoor samples of the same
/// building, cell and band (I2I); pairs outside `[d_min, d_max]` are
/// dropped. I2I pairs are deduplicated. Output order is deterministic.
pub fn pair_and_compute_loss(
    verdicts: &[IndoorVerdict],
    samples: &[MeasurementSample],
    config: &PairConfig,
) -> Vec<LossObservation> {
    let k = config.max_pairs_per_sample;
    if k == 0 {
        return Vec::new();
    }
    let mut outdoor: BTreeMap<(u64, u32), Vec<(usize, Point)>> = BTreeMap::new();
    let mut indoor: BTreeMap<(usize, u64, u32), Vec<usize>> = BTreeMap::new();
    for v in verdicts {
        let s = &samples[v.sample];
        match v.building {
            Some(b) => indoor
                .entry((b, s.cell_id, s.earfcn))
                .or_default()
                .push(v.sample),
            None if v.overlap > config.max_outdoor_overlap => {}
            None => outdoor
                .entry((s.cell_id, s.earfcn))
                .or_default()
                .push((v.sample, s.position)),
        }
    }
    let cell = (config.d_max / 8.0).clamp(5.0, 100.0);
    let grids: BTreeMap<(u64, u32), PointGrid> = outdoor
        .iter()
        .map(|(key, pts)| (*key, PointGrid::new(pts, cell)))
        .collect();
    let h2 = config.indoor_height * config.indoor_height;

    let groups: Vec<(&(usize, u64, u32), &Vec<usize>)> = indoor.iter().collect();
    let per_group: Vec<Vec<LossObservation>> = groups
        .par_iter()
        .map(|(&(building, cell_id, earfcn), members)| {
            let mut out = Vec::new();
            if let Some(grid) = grids.get(&(cell_id, earfcn)) {
                for &i in members.iter() {
                    let pi = samples[i].position;
                    let near = grid.nearest(pi, k, config.d_min, config.d_max, |j| {
                        (pi.distance(samples[j].position).powi(2) + h2).sqrt()
                    });
                    for (d, j) in near {
                        out.push(LossObservation {
                            link: LinkType::O2I,
                            first: i,
                            second: j,
                            building,
                            cell_id,
                            earfcn,
                            distance: d,
                            loss: relative_loss(samples[j].rsrp, samples[i].rsrp, d),
                        });
                    }
                }
            }
            let mut seen = std::collections::BTreeSet::new();
            for &i in members.iter() {
                let pi = samples[i].position;
                let mut cand: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (pi.distance(samples[j].position), j))
                    .filter(|(d, _)| *d >= config.d_min && *d <= config.d_max)
                    .collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(d, j) in cand.iter().take(k) {
                    if !seen.insert((i.min(j), i.max(j))) {
                        continue;
                    }
                    let (a, b) = if samples[i].rsrp > samples[j].rsrp
                        || (samples[i].rsrp == samples[j].rsrp && i < j)
                    {
                        (i, j)
                    } else {
                        (j, i)
                    };
                    out.push(LossObservation {
                        link: LinkType::I2I,
                        first: a,
                        second: b,
                        building,
                        cell_id,
                        earfcn,
                        distance: d,
                        loss: relative_loss(samples[a].rsrp, samples[b].rsrp, d),
                    });
                }
            }
            out
        })
        .collect();
    per_group.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losslab::DetectionRule;

    fn s(x: f64, rsrp: f64) -> MeasurementSample {
        MeasurementSample {
            id: String::new(),
            position: Point::new(x, 0.0),
            accuracy: 1.0,
            cell_id: 1,
            earfcn: 1300,
            rsrp,
            timestamp: 0,
        }
    }

    fn verdict(i: usize, building: Option<usize>) -> IndoorVerdict {
        IndoorVerdict {
            sample: i,
            building,
            overlap: if building.is_some() { 1.0 } else { 0.0 },
            rule: if building.is_some() {
                DetectionRule::P50
            } else {
                DetectionRule::Outdoor
            },
        }
    }

    #[test]
    fn o2i_example_two_db_per_meter() {
        let samples = vec![s(0.0, -90.0), s(5.0, -80.0)];
        let v = vec![verdict(0, Some(0)), verdict(1, None)];
        let obs = pair_and_compute_loss(&v, &samples, &PairConfig::default());
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].link, LinkType::O2I);
        assert_eq!((obs[0].first, obs[0].second), (0, 1));
        assert!((obs[0].loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rsrp_gives_zero() {
        let samples = vec![s(0.0, -85.0), s(17.0, -85.0)];
        let v = vec![verdict(0, Some(0)), verdict(1, None)];
        assert_eq!(
            pair_and_compute_loss(&v, &samples, &PairConfig::default())[0].loss,
            0.0
        );
    }

    #[test]
    fn too_close_pairs_are_dropped() {
        let samples = vec![s(0.0, -90.0), s(0.2, -80.0), s(0.1, -95.0)];
        let v = vec![verdict(0, Some(0)), verdict(1, None), verdict(2, Some(0))];
        assert!(pair_and_compute_loss(&v, &samples, &PairConfig::default()).is_empty());
    }

    #[test]
    fn i2i_orients_stronger_first_and_dedups() {
        let samples = vec![s(0.0, -95.0), s(4.0, -85.0)];
        let v = vec![verdict(0, Some(3)), verdict(1, Some(3))];
        let obs = pair_and_compute_loss(&v, &samples, &PairConfig::default());
        assert_eq!(obs.len(), 1);
        assert_eq!((obs[0].first, obs[0].second, obs[0].building), (1, 0, 3));
        assert!((obs[0].loss - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pairs_are_capped_by_nearest_distance() {
        let mut samples = vec![s(0.0, -90.0)];
        let mut v = vec![verdict(0, Some(0))];
        for k in 1..=20 {
            samples.push(s(k as f64 * 3.0, -80.0));
            v.push(verdict(k, None));
        }
        let cfg = PairConfig {
            max_pairs_per_sample: 4,
            ..PairConfig::default()
        };
        let obs = pair_and_compute_loss(&v, &samples, &cfg);
        let partners: Vec<usize> = obs.iter().map(|o| o.second).collect();
        assert_eq!(partners, vec![1, 2, 3, 4]);
    }

    #[test]
    fn different_cells_never_pair() {
        let mut samples = vec![s(0.0, -90.0), s(5.0, -80.0)];
        samples[1].cell_id = 2;
        let v = vec![verdict(0, Some(0)), verdict(1, None)];
        assert!(pair_and_compute_loss(&v, &samples, &PairConfig::default()).is_empty());
    }
}
