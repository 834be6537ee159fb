use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BuildingRecord, MeasurementSample};
use crate::geoplane::{contains_point, GaussianPosition, GeoError, OverlapEstimator, Rect};

/// Overlap above which a sample is indoor outright.
pub const P50_THRESHOLD: f64 = 0.5;
/// Overlap above which a sample is indoor when its mean lies in the footprint.
pub const CENTROID_THRESHOLD: f64 = 0.3;
/// Candidate footprints must intersect the position box inflated by this many sigmas.
pub const CANDIDATE_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionRule {
    P50,
    Centroid30,
    Outdoor,
}

impl DetectionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionRule::P50 => "p50",
            DetectionRule::Centroid30 => "centroid30",
            DetectionRule::Outdoor => "outdoor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndoorVerdict {
    pub sample: usize,
    /// Index of the building the sample is assigned to, if indoor.
    pub building: Option<usize>,
    /// Largest overlap over candidate footprints.
    pub overlap: f64,
    pub rule: DetectionRule,
}

impl IndoorVerdict {
    pub fn is_indoor(&self) -> bool {
        self.building.is_some()
    }
}

/// Uniform grid over footprint bounding boxes.
#[derive(Clone, Debug)]
pub struct BuildingIndex {
    cell: f64,
    bins: HashMap<(i64, i64), Vec<usize>>,
    boxes: Vec<Rect>,
}

impl BuildingIndex {
    pub fn new(buildings: &[BuildingRecord], cell: f64) -> Self {
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let boxes: Vec<Rect> = buildings.iter().map(|b| b.polygon.bbox()).collect();
        for (i, b) in boxes.iter().enumerate() {
            let (x0, y0) = Self::key(cell, b.min.x, b.min.y);
            let (x1, y1) = Self::key(cell, b.max.x, b.max.y);
            for gx in x0..=x1 {
                for gy in y0..=y1 {
                    bins.entry((gx, gy)).or_default().push(i);
                }
            }
        }
        Self { cell, bins, boxes }
    }

    fn key(cell: f64, x: f64, y: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    /// Buildings whose bounding box intersects `query`, ascending.
    pub fn query(&self, query: &Rect) -> Vec<usize> {
        let (x0, y0) = Self::key(self.cell, query.min.x, query.min.y);
        let (x1, y1) = Self::key(self.cell, query.max.x, query.max.y);
        let mut out = Vec::new();
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                if let Some(v) = self.bins.get(&(gx, gy)) {
                    out.extend(
                        v.iter()
                            .copied()
                            .filter(|&i| self.boxes[i].intersects(query)),
                    );
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Indoor/outdoor decision for one sample against its best-overlap building.
///
/// Indoor if that overlap exceeds [`P50_THRESHOLD`], or exceeds
/// [`CENTROID_THRESHOLD`] with the position mean inside the footprint. Equal
/// overlaps go to the building with the smaller id.
pub fn detect_indoor(
    sample_index: usize,
    sample: &MeasurementSample,
    buildings: &[BuildingRecord],
    index: &BuildingIndex,
    estimator: &OverlapEstimator,
) -> Result<IndoorVerdict, GeoError> {
    let pos = GaussianPosition::new(sample.position, sample.accuracy)?;
    let m = CANDIDATE_SIGMAS * sample.accuracy;
    let query = Rect {
        min: sample.position,
        max: sample.position,
    }
    .inflate(m);
    let mut best: Option<(f64, usize)> = None;
    for b in index.query(&query) {
        let p = estimator.overlap(&pos, &buildings[b].polygon);
        let better = match best {
            None => p > 0.0,
            Some((bp, bi)) => p > bp || (p == bp && buildings[b].id < buildings[bi].id),
        };
        if better {
            best = Some((p, b));
        }
    }
    let (overlap, building) = best.map_or((0.0, None), |(p, b)| (p, Some(b)));
    let rule = match building {
        Some(_) if overlap > P50_THRESHOLD => DetectionRule::P50,
        Some(b)
            if overlap > CENTROID_THRESHOLD
                && contains_point(&buildings[b].polygon, sample.position) =>
        {
            DetectionRule::Centroid30
        }
        _ => DetectionRule::Outdoor,
    };
    Ok(IndoorVerdict {
        sample: sample_index,
        building: if rule == DetectionRule::Outdoor {
            None
        } else {
            building
        },
        overlap,
        rule,
    })
}

/// Runs [`detect_indoor`] over all samples in parallel.
pub fn detect_all(
    samples: &[MeasurementSample],
    buildings: &[BuildingRecord],
    estimator: &OverlapEstimator,
) -> Result<Vec<IndoorVerdict>, GeoError> {
    let index = BuildingIndex::new(buildings, 50.0);
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| detect_indoor(i, s, buildings, &index, estimator))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoplane::{
        rectangle_mass, Point, Polygon, DEFAULT_OVERLAP_BUDGET, DEFAULT_OVERLAP_SEED,
    };

    fn sample(x: f64, y: f64, sigma: f64) -> MeasurementSample {
        MeasurementSample {
            id: "s".into(),
            position: Point::new(x, y),
            accuracy: sigma,
            cell_id: 1,
            earfcn: 1300,
            rsrp: -90.0,
            timestamp: 0,
        }
    }

    fn run(s: &MeasurementSample, buildings: &[BuildingRecord]) -> IndoorVerdict {
        let est = OverlapEstimator::new(DEFAULT_OVERLAP_BUDGET, DEFAULT_OVERLAP_SEED).unwrap();
        let idx = BuildingIndex::new(buildings, 50.0);
        detect_indoor(0, s, buildings, &idx, &est).unwrap()
    }

    #[test]
    fn deep_inside_is_p50() {
        let b = vec![BuildingRecord::bare(
            "a",
            Polygon::rectangle(0.0, 0.0, 50.0, 50.0).unwrap(),
        )];
        let v = run(&sample(25.0, 25.0, 0.5), &b);
        assert_eq!(v.rule, DetectionRule::P50);
        assert_eq!(v.building, Some(0));
        assert!(v.overlap > 0.999);
    }

    #[test]
    fn centroid_rule_at_overlap_035() {
        // Thin strip centred on the mean; width chosen so the closed form gives 0.35.
        let w = {
            let (mut lo, mut hi) = (1e-3, 100.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let r = Rect {
                    min: Point::new(-mid / 2.0, -1e4),
                    max: Point::new(mid / 2.0, 1e4),
                };
                let g = GaussianPosition::new(Point::new(0.0, 0.0), 4.0).unwrap();
                if rectangle_mass(&g, &r) < 0.35 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let b = vec![BuildingRecord::bare(
            "a",
            Polygon::rectangle(-w / 2.0, -1e4, w / 2.0, 1e4).unwrap(),
        )];
        let v = run(&sample(0.0, 0.0, 4.0), &b);
        assert!((v.overlap - 0.35).abs() < 1e-6, "{}", v.overlap);
        assert_eq!(v.rule, DetectionRule::Centroid30);
        assert_eq!(v.building, Some(0));
    }

    #[test]
    fn outside_with_045_is_outdoor() {
        let rect = Rect {
            min: Point::new(0.0, -1e4),
            max: Point::new(1e4, 1e4),
        };
        // Mean outside at x = -1; sigma so that the right half-plane holds 0.45.
        let g = |s: f64| {
            rectangle_mass(
                &GaussianPosition::new(Point::new(-1.0, 0.0), s).unwrap(),
                &rect,
            )
        };
        let (mut lo, mut hi) = (0.01f64, 1000.0f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if g(mid) < 0.45 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = vec![BuildingRecord::bare(
            "a",
            Polygon::rectangle(0.0, -1e4, 1e4, 1e4).unwrap(),
        )];
        let v = run(&sample(-1.0, 0.0, lo), &b);
        assert!((v.overlap - 0.45).abs() < 1e-6);
        assert_eq!(v.rule, DetectionRule::Outdoor);
        assert_eq!(v.building, None);
    }

    #[test]
    fn no_candidates_is_outdoor() {
        let b = vec![BuildingRecord::bare(
            "a",
            Polygon::rectangle(0.0, 0.0, 10.0, 10.0).unwrap(),
        )];
        let v = run(&sample(500.0, 500.0, 3.0), &b);
        assert_eq!(v.rule, DetectionRule::Outdoor);
        assert_eq!(v.overlap, 0.0);
    }

    #[test]
    fn equal_overlap_prefers_smaller_id() {
        // Two footprints sharing the edge x = 0; the mean sits on it.
        let b = vec![
            BuildingRecord::bare("z", Polygon::rectangle(0.0, -5.0, 10.0, 5.0).unwrap()),
            BuildingRecord::bare("m", Polygon::rectangle(-10.0, -5.0, 0.0, 5.0).unwrap()),
        ];
        let v = run(&sample(0.0, 0.0, 1.0), &b);
        assert_eq!(v.rule, DetectionRule::Centroid30);
        assert_eq!(v.building, Some(1));
    }
}
