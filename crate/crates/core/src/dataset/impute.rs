use serde::{Deserialize, Serialize};

use super::{BuildingRecord, DatasetError, Usage};
use crate::class::argmax_high;
use crate::forest::{
    train_gb_regressor, train_gradient_boosting, ClassificationData, FeatureKind,
    GbRegressorConfig, GradientBoostingConfig, GrowthStrategy, Schema,
};
use crate::geoplane::footprint_metrics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    /// Columns missing at most this fraction get a median/mode fill.
    pub simple_threshold: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the per-column change between cycles.
    pub tolerance: f64,
    /// Minimum observed fraction required to impute a column at all.
    pub min_observed: f64,
    pub current_year: i32,
    pub regressor: GbRegressorConfig,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            simple_threshold: 0.1,
            max_iterations: 10,
            tolerance: 1e-3,
            min_observed: 0.3,
            current_year: 2026,
            regressor: GbRegressorConfig {
                n_rounds: 60,
                ..GbRegressorConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ImputeReport {
    pub simple_columns: Vec<String>,
    pub iterative_columns: Vec<String>,
    pub cells_imputed: usize,
    pub iterations: usize,
    /// Largest per-column change in the last cycle.
    pub final_change: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Col {
    Height,
    Floors,
    Year,
    Epc,
    EnergyMean,
    EnergyStd,
    Usage,
    WallType,
    WallMaterial,
    Insulation,
    Glazing,
}

const COLS: [Col; 11] = [
    Col::Height,
    Col::Floors,
    Col::Year,
    Col::Epc,
    Col::EnergyMean,
    Col::EnergyStd,
    Col::Usage,
    Col::WallType,
    Col::WallMaterial,
    Col::Insulation,
    Col::Glazing,
];

impl Col {
    fn name(self) -> &'static str {
        match self {
            Col::Height => "height",
            Col::Floors => "floors",
            Col::Year => "year",
            Col::Epc => "epc",
            Col::EnergyMean => "energy_mean",
            Col::EnergyStd => "energy_std",
            Col::Usage => "usage",
            Col::WallType => "wall_type",
            Col::WallMaterial => "wall_material",
            Col::Insulation => "insulation",
            Col::Glazing => "glazing",
        }
    }

    fn categorical(self) -> bool {
        matches!(
            self,
            Col::Usage | Col::WallType | Col::WallMaterial | Col::Insulation | Col::Glazing
        )
    }

    fn integral(self) -> bool {
        matches!(self, Col::Floors | Col::Year | Col::Epc)
    }

    fn text(self, r: &BuildingRecord) -> Option<String> {
        match self {
            Col::Usage => r.usage.map(|u| u.as_str().to_string()),
            Col::WallType => r.wall_type.clone(),
            Col::WallMaterial => r.wall_material.clone(),
            Col::Insulation => r.insulation.clone(),
            Col::Glazing => r.glazing.clone(),
            _ => None,
        }
    }

    fn number(self, r: &BuildingRecord) -> Option<f64> {
        match self {
            Col::Height => r.height,
            Col::Floors => r.floors.map(f64::from),
            Col::Year => r.year.map(f64::from),
            Col::Epc => r.epc.map(f64::from),
            Col::EnergyMean => r.energy_mean,
            Col::EnergyStd => r.energy_std,
            _ => None,
        }
    }

    /// Applies the attribute rules to a numeric value.
    fn constrain(self, v: f64, current_year: i32) -> f64 {
        let v = if self.integral() { v.round() } else { v };
        match self {
            Col::Height => v.max(0.5),
            Col::Floors => v.max(1.0),
            Col::Year => v.clamp(1800.0, f64::from(current_year)),
            Col::Epc => v.clamp(1.0, 7.0),
            Col::EnergyStd => v.max(0.0),
            _ => v,
        }
    }
}

/// One column as numbers (categorical values as level indices) plus its levels.
struct Column {
    col: Col,
    levels: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl Column {
    fn from_records(col: Col, records: &[BuildingRecord]) -> Self {
        if col.categorical() {
            let mut levels: Vec<String> = records.iter().filter_map(|r| col.text(r)).collect();
            levels.sort();
            levels.dedup();
            let raw: Vec<Option<usize>> = records
                .iter()
                .map(|r| {
                    col.text(r)
                        .map(|t| levels.binary_search(&t).expect("level exists"))
                })
                .collect();
            Self {
                col,
                levels,
                values: raw
                    .iter()
                    .map(|v| v.map_or(f64::NAN, |c| c as f64))
                    .collect(),
                missing: raw.iter().map(Option::is_none).collect(),
            }
        } else {
            let raw: Vec<Option<f64>> = records.iter().map(|r| col.number(r)).collect();
            Self {
                col,
                levels: Vec::new(),
                values: raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
                missing: raw.iter().map(Option::is_none).collect(),
            }
        }
    }

    fn n_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    fn kind(&self) -> FeatureKind {
        if self.col.categorical() {
            FeatureKind::Categorical {
                n_categories: self.levels.len().max(1),
            }
        } else {
            FeatureKind::Numeric
        }
    }

    fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| *v)
    }

    /// Median (numeric) or mode (categorical, ties to the smaller level).
    fn simple_fill_value(&self, current_year: i32) -> f64 {
        if self.col.categorical() {
            let mut counts = vec![0usize; self.levels.len()];
            for v in self.observed() {
                counts[v as usize] += 1;
            }
            let best = counts.iter().copied().max().unwrap_or(0);
            counts.iter().position(|&c| c == best).unwrap_or(0) as f64
        } else {
            let mut obs: Vec<f64> = self.observed().collect();
            obs.sort_by(f64::total_cmp);
            let n = obs.len();
            let median = if n % 2 == 1 {
                obs[n / 2]
            } else {
                0.5 * (obs[n / 2 - 1] + obs[n / 2])
            };
            self.col.constrain(median, current_year)
        }
    }

    fn spread(&self) -> f64 {
        let obs: Vec<f64> = self.observed().collect();
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    }
}

/// Fills every missing attribute.
///
/// Columns with few gaps use the median or mode. The others are imputed by
/// chained equations: starting from median/mode fills, each such column is
/// re-predicted from all other columns (plus footprint area, vertex count
/// and compactness) with boosted trees, cycling until the largest change is
/// below `tolerance` or `max_iterations` is reached. Attribute rules are
/// re-applied after every cycle.
pub fn impute_attributes(
    records: &[BuildingRecord],
    config: &ImputeConfig,
) -> Result<(Vec<BuildingRecord>, ImputeReport), DatasetError> {
    let n = records.len();
    let mut report = ImputeReport::default();
    let mut columns: Vec<Column> = COLS
        .iter()
        .map(|&c| Column::from_records(c, records))
        .collect();
    if columns.iter().all(|c| c.n_missing() == 0) {
        return Ok((records.to_vec(), report));
    }
    for c in &columns {
        let observed = 1.0 - c.n_missing() as f64 / n as f64;
        if c.n_missing() > 0 && observed < config.min_observed {
            return Err(DatasetError::InsufficientData {
                column: c.col.name().to_string(),
                observed: 100.0 * observed,
            });
        }
    }

    let mut iterative = Vec::new();
    for (j, c) in columns.iter_mut().enumerate() {
        let miss = c.n_missing();
        if miss == 0 {
            continue;
        }
        report.cells_imputed += miss;
        let fill = c.simple_fill_value(config.current_year);
        for i in 0..n {
            if c.missing[i] {
                c.values[i] = fill;
            }
        }
        if miss as f64 / n as f64 <= config.simple_threshold {
            report.simple_columns.push(c.col.name().to_string());
        } else {
            report.iterative_columns.push(c.col.name().to_string());
            iterative.push(j);
        }
    }

    if !iterative.is_empty() {
        let geometry: Vec<[f64; 3]> = records
            .iter()
            .map(|r| {
                footprint_metrics(&r.polygon)
                    .map(|m| [m.area, m.vertex_count as f64, m.compactness])
                    .map_err(|source| DatasetError::Geometry {
                        building: r.id.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        for iter in 0..config.max_iterations {
            let mut change: f64 = 0.0;
            for &j in &iterative {
                let predictors: Vec<usize> = (0..columns.len()).filter(|&k| k != j).collect();
                let mut names: Vec<String> = predictors
                    .iter()
                    .map(|&k| columns[k].col.name().to_string())
                    .collect();
                let mut kinds: Vec<FeatureKind> =
                    predictors.iter().map(|&k| columns[k].kind()).collect();
                names.extend(["area", "vertex_count", "compactness"].map(String::from));
                kinds.extend([FeatureKind::Numeric; 3]);
                let schema = Schema::new(names, kinds);
                let row = |i: usize| -> Vec<f64> {
                    let mut v: Vec<f64> =
                        predictors.iter().map(|&k| columns[k].values[i]).collect();
                    v.extend(geometry[i]);
                    v
                };
                let target = &columns[j];
                let train: Vec<usize> = (0..n).filter(|&i| !target.missing[i]).collect();
                let fill: Vec<usize> = (0..n).filter(|&i| target.missing[i]).collect();
                let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| row(i)).collect();
                let fill_rows: Vec<Vec<f64>> = fill.iter().map(|&i| row(i)).collect();
                let seed = config.seed ^ (j as u64 + 1);
                let predicted: Vec<f64> = if target.col.categorical() {
                    let labels: Vec<usize> =
                        train.iter().map(|&i| target.values[i] as usize).collect();
                    let data = ClassificationData::new(
                        schema,
                        train_rows,
                        labels,
                        target.levels.len().max(2),
                    );
                    let gb = GradientBoostingConfig {
                        n_rounds: 40,
                        max_leaves: 15,
                        balanced_class_weights: false,
                        seed,
                        ..GradientBoostingConfig::default()
                    };
                    let model =
                        train_gradient_boosting(&data, None, GrowthStrategy::LeafWise, &gb)?;
                    fill_rows
                        .iter()
                        .map(|r| model.predict_proba_vec(r).map(|p| argmax_high(&p) as f64))
                        .collect::<Result<_, _>>()?
                } else {
                    let targets: Vec<f64> = train.iter().map(|&i| target.values[i]).collect();
                    let cfg = GbRegressorConfig {
                        seed,
                        ..config.regressor.clone()
                    };
                    let model = train_gb_regressor(&schema, &train_rows, &targets, &cfg)?;
                    fill_rows
                        .iter()
                        .map(|r| {
                            model
                                .predict(r)
                                .map(|v| target.col.constrain(v, config.current_year))
                        })
                        .collect::<Result<_, _>>()?
                };
                let target = &mut columns[j];
                let spread = if target.col.categorical() {
                    1.0
                } else {
                    target.spread()
                };
                let mut col_change: f64 = 0.0;
                let mut flips = 0usize;
                for (&i, &v) in fill.iter().zip(&predicted) {
                    if target.col.categorical() {
                        flips += usize::from(target.values[i] != v);
                    } else {
                        col_change = col_change.max((target.values[i] - v).abs() / spread);
                    }
                    target.values[i] = v;
                }
                if target.col.categorical() && !fill.is_empty() {
                    col_change = flips as f64 / fill.len() as f64;
                }
                change = change.max(col_change);
            }
            report.iterations = iter + 1;
            report.final_change = change;
            if change < config.tolerance {
                break;
            }
        }
    }

    let mut out = records.to_vec();
    for c in &columns {
        for (i, r) in out.iter_mut().enumerate() {
            if !c.missing[i] {
                continue;
            }
            let v = c.values[i];
            let level = || c.levels[v as usize].clone();
            match c.col {
                Col::Height => r.height = Some(v),
                Col::Floors => r.floors = Some(v as u32),
                Col::Year => r.year = Some(v as i32),
                Col::Epc => r.epc = Some(v as u8),
                Col::EnergyMean => r.energy_mean = Some(v),
                Col::EnergyStd => r.energy_std = Some(v),
                Col::Usage => r.usage = Some(level().parse::<Usage>().unwrap_or(Usage::Other)),
                Col::WallType => r.wall_type = Some(level()),
                Col::WallMaterial => r.wall_material = Some(level()),
                Col::Insulation => r.insulation = Some(level()),
                Col::Glazing => r.glazing = Some(level()),
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoplane::Polygon;

    fn complete(i: usize) -> BuildingRecord {
        let mut r = BuildingRecord::bare(
            format!("b{i}"),
            Polygon::rectangle(0.0, 0.0, 10.0 + i as f64, 12.0).unwrap(),
        );
        r.height = Some(3.0 * (1 + i % 5) as f64);
        r.floors = Some((1 + i % 5) as u32);
        r.year = Some(1950 + (i % 60) as i32);
        r.usage = Some(Usage::ALL[i % 4]);
        r.wall_type = Some(["solid", "cavity"][i % 2].into());
        r.wall_material = Some(["brick", "concrete", "timber"][i % 3].into());
        r.insulation = Some(["none", "filled"][i % 2].into());
        r.glazing = Some(["single", "double", "low-e"][i % 3].into());
        r.epc = Some((1 + i % 7) as u8);
        r.energy_mean = Some(100.0 + i as f64);
        r.energy_std = Some(10.0);
        r
    }

    #[test]
    fn complete_input_is_returned_unchanged() {
        let recs: Vec<_> = (0..30).map(complete).collect();
        let (out, report) = impute_attributes(&recs, &ImputeConfig::default()).unwrap();
        assert_eq!(out, recs);
        assert_eq!(report.cells_imputed, 0);
    }

    #[test]
    fn sparse_gaps_take_the_median() {
        let mut recs: Vec<_> = (0..40).map(complete).collect();
        for (i, r) in recs.iter_mut().enumerate() {
            r.energy_std = Some(if i < 20 { 11.0 } else { 13.0 });
        }
        recs[3].energy_std = None;
        recs[30].energy_std = None;
        // 38 observed values: 19 at 11 and 19 at 13, median 12.
        let (out, report) = impute_attributes(&recs, &ImputeConfig::default()).unwrap();
        assert_eq!(out[3].energy_std, Some(12.0));
        assert_eq!(out[30].energy_std, Some(12.0));
        assert_eq!(report.simple_columns, vec!["energy_std".to_string()]);
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let mut recs: Vec<_> = (0..10).map(complete).collect();
        for r in recs.iter_mut().take(8) {
            r.glazing = None;
        }
        let err = impute_attributes(&recs, &ImputeConfig::default()).unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientData { .. }));
    }

    #[test]
    fn imputed_output_satisfies_rules_and_is_a_fixpoint() {
        let mut recs: Vec<_> = (0..60).map(complete).collect();
        for (i, r) in recs.iter_mut().enumerate() {
            if i % 3 == 0 {
                r.floors = None;
                r.glazing = None;
            }
            if i % 4 == 1 {
                r.year = None;
            }
        }
        let cfg = ImputeConfig::default();
        let (out, report) = impute_attributes(&recs, &cfg).unwrap();
        assert!(report.iterative_columns.contains(&"floors".to_string()));
        for r in &out {
            assert!(r.is_complete());
            r.validate(cfg.current_year).unwrap();
        }
        let (again, _) = impute_attributes(&out, &cfg).unwrap();
        assert_eq!(again, out);
    }
}
