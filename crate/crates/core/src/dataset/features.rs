use serde::{Deserialize, Serialize};

use super::{BuildingRecord, CodeBook, DatasetError, Usage};
use crate::class::LinkType;
use crate::forest::{FeatureKind, Schema};
use crate::geoplane::{footprint_metrics, FootprintMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Nominal dwelling unit area (m²) for residential buildings.
    pub unit_area_residential: f64,
    /// Nominal room area (m²) for every other usage group.
    pub unit_area_other: f64,
    pub min_floor_to_ceiling: f64,
    pub max_floor_to_ceiling: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            unit_area_residential: 37.0,
            unit_area_other: 60.0,
            min_floor_to_ceiling: 2.2,
            max_floor_to_ceiling: 4.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineeredFeatures {
    pub metrics: FootprintMetrics,
    pub rooms_per_floor: u32,
    pub inner_walls: u32,
    pub wall_to_wall: f64,
    pub floor_to_ceiling: f64,
}

fn require<T: Copy>(record: &BuildingRecord, v: Option<T>, field: &str) -> Result<T, DatasetError> {
    v.ok_or_else(|| DatasetError::Incomplete {
        building: record.id.clone(),
        field: field.to_string(),
    })
}

/// Derives interior-layout proxies from footprint area, usage and floors.
///
/// Rooms per floor are `max(1, round(A / unit area))`; each extra room adds
/// one inner wall per floor. The wall-to-wall spacing is the side of a square
/// room of the implied size.
pub fn engineer_features(
    record: &BuildingRecord,
    config: &FeatureConfig,
) -> Result<EngineeredFeatures, DatasetError> {
    let metrics = footprint_metrics(&record.polygon).map_err(|source| DatasetError::Geometry {
        building: record.id.clone(),
        source,
    })?;
    let height = require(record, record.height, "height")?;
    let floors = require(record, record.floors, "floors")?.max(1);
    let usage = require(record, record.usage, "usage")?;
    let unit = if usage == Usage::Residential {
        config.unit_area_residential
    } else {
        config.unit_area_other
    };
    let rooms = ((metrics.area / unit).round() as u32).max(1);
    Ok(EngineeredFeatures {
        rooms_per_floor: rooms,
        inner_walls: (rooms - 1) * floors,
        wall_to_wall: (metrics.area / f64::from(rooms)).sqrt(),
        floor_to_ceiling: (height / f64::from(floors))
            .clamp(config.min_floor_to_ceiling, config.max_floor_to_ceiling),
        metrics,
    })
}

/// Model input columns. Each task uses its own subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureColumn {
    Band,
    EnergyMean,
    EnergyStd,
    Usage,
    WallType,
    WallMaterial,
    Insulation,
    Glazing,
    Year,
    Height,
    Area,
    VertexCount,
    Compactness,
    Epc,
    InnerWalls,
    FloorCount,
    WallToWall,
    FloorToCeiling,
}

const O2I_COLUMNS: [FeatureColumn; 14] = [
    FeatureColumn::Band,
    FeatureColumn::EnergyMean,
    FeatureColumn::EnergyStd,
    FeatureColumn::Usage,
    FeatureColumn::WallType,
    FeatureColumn::WallMaterial,
    FeatureColumn::Insulation,
    FeatureColumn::Glazing,
    FeatureColumn::Year,
    FeatureColumn::Height,
    FeatureColumn::Area,
    FeatureColumn::VertexCount,
    FeatureColumn::Compactness,
    FeatureColumn::Epc,
];

const I2I_COLUMNS: [FeatureColumn; 14] = [
    FeatureColumn::Band,
    FeatureColumn::EnergyMean,
    FeatureColumn::EnergyStd,
    FeatureColumn::Usage,
    FeatureColumn::WallMaterial,
    FeatureColumn::Year,
    FeatureColumn::Height,
    FeatureColumn::Area,
    FeatureColumn::InnerWalls,
    FeatureColumn::FloorCount,
    FeatureColumn::WallToWall,
    FeatureColumn::FloorToCeiling,
    FeatureColumn::Compactness,
    FeatureColumn::Epc,
];

impl FeatureColumn {
    pub fn for_task(task: LinkType) -> &'static [FeatureColumn] {
        match task {
            LinkType::O2I => &O2I_COLUMNS,
            LinkType::I2I => &I2I_COLUMNS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureColumn::Band => "band",
            FeatureColumn::EnergyMean => "energy_mean",
            FeatureColumn::EnergyStd => "energy_std",
            FeatureColumn::Usage => "usage",
            FeatureColumn::WallType => "wall_type",
            FeatureColumn::WallMaterial => "wall_material",
            FeatureColumn::Insulation => "insulation",
            FeatureColumn::Glazing => "glazing",
            FeatureColumn::Year => "year",
            FeatureColumn::Height => "height",
            FeatureColumn::Area => "area",
            FeatureColumn::VertexCount => "vertex_count",
            FeatureColumn::Compactness => "compactness",
            FeatureColumn::Epc => "epc",
            FeatureColumn::InnerWalls => "inner_walls",
            FeatureColumn::FloorCount => "floor_count",
            FeatureColumn::WallToWall => "wall_to_wall",
            FeatureColumn::FloorToCeiling => "floor_to_ceiling",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            FeatureColumn::Band
                | FeatureColumn::Usage
                | FeatureColumn::WallType
                | FeatureColumn::WallMaterial
                | FeatureColumn::Insulation
                | FeatureColumn::Glazing
        )
    }

    fn category(self, r: &BuildingRecord) -> Option<&str> {
        match self {
            FeatureColumn::Usage => r.usage.map(Usage::as_str),
            FeatureColumn::WallType => r.wall_type.as_deref(),
            FeatureColumn::WallMaterial => r.wall_material.as_deref(),
            FeatureColumn::Insulation => r.insulation.as_deref(),
            FeatureColumn::Glazing => r.glazing.as_deref(),
            _ => None,
        }
    }
}

/// Model-ready rows, one per (building, band).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub task: LinkType,
    pub columns: Vec<FeatureColumn>,
    pub schema: Schema,
    pub rows: Vec<Vec<f64>>,
    /// Index into the record slice for each row.
    pub building: Vec<usize>,
    pub band: Vec<u32>,
    /// Unknown categorical values that were coded as `other`.
    pub warnings: Vec<String>,
}

impl FeatureTable {
    pub fn row_of(&self, building: usize, band: u32) -> Option<usize> {
        (0..self.rows.len()).find(|&i| self.building[i] == building && self.band[i] == band)
    }
}

/// Fits codes for every categorical column over the given records and bands.
pub fn fit_codebook(records: &[BuildingRecord], bands: &[u32]) -> CodeBook {
    let mut book = CodeBook::default();
    let band_names: Vec<String> = bands.iter().map(u32::to_string).collect();
    CodeBook::fit("band", band_names.iter().map(String::as_str), &mut book);
    CodeBook::fit("usage", Usage::ALL.iter().map(|u| u.as_str()), &mut book);
    for col in [
        FeatureColumn::WallType,
        FeatureColumn::WallMaterial,
        FeatureColumn::Insulation,
        FeatureColumn::Glazing,
    ] {
        CodeBook::fit(
            col.name(),
            records.iter().filter_map(|r| col.category(r)),
            &mut book,
        );
    }
    book
}

pub fn schema_for(task: LinkType, book: &CodeBook) -> Schema {
    let cols = FeatureColumn::for_task(task);
    Schema::new(
        cols.iter().map(|c| c.name().to_string()).collect(),
        cols.iter()
            .map(|c| {
                if c.is_categorical() {
                    FeatureKind::Categorical {
                        n_categories: book.n_codes(c.name()),
                    }
                } else {
                    FeatureKind::Numeric
                }
            })
            .collect(),
    )
}

/// Builds one row per record per band with the task's columns.
pub fn build_feature_rows(
    records: &[BuildingRecord],
    bands: &[u32],
    task: LinkType,
    book: &CodeBook,
    config: &FeatureConfig,
) -> Result<FeatureTable, DatasetError> {
    let columns = FeatureColumn::for_task(task).to_vec();
    let mut table = FeatureTable {
        task,
        schema: schema_for(task, book),
        columns: columns.clone(),
        rows: Vec::with_capacity(records.len() * bands.len()),
        building: Vec::new(),
        band: Vec::new(),
        warnings: Vec::new(),
    };
    for (bi, r) in records.iter().enumerate() {
        let eng = engineer_features(r, config)?;
        for &band in bands {
            let mut row = Vec::with_capacity(columns.len());
            for &c in &columns {
                let v = match c {
                    FeatureColumn::Band | FeatureColumn::Usage => {
                        let raw = if c == FeatureColumn::Band {
                            band.to_string()
                        } else {
                            require(r, r.usage, "usage")?.as_str().to_string()
                        };
                        encode(book, c, &raw, &r.id, &mut table.warnings)
                    }
                    FeatureColumn::WallType
                    | FeatureColumn::WallMaterial
                    | FeatureColumn::Insulation
                    | FeatureColumn::Glazing => {
                        let raw = c.category(r).ok_or_else(|| DatasetError::Incomplete {
                            building: r.id.clone(),
                            field: c.name().to_string(),
                        })?;
                        encode(book, c, raw, &r.id, &mut table.warnings)
                    }
                    FeatureColumn::EnergyMean => require(r, r.energy_mean, "energy_mean")?,
                    FeatureColumn::EnergyStd => require(r, r.energy_std, "energy_std")?,
                    FeatureColumn::Year => f64::from(require(r, r.year, "year")?),
                    FeatureColumn::Height => require(r, r.height, "height")?,
                    FeatureColumn::Area => eng.metrics.area,
                    FeatureColumn::VertexCount => eng.metrics.vertex_count as f64,
                    FeatureColumn::Compactness => eng.metrics.compactness,
                    FeatureColumn::Epc => f64::from(require(r, r.epc, "epc")?),
                    FeatureColumn::InnerWalls => f64::from(eng.inner_walls),
                    FeatureColumn::FloorCount => f64::from(require(r, r.floors, "floors")?),
                    FeatureColumn::WallToWall => eng.wall_to_wall,
                    FeatureColumn::FloorToCeiling => eng.floor_to_ceiling,
                };
                row.push(v);
            }
            table.rows.push(row);
            table.building.push(bi);
            table.band.push(band);
        }
    }
    Ok(table)
}

fn encode(
    book: &CodeBook,
    column: FeatureColumn,
    raw: &str,
    building: &str,
    warnings: &mut Vec<String>,
) -> f64 {
    let (code, unknown) = book.encode(column.name(), raw);
    if unknown {
        let msg = format!(
            "building `{building}`: unknown {} `{raw}` coded as other",
            column.name()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    code as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoplane::Polygon;

    fn record(side_x: f64, side_y: f64, usage: Usage) -> BuildingRecord {
        let mut r =
            BuildingRecord::bare("r", Polygon::rectangle(0.0, 0.0, side_x, side_y).unwrap());
        r.height = Some(3.0);
        r.floors = Some(1);
        r.year = Some(1990);
        r.usage = Some(usage);
        r.wall_type = Some("cavity".into());
        r.wall_material = Some("brick".into());
        r.insulation = Some("filled".into());
        r.glazing = Some("double".into());
        r.epc = Some(4);
        r.energy_mean = Some(150.0);
        r.energy_std = Some(20.0);
        r
    }

    #[test]
    fn residential_two_room_example() {
        let e = engineer_features(
            &record(74.0, 1.0, Usage::Residential),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(e.rooms_per_floor, 2);
        assert_eq!(e.inner_walls, 1);
        assert!((e.wall_to_wall - 37f64.sqrt()).abs() < 1e-12);
        assert!((e.wall_to_wall - 6.08).abs() < 0.005);
    }

    #[test]
    fn small_footprint_has_no_inner_walls() {
        let e = engineer_features(
            &record(6.0, 5.0, Usage::Commercial),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!((e.rooms_per_floor, e.inner_walls), (1, 0));
    }

    #[test]
    fn floor_to_ceiling_divides_and_clamps() {
        let mut r = record(10.0, 10.0, Usage::Residential);
        r.height = Some(30.0);
        r.floors = Some(10);
        assert_eq!(
            engineer_features(&r, &FeatureConfig::default())
                .unwrap()
                .floor_to_ceiling,
            3.0
        );
        r.floors = Some(1);
        assert_eq!(
            engineer_features(&r, &FeatureConfig::default())
                .unwrap()
                .floor_to_ceiling,
            4.5
        );
    }

    #[test]
    fn task_columns_follow_feature_sets() {
        let o2i = FeatureColumn::for_task(LinkType::O2I);
        let i2i = FeatureColumn::for_task(LinkType::I2I);
        assert!(!o2i.contains(&FeatureColumn::FloorCount));
        assert!(!o2i.contains(&FeatureColumn::InnerWalls));
        assert!(!i2i.contains(&FeatureColumn::Glazing));
        assert!(o2i.contains(&FeatureColumn::Band) && i2i.contains(&FeatureColumn::Band));
    }

    #[test]
    fn two_bands_differ_only_in_band_code() {
        let recs = vec![record(20.0, 10.0, Usage::Residential)];
        let book = fit_codebook(&recs, &[1300, 6300]);
        let t = build_feature_rows(
            &recs,
            &[1300, 6300],
            LinkType::O2I,
            &book,
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        let diffs: Vec<usize> = (0..t.columns.len())
            .filter(|&j| t.rows[0][j] != t.rows[1][j])
            .collect();
        assert_eq!(diffs, vec![0]);
        t.schema.check_row(&t.rows[0]).unwrap();
    }

    #[test]
    fn unknown_category_maps_to_other_with_warning() {
        let recs = vec![record(20.0, 10.0, Usage::Residential)];
        let book = fit_codebook(&recs, &[1300]);
        let mut other = recs.clone();
        other[0].glazing = Some("vacuum".into());
        let t = build_feature_rows(
            &other,
            &[1300],
            LinkType::O2I,
            &book,
            &FeatureConfig::default(),
        )
        .unwrap();
        let j = t
            .columns
            .iter()
            .position(|c| *c == FeatureColumn::Glazing)
            .unwrap();
        assert_eq!(t.rows[0][j], 0.0);
        assert_eq!(t.warnings.len(), 1);
    }
}
