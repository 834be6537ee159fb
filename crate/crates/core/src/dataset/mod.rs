//! Building and measurement tables: ingestion, metadata fusion, imputation
//! and model-ready feature rows.

mod features;
mod impute;
mod ingest;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::ForestError;
use crate::geoplane::{GeoError, Point, Polygon};

pub use features::{
    build_feature_rows, engineer_features, fit_codebook, schema_for, EngineeredFeatures,
    FeatureColumn, FeatureConfig, FeatureTable,
};
pub use impute::{impute_attributes, ImputeConfig, ImputeReport};
pub use ingest::{
    load_buildings, load_samples, read_metadata, samples_to_csv, write_buildings_geojson,
    write_feature_collection, write_metadata_csv, JoinReport, LoadedBuildings, LoadedSamples,
    MetadataRow, JOIN_TOLERANCE_M, MAX_RSRP_DBM, MIN_RSRP_DBM, SAMPLE_COLUMNS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("metadata row {row} is equidistant from footprints `{a}` and `{b}`")]
    AmbiguousJoin { row: usize, a: String, b: String },
    #[error("column `{column}` has only {observed:.1}% observed values")]
    InsufficientData { column: String, observed: f64 },
    #[error("building `{building}` is missing `{field}`")]
    Incomplete { building: String, field: String },
    #[error("building `{building}`: {source}")]
    Geometry { building: String, source: GeoError },
    #[error("regression failed: {0}")]
    Forest(#[from] ForestError),
    #[error("invalid attribute: {0}")]
    Invalid(String),
}

/// Functional grouping of raw land-use labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Usage {
    Residential,
    Commercial,
    Civic,
    Other,
}

impl Usage {
    pub const ALL: [Usage; 4] = [
        Usage::Residential,
        Usage::Commercial,
        Usage::Civic,
        Usage::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Residential => "residential",
            Usage::Commercial => "commercial",
            Usage::Civic => "civic",
            Usage::Other => "other",
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Usage {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Usage::ALL
            .into_iter()
            .find(|u| u.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| DatasetError::Invalid(format!("unknown usage group `{s}`")))
    }
}

const DEFAULT_USAGE_GROUPS: &str = include_str!("../../data/usage_groups.csv");

/// Editable mapping from raw land-use labels to [`Usage`] groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageGroups {
    map: BTreeMap<String, Usage>,
}

impl Default for UsageGroups {
    fn default() -> Self {
        Self::from_csv(DEFAULT_USAGE_GROUPS).expect("bundled usage table is valid")
    }
}

impl UsageGroups {
    /// Parses a two-column `raw,group` CSV.
    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_error("usage_groups", i + 2, e))?;
            let (Some(raw), Some(group)) = (rec.get(0), rec.get(1)) else {
                return Err(parse_error("usage_groups", i + 2, "expected two columns"));
            };
            let group: Usage = group
                .parse()
                .map_err(|e| parse_error("usage_groups", i + 2, e))?;
            map.insert(raw.trim().to_ascii_lowercase(), group);
        }
        Ok(Self { map })
    }

    /// Unknown labels fall into [`Usage::Other`].
    pub fn group(&self, raw: &str) -> Usage {
        let key = raw.trim().to_ascii_lowercase();
        self.map
            .get(&key)
            .copied()
            .or_else(|| key.parse().ok())
            .unwrap_or(Usage::Other)
    }
}

pub(crate) fn parse_error(
    source_name: &str,
    line: usize,
    message: impl fmt::Display,
) -> DatasetError {
    DatasetError::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.to_string(),
    }
}

/// Maps an EPC letter (A best, G worst) or digit to the ordinal 1..=7.
pub fn parse_epc(s: &str) -> Option<u8> {
    let s = s.trim();
    match s.len() {
        1 => {
            let c = s.as_bytes()[0].to_ascii_uppercase();
            match c {
                b'A'..=b'G' => Some(c - b'A' + 1),
                b'1'..=b'7' => Some(c - b'0'),
                _ => None,
            }
        }
        _ => None,
    }
}

pub fn epc_letter(v: u8) -> char {
    (b'A' + v.clamp(1, 7) - 1) as char
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    pub polygon: Polygon,
    pub height: Option<f64>,
    pub floors: Option<u32>,
    pub year: Option<i32>,
    pub usage: Option<Usage>,
    pub wall_type: Option<String>,
    pub wall_material: Option<String>,
    pub insulation: Option<String>,
    pub glazing: Option<String>,
    pub epc: Option<u8>,
    pub energy_mean: Option<f64>,
    pub energy_std: Option<f64>,
}

impl BuildingRecord {
    pub fn bare(id: impl Into<String>, polygon: Polygon) -> Self {
        Self {
            id: id.into(),
            polygon,
            height: None,
            floors: None,
            year: None,
            usage: None,
            wall_type: None,
            wall_material: None,
            insulation: None,
            glazing: None,
            epc: None,
            energy_mean: None,
            energy_std: None,
        }
    }

    /// True when every optional attribute is present.
    pub fn is_complete(&self) -> bool {
        self.height.is_some()
            && self.floors.is_some()
            && self.year.is_some()
            && self.usage.is_some()
            && self.wall_type.is_some()
            && self.wall_material.is_some()
            && self.insulation.is_some()
            && self.glazing.is_some()
            && self.epc.is_some()
            && self.energy_mean.is_some()
            && self.energy_std.is_some()
    }

    /// Checks the attribute invariants of present values.
    pub fn validate(&self, current_year: i32) -> Result<(), DatasetError> {
        let bad = |what: &str| {
            Err(DatasetError::Invalid(format!(
                "building `{}`: {what}",
                self.id
            )))
        };
        if self.floors == Some(0) {
            return bad("floor count must be at least 1");
        }
        if self.height.is_some_and(|h| !(h > 0.0) || !h.is_finite()) {
            return bad("height must be positive");
        }
        if self
            .year
            .is_some_and(|y| !(1800..=current_year).contains(&y))
        {
            return bad("construction year out of range");
        }
        if self.energy_std.is_some_and(|s| !(s >= 0.0)) {
            return bad("energy std must be non-negative");
        }
        if self.energy_mean.is_some_and(|m| !m.is_finite()) {
            return bad("energy mean must be finite");
        }
        if self.epc.is_some_and(|e| !(1..=7).contains(&e)) {
            return bad("EPC ordinal must be in 1..=7");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub id: String,
    pub position: Point,
    /// Reported horizontal accuracy, used as the isotropic position std (m).
    pub accuracy: f64,
    pub cell_id: u64,
    pub earfcn: u32,
    pub rsrp: f64,
    pub timestamp: i64,
}

/// Local equirectangular frame about an origin; adequate for city-scale extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin_lon: f64,
    pub origin_lat: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

impl LocalFrame {
    pub fn new(origin_lon: f64, origin_lat: f64) -> Self {
        Self {
            origin_lon,
            origin_lat,
        }
    }

    pub fn to_local(&self, lon: f64, lat: f64) -> Point {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Point::new(
            (lon - self.origin_lon) * k * self.origin_lat.to_radians().cos(),
            (lat - self.origin_lat) * k,
        )
    }

    pub fn to_geo(&self, p: Point) -> (f64, f64) {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        (
            self.origin_lon + p.x / (k * self.origin_lat.to_radians().cos()),
            self.origin_lat + p.y / k,
        )
    }
}

/// Integer codes for categorical values. Code 0 is reserved for `other`,
/// which also absorbs values unseen at fit time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBook {
    pub columns: BTreeMap<String, Vec<String>>,
}

pub const OTHER_CODE: &str = "other";

impl CodeBook {
    pub fn fit<'a>(column: &str, values: impl IntoIterator<Item = &'a str>, book: &mut CodeBook) {
        let mut seen: Vec<String> = values.into_iter().map(str::to_string).collect();
        seen.sort();
        seen.dedup();
        seen.retain(|v| v != OTHER_CODE);
        seen.insert(0, OTHER_CODE.to_string());
        book.columns.insert(column.to_string(), seen);
    }

    pub fn n_codes(&self, column: &str) -> usize {
        self.columns.get(column).map_or(1, Vec::len)
    }

    /// Returns the code and whether the value was unknown.
    pub fn encode(&self, column: &str, value: &str) -> (usize, bool) {
        match self
            .columns
            .get(column)
            .and_then(|v| v.iter().position(|x| x == value))
        {
            Some(i) => (i, false),
            None => (0, value != OTHER_CODE),
        }
    }

    pub fn decode(&self, column: &str, code: usize) -> Option<&str> {
        self.columns.get(column)?.get(code).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("code book serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        serde_json::from_str(text).map_err(|e| parse_error("codebook", e.line(), e))
    }
}

/// Role of a building in an evaluation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
    Hidden,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "validation",
            SplitRole::Test => "test",
            SplitRole::Hidden => "hidden",
        }
    }
}

impl FromStr for SplitRole {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(SplitRole::Train),
            "validation" => Ok(SplitRole::Validation),
            "test" => Ok(SplitRole::Test),
            "hidden" => Ok(SplitRole::Hidden),
            other => Err(DatasetError::Invalid(format!(
                "unknown split role `{other}`"
            ))),
        }
    }
}

/// Assigns whole buildings to roles, in the given proportions, so that no
/// building contributes rows to more than one role. `strata` (for example a
/// label per building) is balanced across roles when given.
pub fn split_buildings(
    ids: &[String],
    strata: Option<&[usize]>,
    fractions: &[(SplitRole, f64)],
    seed: u64,
) -> BTreeMap<String, SplitRole> {
    let mut groups: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups
            .entry(strata.map_or(0, |s| s[i]))
            .or_default()
            .push(id);
    }
    let total: f64 = fractions.iter().map(|f| f.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for (_, mut members) in groups {
        members.sort();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let mut start = 0usize;
        let mut acc = 0.0;
        for (k, &(role, f)) in fractions.iter().enumerate() {
            acc += f / total;
            let end = if k + 1 == fractions.len() {
                members.len()
            } else {
                (acc * n).round() as usize
            };
            for id in &members[start..end.max(start)] {
                out.insert((*id).clone(), role);
            }
            start = end.max(start);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_table_groups_raw_labels() {
        let g = UsageGroups::default();
        assert_eq!(g.group("Apartments"), Usage::Residential);
        assert_eq!(g.group("retail"), Usage::Commercial);
        assert_eq!(g.group("school"), Usage::Civic);
        assert_eq!(g.group("warehouse-ish thing"), Usage::Other);
        assert_eq!(g.group("commercial"), Usage::Commercial);
    }

    #[test]
    fn epc_letters_map_to_ordinals() {
        assert_eq!(parse_epc("A"), Some(1));
        assert_eq!(parse_epc("g"), Some(7));
        assert_eq!(parse_epc("4"), Some(4));
        assert_eq!(parse_epc("H"), None);
        assert_eq!(epc_letter(3), 'C');
    }

    #[test]
    fn codebook_round_trips() {
        let mut book = CodeBook::default();
        CodeBook::fit(
            "glazing",
            ["double", "single", "low-e", "double"],
            &mut book,
        );
        for v in ["double", "single", "low-e"] {
            let (c, unknown) = book.encode("glazing", v);
            assert!(!unknown);
            assert_eq!(book.decode("glazing", c), Some(v));
        }
        assert_eq!(book.encode("glazing", "quadruple"), (0, true));
        let back = CodeBook::from_json(&book.to_json()).unwrap();
        assert_eq!(back, book);
    }

    #[test]
    fn frame_round_trips() {
        let f = LocalFrame::new(-0.1276, 51.5072);
        let p = f.to_local(-0.12, 51.51);
        let (lon, lat) = f.to_geo(p);
        assert!((lon + 0.12).abs() < 1e-12 && (lat - 51.51).abs() < 1e-12);
        // 0.001 degree of latitude is about 111 m.
        let q = f.to_local(-0.1276, 51.5082);
        assert!((q.y - 111.19).abs() < 0.01);
    }

    #[test]
    fn split_never_shares_buildings_and_respects_fractions() {
        let ids: Vec<String> = (0..100).map(|i| format!("b{i:03}")).collect();
        let strata: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let split = split_buildings(
            &ids,
            Some(&strata),
            &[(SplitRole::Train, 0.7), (SplitRole::Test, 0.3)],
            7,
        );
        assert_eq!(split.len(), 100);
        let n_test = split.values().filter(|r| **r == SplitRole::Test).count();
        assert!((28..=32).contains(&n_test), "{n_test}");
        let again = split_buildings(
            &ids,
            Some(&strata),
            &[(SplitRole::Train, 0.7), (SplitRole::Test, 0.3)],
            7,
        );
        assert_eq!(split, again);
    }
}
