use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{
    epc_letter, parse_epc, parse_error, BuildingRecord, DatasetError, LocalFrame,
    MeasurementSample, UsageGroups,
};
use crate::geoplane::{Point, Polygon};

pub const MIN_RSRP_DBM: f64 = -160.0;
pub const MAX_RSRP_DBM: f64 = -40.0;
/// Metadata rows without an id join the footprint whose centroid lies within this distance.
pub const JOIN_TOLERANCE_M: f64 = 5.0;

const ATTRIBUTE_COLUMNS: [&str; 11] = [
    "height",
    "floors",
    "year",
    "usage",
    "wall_type",
    "wall_material",
    "insulation",
    "glazing",
    "epc",
    "energy_mean",
    "energy_std",
];

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct JoinReport {
    /// Footprint ids that received no metadata row.
    pub unmatched_footprints: Vec<String>,
    /// Line numbers of metadata rows that matched no footprint.
    pub unmatched_metadata: Vec<usize>,
    /// Line numbers of metadata rows for a footprint that was already joined.
    pub duplicate_metadata: Vec<usize>,
    pub spatial_joins: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct LoadedBuildings {
    pub records: Vec<BuildingRecord>,
    pub frame: LocalFrame,
    pub report: JoinReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetadataRow {
    pub line: usize,
    pub id: Option<String>,
    pub lonlat: Option<(f64, f64)>,
    pub fields: BTreeMap<String, String>,
}

fn geo_error(line: usize, msg: impl std::fmt::Display) -> DatasetError {
    parse_error("footprints", line, msg)
}

fn ring_coords(v: &Value, feature: usize) -> Result<Vec<(f64, f64)>, DatasetError> {
    let arr = v
        .as_array()
        .ok_or_else(|| geo_error(feature, "ring is not an array"))?;
    arr.iter()
        .map(|p| {
            let lon = p.get(0).and_then(Value::as_f64);
            let lat = p.get(1).and_then(Value::as_f64);
            match (lon, lat) {
                (Some(lon), Some(lat)) => Ok((lon, lat)),
                _ => Err(geo_error(feature, "malformed position")),
            }
        })
        .collect()
}

fn polygon_rings(geometry: &Value, feature: usize) -> Result<Vec<Vec<(f64, f64)>>, DatasetError> {
    let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| geo_error(feature, "geometry has no coordinates"))?;
    let parse_poly = |c: &Value| -> Result<Vec<Vec<(f64, f64)>>, DatasetError> {
        c.as_array()
            .ok_or_else(|| geo_error(feature, "polygon is not an array of rings"))?
            .iter()
            .map(|r| ring_coords(r, feature))
            .collect()
    };
    match kind {
        "Polygon" => parse_poly(coords),
        "MultiPolygon" => {
            // Keep the part with the longest exterior ring; footprints are single parts.
            let parts = coords
                .as_array()
                .ok_or_else(|| geo_error(feature, "multipolygon is not an array"))?
                .iter()
                .map(parse_poly)
                .collect::<Result<Vec<_>, _>>()?;
            parts
                .into_iter()
                .max_by_key(|p| p.first().map_or(0, Vec::len))
                .ok_or_else(|| geo_error(feature, "empty multipolygon"))
        }
        other => Err(geo_error(
            feature,
            format!("unsupported geometry type `{other}`"),
        )),
    }
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn apply_fields(
    record: &mut BuildingRecord,
    fields: &BTreeMap<String, String>,
    usage: &UsageGroups,
    warnings: &mut Vec<String>,
) {
    let id = record.id.clone();
    let mut warn = |field: &str, v: &str| {
        warnings.push(format!("building `{id}`: ignored invalid {field} `{v}`"))
    };
    for (key, raw) in fields {
        let v = raw.trim();
        if v.is_empty() {
            continue;
        }
        match key.as_str() {
            "height" => match v.parse::<f64>() {
                Ok(h) if h > 0.0 && h.is_finite() => record.height = Some(h),
                _ => warn(key, v),
            },
            "floors" => match v.parse::<f64>() {
                Ok(f) if f >= 1.0 && f.fract() == 0.0 && f < 1e4 => record.floors = Some(f as u32),
                _ => warn(key, v),
            },
            "year" => match v.parse::<f64>() {
                Ok(y) if y >= 1800.0 && y.fract() == 0.0 && y < 1e4 => record.year = Some(y as i32),
                _ => warn(key, v),
            },
            "usage" => record.usage = Some(usage.group(v)),
            "wall_type" => record.wall_type = Some(v.to_string()),
            "wall_material" => record.wall_material = Some(v.to_string()),
            "insulation" => record.insulation = Some(v.to_string()),
            "glazing" => record.glazing = Some(v.to_string()),
            "epc" => match parse_epc(v) {
                Some(e) => record.epc = Some(e),
                None => warn(key, v),
            },
            "energy_mean" => match v.parse::<f64>() {
                Ok(m) if m.is_finite() => record.energy_mean = Some(m),
                _ => warn(key, v),
            },
            "energy_std" => match v.parse::<f64>() {
                Ok(s) if s >= 0.0 && s.is_finite() => record.energy_std = Some(s),
                _ => warn(key, v),
            },
            _ => {}
        }
    }
}

/// Parses a metadata CSV (header row required; `#` lines are comments).
pub fn read_metadata(text: &str) -> Result<Vec<MetadataRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error("metadata", 1, e))?
        .clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error("metadata", line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut fields = BTreeMap::new();
        let mut id = None;
        let (mut lon, mut lat) = (None, None);
        for (h, v) in headers.iter().zip(rec.iter()) {
            match h {
                "id" => id = (!v.is_empty()).then(|| v.to_string()),
                "lon" | "lat" if !v.is_empty() => {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| parse_error("metadata", line, format!("bad {h} `{v}`")))?;
                    if h == "lon" {
                        lon = Some(x);
                    } else {
                        lat = Some(x);
                    }
                }
                _ => {
                    fields.insert(h.to_string(), v.to_string());
                }
            }
        }
        rows.push(MetadataRow {
            line,
            id,
            lonlat: lon.zip(lat),
            fields,
        });
    }
    Ok(rows)
}

/// Reads footprints from a GeoJSON FeatureCollection and left-joins metadata.
///
/// The local frame origin is the collection's `origin` member (`[lon, lat]`)
/// when present, otherwise the centre of the footprints' bounding box.
pub fn load_buildings(
    footprints: &str,
    metadata: Option<&str>,
    usage: &UsageGroups,
) -> Result<LoadedBuildings, DatasetError> {
    let doc: Value = serde_json::from_str(footprints).map_err(|e| geo_error(e.line(), e))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(geo_error(1, "expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| geo_error(1, "FeatureCollection has no features array"))?;

    struct Raw {
        id: String,
        rings: Vec<Vec<(f64, f64)>>,
        props: BTreeMap<String, String>,
    }
    let mut raws = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geometry = f
            .get("geometry")
            .ok_or_else(|| geo_error(i, "feature has no geometry"))?;
        let rings = polygon_rings(geometry, i)?;
        let empty = Map::new();
        let props = f
            .get("properties")
            .and_then(Value::as_object)
            .unwrap_or(&empty);
        let id = props
            .get("id")
            .and_then(value_to_string)
            .or_else(|| f.get("id").and_then(value_to_string))
            .unwrap_or_else(|| format!("feature-{i}"));
        let props = props
            .iter()
            .filter(|(k, _)| ATTRIBUTE_COLUMNS.contains(&k.as_str()))
            .filter_map(|(k, v)| value_to_string(v).map(|s| (k.clone(), s)))
            .collect();
        raws.push(Raw { id, rings, props });
    }

    let frame = match doc.get("origin").and_then(Value::as_array) {
        Some(o) => match (
            o.first().and_then(Value::as_f64),
            o.get(1).and_then(Value::as_f64),
        ) {
            (Some(lon), Some(lat)) => LocalFrame::new(lon, lat),
            _ => return Err(geo_error(1, "malformed origin member")),
        },
        None => {
            let pts = raws.iter().flat_map(|r| r.rings.iter().flatten());
            let (mut lo, mut hi) = (
                (f64::INFINITY, f64::INFINITY),
                (f64::NEG_INFINITY, f64::NEG_INFINITY),
            );
            for &(x, y) in pts {
                lo = (lo.0.min(x), lo.1.min(y));
                hi = (hi.0.max(x), hi.1.max(y));
            }
            if !lo.0.is_finite() {
                (lo, hi) = ((0.0, 0.0), (0.0, 0.0));
            }
            LocalFrame::new(0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1))
        }
    };

    let mut report = JoinReport::default();
    let mut records = Vec::with_capacity(raws.len());
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in raws.iter().enumerate() {
        let mut rings = raw.rings.iter().map(|r| {
            r.iter()
                .map(|&(lon, lat)| frame.to_local(lon, lat))
                .collect::<Vec<Point>>()
        });
        let exterior = rings
            .next()
            .ok_or_else(|| geo_error(i, "polygon has no rings"))?;
        let polygon =
            Polygon::new(exterior, rings.collect()).map_err(|source| DatasetError::Geometry {
                building: raw.id.clone(),
                source,
            })?;
        if by_id.insert(raw.id.clone(), i).is_some() {
            return Err(geo_error(i, format!("duplicate footprint id `{}`", raw.id)));
        }
        let mut record = BuildingRecord::bare(raw.id.clone(), polygon);
        apply_fields(&mut record, &raw.props, usage, &mut report.warnings);
        records.push(record);
    }

    let mut joined = vec![false; records.len()];
    if let Some(text) = metadata {
        let centroids: Vec<Point> = records.iter().map(|r| r.polygon.centroid()).collect();
        for row in read_metadata(text)? {
            let target = match row.id.as_ref().and_then(|id| by_id.get(id)) {
                Some(&i) => Some(i),
                None => match row.lonlat {
                    Some((lon, lat)) => {
                        let p = frame.to_local(lon, lat);
                        let mut best: Vec<(f64, usize)> = centroids
                            .iter()
                            .enumerate()
                            .map(|(i, c)| (c.distance(p), i))
                            .filter(|(d, _)| *d <= JOIN_TOLERANCE_M)
                            .collect();
                        best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                        if best.len() >= 2 && (best[1].0 - best[0].0).abs() <= 1e-9 {
                            return Err(DatasetError::AmbiguousJoin {
                                row: row.line,
                                a: records[best[0].1].id.clone(),
                                b: records[best[1].1].id.clone(),
                            });
                        }
                        if !best.is_empty() {
                            report.spatial_joins += 1;
                        }
                        best.first().map(|b| b.1)
                    }
                    None => None,
                },
            };
            match target {
                Some(i) if joined[i] => report.duplicate_metadata.push(row.line),
                Some(i) => {
                    joined[i] = true;
                    apply_fields(&mut records[i], &row.fields, usage, &mut report.warnings);
                }
                None => report.unmatched_metadata.push(row.line),
            }
        }
        report.unmatched_footprints = records
            .iter()
            .zip(&joined)
            .filter(|(_, j)| !**j)
            .map(|(r, _)| r.id.clone())
            .collect();
    }
    Ok(LoadedBuildings {
        records,
        frame,
        report,
    })
}

fn ring_json(ring: &[Point], frame: &LocalFrame) -> Value {
    let mut coords: Vec<Value> = ring
        .iter()
        .map(|&p| {
            let (lon, lat) = frame.to_geo(p);
            json!([lon, lat])
        })
        .collect();
    if let Some(first) = coords.first().cloned() {
        coords.push(first);
    }
    Value::Array(coords)
}

fn attribute_fields(r: &BuildingRecord) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("height", r.height.map(|v| v.to_string())),
        ("floors", r.floors.map(|v| v.to_string())),
        ("year", r.year.map(|v| v.to_string())),
        ("usage", r.usage.map(|v| v.to_string())),
        ("wall_type", r.wall_type.clone()),
        ("wall_material", r.wall_material.clone()),
        ("insulation", r.insulation.clone()),
        ("glazing", r.glazing.clone()),
        ("epc", r.epc.map(|v| epc_letter(v).to_string())),
        ("energy_mean", r.energy_mean.map(|v| v.to_string())),
        ("energy_std", r.energy_std.map(|v| v.to_string())),
    ]
}

/// Serializes footprints (ids only, attributes go to the metadata CSV) as a
/// FeatureCollection carrying the frame origin and any extra members.
pub fn write_buildings_geojson(
    records: &[BuildingRecord],
    frame: &LocalFrame,
    extra: Map<String, Value>,
) -> String {
    let features: Vec<(usize, Map<String, Value>)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut props = Map::new();
            props.insert("id".into(), json!(r.id));
            (i, props)
        })
        .collect();
    write_feature_collection(records, frame, &features, extra)
}

/// One feature per `(record index, properties)` entry, in the given order.
pub fn write_feature_collection(
    records: &[BuildingRecord],
    frame: &LocalFrame,
    features: &[(usize, Map<String, Value>)],
    extra: Map<String, Value>,
) -> String {
    let features: Vec<Value> = features
        .iter()
        .map(|(i, props)| {
            let rings: Vec<Value> = records[*i]
                .polygon
                .rings()
                .map(|ring| ring_json(ring, frame))
                .collect();
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("type".into(), json!("FeatureCollection"));
    doc.insert("origin".into(), json!([frame.origin_lon, frame.origin_lat]));
    for (k, v) in extra {
        doc.insert(k, v);
    }
    doc.insert("features".into(), Value::Array(features));
    serde_json::to_string(&Value::Object(doc)).expect("geojson serializes")
}

/// Metadata CSV keyed by building id; missing attributes are empty cells.
pub fn write_metadata_csv(records: &[BuildingRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id"];
    header.extend(ATTRIBUTE_COLUMNS);
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(
            attribute_fields(r)
                .into_iter()
                .map(|(_, v)| v.unwrap_or_default()),
        );
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Clone, Debug, Default)]
pub struct LoadedSamples {
    pub samples: Vec<MeasurementSample>,
    /// `(line, reason)` for rows rejected by validity rules.
    pub rejected: Vec<(usize, String)>,
}

pub const SAMPLE_COLUMNS: [&str; 8] = [
    "id",
    "lon",
    "lat",
    "accuracy_m",
    "cell_id",
    "earfcn",
    "rsrp_dbm",
    "timestamp",
];

/// Parses the sample CSV into the local frame. Rows with non-positive accuracy
/// or RSRP outside the plausible range are rejected and reported, not fatal.
pub fn load_samples(text: &str, frame: &LocalFrame) -> Result<LoadedSamples, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error("samples", 1, e))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error("samples", 1, format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = SAMPLE_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let mut out = LoadedSamples::default();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            parse_error("samples", e.position().map_or(0, |p| p.line() as usize), e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64, DatasetError> {
            field(k).parse::<f64>().map_err(|_| {
                parse_error(
                    "samples",
                    line,
                    format!("bad {} `{}`", SAMPLE_COLUMNS[k], field(k)),
                )
            })
        };
        let int = |k: usize| -> Result<i64, DatasetError> {
            field(k).parse::<i64>().map_err(|_| {
                parse_error(
                    "samples",
                    line,
                    format!("bad {} `{}`", SAMPLE_COLUMNS[k], field(k)),
                )
            })
        };
        let (lon, lat, accuracy, rsrp) = (num(1)?, num(2)?, num(3)?, num(6)?);
        let (cell, earfcn, timestamp) = (int(4)?, int(5)?, int(7)?);
        if !(accuracy > 0.0) || !accuracy.is_finite() {
            out.rejected
                .push((line, format!("accuracy {accuracy} must be positive")));
            continue;
        }
        if !(MIN_RSRP_DBM..=MAX_RSRP_DBM).contains(&rsrp) {
            out.rejected
                .push((line, format!("rsrp {rsrp} dBm out of range")));
            continue;
        }
        if cell < 0 || earfcn < 0 || earfcn > i64::from(u32::MAX) {
            out.rejected
                .push((line, "negative cell id or earfcn".into()));
            continue;
        }
        out.samples.push(MeasurementSample {
            id: field(0).to_string(),
            position: frame.to_local(lon, lat),
            accuracy,
            cell_id: cell as u64,
            earfcn: earfcn as u32,
            rsrp,
            timestamp,
        });
    }
    Ok(out)
}

pub fn samples_to_csv(samples: &[MeasurementSample], frame: &LocalFrame) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SAMPLE_COLUMNS).expect("in-memory write");
    for s in samples {
        let (lon, lat) = frame.to_geo(s.position);
        w.write_record([
            s.id.clone(),
            lon.to_string(),
            lat.to_string(),
            s.accuracy.to_string(),
            s.cell_id.to_string(),
            s.earfcn.to_string(),
            s.rsrp.to_string(),
            s.timestamp.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_feature(id: &str, lon: f64, lat: f64) -> Value {
        let d = 0.0001;
        json!({
            "type": "Feature",
            "properties": { "id": id },
            "geometry": { "type": "Polygon", "coordinates": [[
                [lon, lat], [lon + d, lat], [lon + d, lat + d], [lon, lat + d], [lon, lat]
            ]]}
        })
    }

    fn three_footprints() -> String {
        json!({
            "type": "FeatureCollection",
            "features": [
                square_feature("a", 0.0, 51.0),
                square_feature("b", 0.001, 51.0),
                square_feature("c", 0.002, 51.0),
            ]
        })
        .to_string()
    }

    #[test]
    fn exact_id_join() {
        let meta =
            "id,height,floors,usage,epc\na,10,3,apartments,C\nb,6,2,retail,B\nc,20,5,school,\n";
        let out = load_buildings(&three_footprints(), Some(meta), &UsageGroups::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.report.unmatched_footprints.is_empty());
        assert!(out.report.unmatched_metadata.is_empty());
        assert_eq!(out.records[0].floors, Some(3));
        assert_eq!(out.records[0].epc, Some(3));
        assert_eq!(out.records[1].usage, Some(super::super::Usage::Commercial));
        assert_eq!(out.records[2].epc, None);
    }

    #[test]
    fn left_join_reports_unmatched_footprint() {
        let meta = "id,height\na,10\nc,20\n";
        let out = load_buildings(&three_footprints(), Some(meta), &UsageGroups::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.report.unmatched_footprints, vec!["b".to_string()]);
        let b = &out.records[1];
        assert_eq!(b.id, "b");
        assert!(
            b.height.is_none() && b.floors.is_none() && b.usage.is_none() && b.glazing.is_none()
        );
    }

    #[test]
    fn spatial_join_within_tolerance() {
        let fc = three_footprints();
        let loaded = load_buildings(&fc, None, &UsageGroups::default()).unwrap();
        let c = loaded.records[1].polygon.centroid();
        let (lon, lat) = loaded.frame.to_geo(Point::new(c.x + 2.0, c.y));
        let (flon, flat) = loaded.frame.to_geo(Point::new(c.x + 40.0, c.y));
        let meta = format!("id,lon,lat,height\n,{lon},{lat},12\n,{flon},{flat},9\n");
        let out = load_buildings(&fc, Some(&meta), &UsageGroups::default()).unwrap();
        assert_eq!(out.records[1].height, Some(12.0));
        assert_eq!(out.report.spatial_joins, 1);
        assert_eq!(out.report.unmatched_metadata.len(), 1);
    }

    #[test]
    fn equidistant_spatial_join_is_ambiguous() {
        let frame = LocalFrame::new(0.0, 0.0);
        let recs = vec![
            BuildingRecord::bare("l", Polygon::rectangle(-5.0, -1.0, -1.0, 1.0).unwrap()),
            BuildingRecord::bare("r", Polygon::rectangle(1.0, -1.0, 5.0, 1.0).unwrap()),
        ];
        let fc = write_buildings_geojson(&recs, &frame, Map::new());
        let meta = "id,lon,lat,height\n,0,0,7\n";
        let err = load_buildings(&fc, Some(meta), &UsageGroups::default()).unwrap_err();
        assert!(matches!(err, DatasetError::AmbiguousJoin { .. }), "{err:?}");
    }

    #[test]
    fn samples_round_trip_and_reject_invalid() {
        let frame = LocalFrame::new(-0.1, 51.5);
        let s = MeasurementSample {
            id: "s1".into(),
            position: Point::new(12.5, -3.25),
            accuracy: 4.0,
            cell_id: 7,
            earfcn: 1300,
            rsrp: -95.5,
            timestamp: 1_700_000_000,
        };
        let mut text = samples_to_csv(std::slice::from_ref(&s), &frame);
        text.push_str("s2,-0.1,51.5,0,7,1300,-90,0\ns3,-0.1,51.5,3,7,1300,-20,0\n");
        let out = load_samples(&text, &frame).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.rejected.len(), 2);
        let back = &out.samples[0];
        assert!(back.position.distance(s.position) < 1e-6);
        assert_eq!((back.cell_id, back.earfcn, back.rsrp), (7, 1300, -95.5));
    }

    #[test]
    fn malformed_sample_reports_line() {
        let text = "id,lon,lat,accuracy_m,cell_id,earfcn,rsrp_dbm,timestamp\na,0,0,3,1,1300,-90,0\nb,zero,0,3,1,1300,-90,0\n";
        match load_samples(text, &LocalFrame::new(0.0, 0.0)) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn geojson_round_trip_preserves_geometry() {
        let frame = LocalFrame::new(-0.12, 51.5);
        let mut rec = BuildingRecord::bare("x", Polygon::rectangle(0.0, 0.0, 20.0, 10.0).unwrap());
        rec.height = Some(9.5);
        rec.glazing = Some("low-e".into());
        let fc = write_buildings_geojson(std::slice::from_ref(&rec), &frame, Map::new());
        let meta = write_metadata_csv(std::slice::from_ref(&rec));
        let out = load_buildings(&fc, Some(&meta), &UsageGroups::default()).unwrap();
        let back = &out.records[0];
        assert_eq!(out.frame, frame);
        assert_eq!(back.height, Some(9.5));
        assert_eq!(back.glazing.as_deref(), Some("low-e"));
        for (a, b) in back.polygon.exterior().iter().zip(rec.polygon.exterior()) {
            assert!(a.distance(*b) < 1e-6);
        }
    }
}
