//! Seeded synthetic city with a known attenuation model.
//!
//! Buildings sit one per plot on a street grid. Each receives a true O2I and
//! I2I class; attributes are then drawn conditionally on those classes, so
//! the two channels (exported files and the truth table) agree by
//! construction. Received power follows
//!
//! ```text
//! P = P_ref(band) - 10 n log10(r) - S_cell,band(x) - indoor * (pen_O2I + rate_I2I * depth)
//! ```
//!
//! where `S` is a spatially correlated log-normal shadowing field and `depth`
//! is the distance from the true position to the footprint boundary.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::class::{LossClass, N_CLASSES};
use crate::dataset::{
    samples_to_csv, write_buildings_geojson, write_metadata_csv, BuildingRecord, LocalFrame,
    MeasurementSample, Usage,
};
use crate::geoplane::{contains_point, distance_to_boundary, Point, Polygon};
use crate::seed::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario configuration: {0}")]
    Config(String),
}

/// How the true O2I class shapes the envelope attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum O2iDriver {
    /// Year, insulation, glazing, wall build-up, EPC and energy use all lean
    /// with the class; high-class buildings almost always have low-E glazing.
    #[default]
    Mixed,
    /// The class is a deterministic function of insulation and glazing
    /// levels; every other attribute is independent of it.
    InsulationGlazing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_buildings: usize,
    pub n_cells: usize,
    /// Mean samples per building; counts vary uniformly by ±20%.
    pub samples_per_building: f64,
    pub indoor_fraction: f64,
    pub bands: Vec<u32>,
    /// Reference power of the first band at 1 m (dBm).
    pub reference_power_dbm: f64,
    /// Each further band loses this much reference power (dB).
    pub band_step_db: f64,
    pub path_loss_exponent: f64,
    /// Envelope penetration per true O2I class (dB).
    pub penetration_db: [f64; N_CLASSES],
    /// Interior attenuation per true I2I class (dB per m of depth).
    pub interior_rate_db_per_m: [f64; N_CLASSES],
    pub o2i_class_shares: [f64; N_CLASSES],
    pub i2i_class_shares: [f64; N_CLASSES],
    pub shadowing_sigma_db: f64,
    pub shadowing_decorrelation_m: f64,
    /// Per-sample position std is drawn uniformly from this range (m).
    pub position_sigma_m: [f64; 2],
    /// Outdoor samples lie this far outside a footprint edge (m).
    pub sidewalk_offset_m: [f64; 2],
    pub plot_pitch_m: f64,
    /// Share of footprints with jittered, non-rectangular outlines.
    pub jittered_fraction: f64,
    pub driver: O2iDriver,
    pub origin: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_buildings: 200,
            n_cells: 3,
            samples_per_building: 100.0,
            indoor_fraction: 0.6,
            bands: vec![1300, 6300],
            reference_power_dbm: -30.0,
            band_step_db: 4.0,
            path_loss_exponent: 2.0,
            penetration_db: [5.0, 15.0, 30.0],
            interior_rate_db_per_m: [0.5, 1.2, 2.5],
            o2i_class_shares: [0.30, 0.25, 0.45],
            i2i_class_shares: [0.35, 0.35, 0.30],
            shadowing_sigma_db: 2.0,
            shadowing_decorrelation_m: 30.0,
            position_sigma_m: [2.0, 10.0],
            sidewalk_offset_m: [5.0, 8.0],
            plot_pitch_m: 50.0,
            jittered_fraction: 0.3,
            driver: O2iDriver::Mixed,
            origin: [-1.25, 52.63],
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_buildings < 10 {
            return bad(format!(
                "need at least 10 buildings, got {}",
                self.n_buildings
            ));
        }
        if self.n_cells < 1 {
            return bad("need at least one cell".into());
        }
        if self.bands.is_empty() {
            return bad("need at least one band".into());
        }
        if !(0.0..=1.0).contains(&self.indoor_fraction)
            || !(0.0..=1.0).contains(&self.jittered_fraction)
        {
            return bad("fractions must lie in [0, 1]".into());
        }
        if !(self.samples_per_building >= 0.0) {
            return bad("samples per building must be non-negative".into());
        }
        let [lo, hi] = self.position_sigma_m;
        if !(lo > 0.0 && hi >= lo) {
            return bad("position sigma range must be positive and ordered".into());
        }
        let [o_lo, o_hi] = self.sidewalk_offset_m;
        if !(o_lo > 0.0 && o_hi >= o_lo && o_hi <= self.plot_pitch_m / 2.0 - 17.0) {
            return bad("sidewalk offsets must be positive, ordered and fit between plots".into());
        }
        if self.shadowing_sigma_db < 0.0 || self.shadowing_decorrelation_m <= 0.0 {
            return bad("shadowing parameters must be non-negative".into());
        }
        let share_ok =
            |s: &[f64; N_CLASSES]| s.iter().all(|&v| v >= 0.0) && s.iter().sum::<f64>() > 0.0;
        if !share_ok(&self.o2i_class_shares) || !share_ok(&self.i2i_class_shares) {
            return bad("class shares must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    /// Configuration with shadowing removed and near-exact positions.
    pub fn noiseless(mut self) -> Self {
        self.shadowing_sigma_db = 0.0;
        self.position_sigma_m = [1e-3, 1e-3];
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u64,
    pub position: Point,
    pub bands: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueBuilding {
    pub record: BuildingRecord,
    pub o2i: LossClass,
    pub i2i: LossClass,
    pub penetration_db: f64,
    pub interior_rate_db_per_m: f64,
}

/// Gaussian-kernel random field built from random Fourier features.
#[derive(Clone, Debug, PartialEq)]
struct ShadowField {
    amplitude: f64,
    waves: Vec<(f64, f64, f64)>,
}

const SHADOW_WAVES: usize = 128;

impl ShadowField {
    fn new(rng: &mut ChaCha8Rng, sigma: f64, length: f64) -> Self {
        let normal = Normal::new(0.0, 1.0 / length).expect("positive length");
        let waves = (0..SHADOW_WAVES)
            .map(|_| {
                (
                    normal.sample(rng),
                    normal.sample(rng),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self {
            amplitude: sigma * (2.0 / SHADOW_WAVES as f64).sqrt(),
            waves,
        }
    }

    fn at(&self, p: Point) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude
            * self
                .waves
                .iter()
                .map(|&(wx, wy, ph)| (wx * p.x + wy * p.y + ph).cos())
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: SynthConfig,
    pub frame: LocalFrame,
    /// Extent of the plot grid (m), origin at the lower-left corner.
    pub extent: [f64; 2],
    pub buildings: Vec<TrueBuilding>,
    pub cells: Vec<Cell>,
    /// One field per (cell, band), cell-major.
    shadowing: Vec<ShadowField>,
}

/// Ground truth for one emitted sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub sample: String,
    /// Building the sample was drawn in or around.
    pub anchor: usize,
    /// Building containing the true position, if any.
    pub building: Option<usize>,
    pub true_position: Point,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub samples: Vec<MeasurementSample>,
    pub truth: Vec<SampleTruth>,
}

impl Emission {
    /// Drops every sample drawn in or around the given buildings.
    pub fn without(&self, hidden: &std::collections::BTreeSet<usize>) -> Emission {
        let keep: Vec<usize> = (0..self.samples.len())
            .filter(|&i| !hidden.contains(&self.truth[i].anchor))
            .collect();
        Emission {
            samples: keep.iter().map(|&i| self.samples[i].clone()).collect(),
            truth: keep.iter().map(|&i| self.truth[i].clone()).collect(),
        }
    }
}

/// Text of every exported file, in the dataset formats.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioExport {
    pub buildings_geojson: String,
    pub metadata_csv: String,
    pub samples_csv: String,
    pub truth_buildings_csv: String,
    pub truth_samples_csv: String,
}

fn pick_class(rng: &mut ChaCha8Rng, shares: &[f64; N_CLASSES]) -> LossClass {
    let total: f64 = shares.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (c, &s) in shares.iter().enumerate() {
        if u < s {
            return LossClass::from_index(c).expect("class index");
        }
        u -= s;
    }
    LossClass::High
}

fn weighted<'a>(rng: &mut ChaCha8Rng, options: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = options.iter().map(|o| o.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(v, w) in options {
        if u < w {
            return v;
        }
        u -= w;
    }
    options[options.len() - 1].0
}

pub const INSULATION_LEVELS: [&str; 4] = ["none", "partial", "cavity-filled", "external"];
pub const GLAZING_LEVELS: [&str; 4] = ["single", "double", "low-e", "triple"];

fn footprint(rng: &mut ChaCha8Rng, center: Point, w: f64, h: f64, jitter: bool) -> Polygon {
    let (x0, y0, x1, y1) = (
        center.x - w / 2.0,
        center.y - h / 2.0,
        center.x + w / 2.0,
        center.y + h / 2.0,
    );
    if !jitter {
        return Polygon::rectangle(x0, y0, x1, y1).expect("positive rectangle");
    }
    // Corners and edge midpoints, each nudged; small against the sides, so
    // the outline stays simple.
    let base = [
        (x0, y0),
        (center.x, y0),
        (x1, y0),
        (x1, center.y),
        (x1, y1),
        (center.x, y1),
        (x0, y1),
        (x0, center.y),
    ];
    let amp = 0.08 * w.min(h);
    let ring = base
        .iter()
        .map(|&(x, y)| {
            Point::new(
                x + rng.random_range(-amp..=amp),
                y + rng.random_range(-amp..=amp),
            )
        })
        .collect();
    Polygon::new(ring, Vec::new()).expect("jittered rectangle stays valid")
}

/// Every this-many-th high-O2I building gets non-low-E glazing, the rest get low-E.
const LOW_E_EXCEPTION_EVERY: usize = 12;

fn attributes(
    rng: &mut ChaCha8Rng,
    r: &mut BuildingRecord,
    o2i: LossClass,
    i2i: LossClass,
    driver: O2iDriver,
    low_e_exception: bool,
) -> LossClass {
    let normal =
        |rng: &mut ChaCha8Rng, m: f64, s: f64| Normal::new(m, s).expect("positive std").sample(rng);
    let floors = match i2i {
        LossClass::Low => rng.random_range(1..=2),
        LossClass::Medium => rng.random_range(2..=4),
        LossClass::High => rng.random_range(3..=8),
    };
    r.floors = Some(floors);
    r.height = Some((f64::from(floors) * rng.random_range(2.7..3.3) * 100.0).round() / 100.0);
    r.usage = Some(
        *[
            (Usage::Residential, 0.6),
            (Usage::Commercial, 0.25),
            (Usage::Civic, 0.1),
            (Usage::Other, 0.05),
        ]
        .choose_weighted(rng, |u| u.1)
        .map(|u| &u.0)
        .expect("non-empty"),
    );
    r.energy_std = Some((rng.random_range(10.0..40.0) * 10.0_f64).round() / 10.0);
    match driver {
        O2iDriver::Mixed => {
            let (years, ins, glz, walls, epc, energy): (
                _,
                &[(&str, f64)],
                &[(&str, f64)],
                &[(&str, f64)],
                _,
                _,
            ) = match o2i {
                LossClass::Low => (
                    1850..=1945,
                    &[("none", 0.8), ("partial", 0.2)],
                    &[("single", 0.7), ("double", 0.28), ("low-e", 0.02)],
                    &[("solid", 0.7), ("timber-frame", 0.3)],
                    5..=7,
                    250.0,
                ),
                LossClass::Medium => (
                    1946..=1990,
                    &[("partial", 0.5), ("cavity-filled", 0.4), ("none", 0.1)],
                    &[
                        ("double", 0.8),
                        ("single", 0.1),
                        ("triple", 0.08),
                        ("low-e", 0.02),
                    ],
                    &[("cavity", 0.7), ("solid", 0.3)],
                    3..=5,
                    180.0,
                ),
                LossClass::High => (
                    1991..=2025,
                    &[("external", 0.7), ("cavity-filled", 0.3)],
                    if low_e_exception {
                        &[("triple", 0.75), ("double", 0.25)]
                    } else {
                        &[("low-e", 1.0)]
                    },
                    &[("cavity", 0.5), ("curtain", 0.5)],
                    1..=3,
                    100.0,
                ),
            };
            // A minority of years come from anywhere, so year alone is not decisive.
            r.year = Some(if rng.random::<f64>() < 0.15 {
                rng.random_range(1850..=2025)
            } else {
                rng.random_range(years)
            });
            r.insulation = Some(weighted(rng, ins).into());
            r.glazing = Some(weighted(rng, glz).into());
            let wall = weighted(rng, walls);
            r.wall_type = Some(wall.into());
            r.wall_material = Some(
                match wall {
                    "solid" => weighted(rng, &[("brick", 0.7), ("stone", 0.3)]),
                    "timber-frame" => "timber",
                    "cavity" => weighted(rng, &[("brick", 0.6), ("concrete", 0.4)]),
                    _ => weighted(rng, &[("glass", 0.6), ("concrete", 0.4)]),
                }
                .into(),
            );
            r.epc = Some(rng.random_range(epc));
            r.energy_mean = Some((normal(rng, energy, 30.0).max(20.0) * 10.0).round() / 10.0);
            o2i
        }
        O2iDriver::InsulationGlazing => {
            let i = rng.random_range(0..INSULATION_LEVELS.len());
            let g = rng.random_range(0..GLAZING_LEVELS.len());
            r.insulation = Some(INSULATION_LEVELS[i].into());
            r.glazing = Some(GLAZING_LEVELS[g].into());
            r.year = Some(rng.random_range(1850..=2025));
            let wall = weighted(
                rng,
                &[
                    ("solid", 0.3),
                    ("cavity", 0.4),
                    ("timber-frame", 0.1),
                    ("curtain", 0.2),
                ],
            );
            r.wall_type = Some(wall.into());
            r.wall_material = Some(
                weighted(
                    rng,
                    &[
                        ("brick", 0.4),
                        ("stone", 0.1),
                        ("concrete", 0.3),
                        ("glass", 0.2),
                    ],
                )
                .into(),
            );
            r.epc = Some(rng.random_range(1..=7));
            r.energy_mean = Some((normal(rng, 180.0, 60.0).max(20.0) * 10.0).round() / 10.0);
            match i + g {
                0..=2 => LossClass::Low,
                3 => LossClass::Medium,
                _ => LossClass::High,
            }
        }
    }
}

/// Builds footprints, attributes, classes and cells.
pub fn generate_scenario(config: &SynthConfig) -> Result<Scenario, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synthcity/buildings"));
    let cols = (config.n_buildings as f64).sqrt().ceil() as usize;
    let rows = config.n_buildings.div_ceil(cols);
    let pitch = config.plot_pitch_m;
    let extent = [cols as f64 * pitch, rows as f64 * pitch];
    let mut buildings = Vec::with_capacity(config.n_buildings);
    let mut high_seen = 0;
    for i in 0..config.n_buildings {
        let (cx, cy) = ((i % cols) as f64 + 0.5, (i / cols) as f64 + 0.5);
        let center = Point::new(cx * pitch, cy * pitch);
        let o2i_drawn = pick_class(&mut rng, &config.o2i_class_shares);
        let i2i = pick_class(&mut rng, &config.i2i_class_shares);
        let side = |rng: &mut ChaCha8Rng| match i2i {
            LossClass::Low => rng.random_range(10.0..16.0),
            LossClass::Medium => rng.random_range(16.0..24.0),
            LossClass::High => rng.random_range(24.0..34.0),
        };
        let (w, h) = (side(&mut rng), side(&mut rng));
        let (w, h) = ((w * 10.0_f64).round() / 10.0, (h * 10.0_f64).round() / 10.0);
        let jitter = rng.random::<f64>() < config.jittered_fraction;
        let mut record = BuildingRecord::bare(
            format!("b{i:04}"),
            footprint(&mut rng, center, w, h, jitter),
        );
        let exception = o2i_drawn == LossClass::High && {
            high_seen += 1;
            high_seen % LOW_E_EXCEPTION_EVERY == 0
        };
        let o2i = attributes(
            &mut rng,
            &mut record,
            o2i_drawn,
            i2i,
            config.driver,
            exception,
        );
        buildings.push(TrueBuilding {
            record,
            o2i,
            i2i,
            penetration_db: config.penetration_db[o2i.index()],
            interior_rate_db_per_m: config.interior_rate_db_per_m[i2i.index()],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synthcity/cells"));
    let mid = Point::new(extent[0] / 2.0, extent[1] / 2.0);
    let radius = 0.6 * extent[0].max(extent[1]) + 20.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let cells: Vec<Cell> = (0..config.n_cells)
        .map(|k| {
            let a =
                phase + 2.0 * PI * k as f64 / config.n_cells as f64 + rng.random_range(-0.2..0.2);
            Cell {
                id: 101 + k as u64,
                position: Point::new(mid.x + radius * a.cos(), mid.y + radius * a.sin()),
                bands: config.bands.clone(),
            }
        })
        .collect();
    let shadowing = (0..config.n_cells * config.bands.len())
        .map(|_| {
            ShadowField::new(
                &mut rng,
                config.shadowing_sigma_db,
                config.shadowing_decorrelation_m,
            )
        })
        .collect();
    Ok(Scenario {
        config: config.clone(),
        frame: LocalFrame::new(config.origin[0], config.origin[1]),
        extent,
        buildings,
        cells,
        shadowing,
    })
}

impl Scenario {
    pub fn records(&self) -> Vec<BuildingRecord> {
        self.buildings.iter().map(|b| b.record.clone()).collect()
    }

    /// A seeded share of building indices, for withholding measurements.
    pub fn hidden_buildings(&self, fraction: f64) -> std::collections::BTreeSet<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "synthcity/hidden"));
        let n = self.buildings.len();
        let k = ((n as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        rand::seq::index::sample(&mut rng, n, k.min(n))
            .into_iter()
            .collect()
    }

    fn band_index(&self, band: u32) -> usize {
        self.config
            .bands
            .iter()
            .position(|&b| b == band)
            .expect("scenario band")
    }

    /// Received power from `cell` on `band` at true position `p`, inside
    /// `building` when given.
    pub fn rsrp(&self, cell: usize, band: u32, p: Point, building: Option<usize>) -> f64 {
        let bi = self.band_index(band);
        let r = self.cells[cell].position.distance(p).max(1.0);
        let mut power = self.config.reference_power_dbm
            - self.config.band_step_db * bi as f64
            - 10.0 * self.config.path_loss_exponent * r.log10()
            - self.shadowing[cell * self.config.bands.len() + bi].at(p);
        if let Some(b) = building {
            let tb = &self.buildings[b];
            power -= tb.penetration_db
                + tb.interior_rate_db_per_m * distance_to_boundary(&tb.record.polygon, p);
        }
        power
    }

    fn serving_cell(&self, band: u32, p: Point) -> usize {
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for c in 0..self.cells.len() {
            let v = self.rsrp(c, band, p, None);
            if v > best_p {
                best = c;
                best_p = v;
            }
        }
        best
    }

    /// Draws samples for every building. The truth vector is index-aligned
    /// with the samples and is never part of the exported sample file.
    pub fn emit_samples(&self) -> Emission {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synthcity/samples"));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut samples = Vec::new();
        let mut truth = Vec::new();
        for (bi, tb) in self.buildings.iter().enumerate() {
            let poly = &tb.record.polygon;
            let bbox = poly.bbox();
            let n = if cfg.samples_per_building > 0.0 {
                (cfg.samples_per_building * rng.random_range(0.8..=1.2)).round() as usize
            } else {
                0
            };
            let ring = poly.exterior();
            let perimeter = poly.perimeter();
            let signed = poly_signed_area(ring);
            for _ in 0..n {
                let indoor = rng.random::<f64>() < cfg.indoor_fraction;
                let p = if indoor {
                    loop {
                        let q = Point::new(
                            rng.random_range(bbox.min.x..bbox.max.x),
                            rng.random_range(bbox.min.y..bbox.max.y),
                        );
                        if contains_point(poly, q) {
                            break q;
                        }
                    }
                } else {
                    loop {
                        let q = sidewalk_point(
                            &mut rng,
                            ring,
                            perimeter,
                            signed,
                            cfg.sidewalk_offset_m,
                        );
                        if !contains_point(poly, q) {
                            break q;
                        }
                    }
                };
                let band = *cfg.bands.choose(&mut rng).expect("bands non-empty");
                let cell = self.serving_cell(band, p);
                let inside = indoor.then_some(bi);
                let [lo, hi] = cfg.position_sigma_m;
                let sigma = if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                };
                let reported = Point::new(
                    p.x + sigma * unit.sample(&mut rng),
                    p.y + sigma * unit.sample(&mut rng),
                );
                let id = format!("s{:06}", samples.len());
                samples.push(MeasurementSample {
                    id: id.clone(),
                    position: reported,
                    accuracy: (sigma * 1000.0).round() / 1000.0,
                    cell_id: self.cells[cell].id,
                    earfcn: band,
                    rsrp: self.rsrp(cell, band, p, inside),
                    timestamp: 1_700_000_000 + samples.len() as i64 * 7,
                });
                truth.push(SampleTruth {
                    sample: id,
                    anchor: bi,
                    building: inside,
                    true_position: p,
                    depth: if indoor {
                        distance_to_boundary(poly, p)
                    } else {
                        0.0
                    },
                });
            }
        }
        Emission { samples, truth }
    }

    /// Serializes the scenario and an emission into the dataset file formats;
    /// `extra` members are added to the footprint collection.
    pub fn export(&self, emission: &Emission, mut extra: Map<String, Value>) -> ScenarioExport {
        let records = self.records();
        extra.insert(
            "cells".into(),
            Value::Array(
                self.cells
                    .iter()
                    .map(|c| {
                        let (lon, lat) = self.frame.to_geo(c.position);
                        json!({ "id": c.id, "lon": lon, "lat": lat, "bands": c.bands })
                    })
                    .collect(),
            ),
        );
        let mut tb = csv::Writer::from_writer(Vec::new());
        tb.write_record([
            "building",
            "band",
            "o2i_class",
            "i2i_class",
            "penetration_db",
            "interior_rate_db_per_m",
        ])
        .expect("in-memory write");
        for b in &self.buildings {
            for band in &self.config.bands {
                tb.write_record([
                    b.record.id.clone(),
                    band.to_string(),
                    b.o2i.to_string(),
                    b.i2i.to_string(),
                    b.penetration_db.to_string(),
                    b.interior_rate_db_per_m.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        let mut ts = csv::Writer::from_writer(Vec::new());
        ts.write_record([
            "sample", "anchor", "indoor", "building", "true_lon", "true_lat", "depth_m",
        ])
        .expect("in-memory write");
        for t in &emission.truth {
            let (lon, lat) = self.frame.to_geo(t.true_position);
            ts.write_record([
                t.sample.clone(),
                self.buildings[t.anchor].record.id.clone(),
                t.building.is_some().to_string(),
                t.building
                    .map(|b| self.buildings[b].record.id.clone())
                    .unwrap_or_default(),
                lon.to_string(),
                lat.to_string(),
                format!("{:.3}", t.depth),
            ])
            .expect("in-memory write");
        }
        let text = |w: csv::Writer<Vec<u8>>| {
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        };
        ScenarioExport {
            buildings_geojson: write_buildings_geojson(&records, &self.frame, extra),
            metadata_csv: write_metadata_csv(&records),
            samples_csv: samples_to_csv(&emission.samples, &self.frame),
            truth_buildings_csv: text(tb),
            truth_samples_csv: text(ts),
        }
    }
}

fn poly_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// A point just outside a random spot on the outline, offset along the
/// outward edge normal.
fn sidewalk_point(
    rng: &mut ChaCha8Rng,
    ring: &[Point],
    perimeter: f64,
    signed_area: f64,
    offset: [f64; 2],
) -> Point {
    let n = ring.len();
    let mut t = rng.random::<f64>() * perimeter;
    let mut edge = n - 1;
    for i in 0..n {
        let len = ring[i].distance(ring[(i + 1) % n]);
        if t < len || i == n - 1 {
            edge = i;
            break;
        }
        t -= len;
    }
    let (a, b) = (ring[edge], ring[(edge + 1) % n]);
    let len = a.distance(b);
    let f = (t / len).clamp(0.0, 1.0);
    let (dx, dy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    // Outward normal: right of the edge for counter-clockwise rings.
    let (nx, ny) = if signed_area > 0.0 {
        (dy, -dx)
    } else {
        (-dy, dx)
    };
    let o = if offset[1] > offset[0] {
        rng.random_range(offset[0]..offset[1])
    } else {
        offset[0]
    };
    Point::new(
        a.x + f * (b.x - a.x) + o * nx,
        a.y + f * (b.y - a.y) + o * ny,
    )
}

/// Clears the height of `fraction` of the records (deterministic per
/// seed) and returns the masked indices.
pub fn mask_heights(
    records: &[BuildingRecord],
    fraction: f64,
    seed: u64,
) -> (Vec<BuildingRecord>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthcity/mask"));
    let n = ((records.len() as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> =
        rand::seq::index::sample(&mut rng, records.len(), n.min(records.len())).into_vec();
    idx.sort_unstable();
    let mut out = records.to_vec();
    for &i in &idx {
        out[i].height = None;
    }
    (out, idx)
}
