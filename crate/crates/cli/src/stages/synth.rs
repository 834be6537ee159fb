use std::collections::BTreeSet;

use buildloss_core::synthcity::{generate_scenario, Emission, Scenario};
use serde_json::Map;

use super::files;
use crate::config::PipelineConfig;
use crate::error::PipelineError;
use crate::output::{csv_text, write_csv, write_text, Provenance};

#[derive(Clone, Debug)]
pub struct SynthRun {
    pub scenario: Scenario,
    /// Samples as exported, hidden buildings removed.
    pub emission: Emission,
    pub hidden: BTreeSet<usize>,
}

/// Generates a synthetic city and writes it in the input file formats, plus
/// the truth tables the pipeline itself never reads.
pub fn cmd_synth(config: &PipelineConfig) -> Result<SynthRun, PipelineError> {
    config.validate()?;
    let cfg = config.resolved();
    let prov = Provenance::new("synth", config);
    let scenario = generate_scenario(&cfg.synth.scenario)?;
    let hidden = scenario.hidden_buildings(cfg.synth.hidden_fraction);
    let emission = scenario.emit_samples().without(&hidden);
    let mut extra = Map::new();
    extra.insert("metadata".into(), prov.json());
    let export = scenario.export(&emission, extra);
    let out = cfg.out_dir();
    write_text(
        &out.join(files::BUILDINGS),
        &format!("{}\n", export.buildings_geojson),
    )?;
    write_csv(&out.join(files::METADATA), &prov, &export.metadata_csv)?;
    write_csv(&out.join(files::SAMPLES), &prov, &export.samples_csv)?;
    write_csv(
        &out.join(files::TRUTH_BUILDINGS),
        &prov,
        &export.truth_buildings_csv,
    )?;
    write_csv(
        &out.join(files::TRUTH_SAMPLES),
        &prov,
        &export.truth_samples_csv,
    )?;
    let hidden_rows = hidden
        .iter()
        .map(|&i| vec![scenario.buildings[i].record.id.clone()]);
    write_csv(
        &out.join(files::HIDDEN),
        &prov,
        &csv_text(&["building"], hidden_rows),
    )?;
    log::info!(
        "synth: {} buildings ({} hidden), {} samples",
        scenario.buildings.len(),
        hidden.len(),
        emission.samples.len()
    );
    Ok(SynthRun {
        scenario,
        emission,
        hidden,
    })
}
