use std::collections::BTreeMap;

use buildloss_core::dataset::{
    build_feature_rows, write_feature_collection, BuildingRecord, CodeBook,
};
use buildloss_core::forest::{ClassDistribution, EnsembleModel, ModelDocument};
use buildloss_core::metrics::{entropy_bits, majority_vote, BuildingLabel, VoteGroup};
use buildloss_core::{LinkType, LossClass, N_CLASSES};
use serde_json::{json, Map, Value};

use super::{files, load_imputed, tag, task_file};
use crate::config::PipelineConfig;
use crate::error::PipelineError;
use crate::output::{
    csv_text, parse_field, read_csv_rows, read_text, require_file, write_csv, write_text,
    Provenance,
};

#[derive(Clone, Debug)]
pub struct TaskInference {
    pub link: LinkType,
    pub labels: Vec<BuildingLabel>,
    /// Model distribution per (building, band).
    pub distributions: BTreeMap<(String, u32), ClassDistribution>,
}

#[derive(Clone, Debug)]
pub struct InferRun {
    pub tasks: Vec<TaskInference>,
}

/// Trained model plus the band list and code book it was fit with.
pub fn load_model(
    config: &PipelineConfig,
    link: LinkType,
) -> Result<(EnsembleModel, Vec<u32>, CodeBook), PipelineError> {
    let path = task_file(config, "model", link, "json");
    require_file(&path, "model file")?;
    let doc = ModelDocument::from_json(&read_text(&path)?)
        .map_err(|e| PipelineError::from(e).in_file(&path))?;
    let bad = |what: &str| {
        PipelineError::Data(format!(
            "{}: model metadata lacks a valid `{what}`",
            path.display()
        ))
    };
    let bands: Vec<u32> = doc
        .metadata
        .get("bands")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| bad("bands"))?;
    let book: CodeBook = doc
        .metadata
        .get("codebook")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| bad("codebook"))?;
    Ok((doc.model, bands, book))
}

/// Indoor sample count per (building id, band) from the detection table.
fn indoor_counts(config: &PipelineConfig) -> Result<BTreeMap<(String, u32), usize>, PipelineError> {
    let path = config.out_dir().join(files::DETECTIONS);
    require_file(&path, "detections file")?;
    let mut out = BTreeMap::new();
    for (line, r) in read_csv_rows(&path, &["building", "earfcn"])? {
        if !r[0].is_empty() {
            *out.entry((r[0].clone(), parse_field(&path, line, "earfcn", &r[1])?))
                .or_insert(0) += 1;
        }
    }
    Ok(out)
}

/// Predicts every building on every band. The model sees building
/// attributes only, so each indoor sample of a building casts the same
/// distribution; buildings without samples get a single vote.
pub fn infer_task(
    config: &PipelineConfig,
    link: LinkType,
    records: &[BuildingRecord],
    counts: &BTreeMap<(String, u32), usize>,
) -> Result<TaskInference, PipelineError> {
    let (model, bands, book) = load_model(config, link)?;
    let table = build_feature_rows(records, &bands, link, &book, &config.features)?;
    let mut groups = Vec::with_capacity(table.rows.len());
    let mut distributions = BTreeMap::new();
    for i in 0..table.rows.len() {
        let id = records[table.building[i]].id.clone();
        let band = table.band[i];
        let p = model.predict_proba(&table.rows[i])?;
        let n = counts.get(&(id.clone(), band)).copied().unwrap_or(0).max(1);
        distributions.insert((id.clone(), band), p);
        groups.push(VoteGroup {
            building: id,
            band,
            predictions: vec![p; n],
        });
    }
    Ok(TaskInference {
        link,
        labels: majority_vote(&groups),
        distributions,
    })
}

pub fn cmd_infer(config: &PipelineConfig) -> Result<InferRun, PipelineError> {
    config.validate()?;
    let cfg = config.resolved();
    let prov = Provenance::new("infer", config);
    let loaded = load_imputed(&cfg)?;
    let records = loaded.records;
    let counts = indoor_counts(&cfg)?;
    let index: BTreeMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    let mut tasks = Vec::new();
    for link in cfg.task.links() {
        let t = infer_task(&cfg, link, &records, &counts)?;
        let p_of = |l: &BuildingLabel| t.distributions[&(l.building.clone(), l.band)];
        let rows = t.labels.iter().map(|l| {
            let p = p_of(l);
            let mut row = vec![
                l.building.clone(),
                l.band.to_string(),
                l.class.to_string(),
                l.votes[l.class.index()].to_string(),
                l.n_samples.to_string(),
                format!("{:.6}", l.mean_confidence),
            ];
            row.extend(p.probs().iter().map(|v| format!("{v:.6}")));
            row.push(format!("{:.6}", entropy_bits(p.probs())));
            row
        });
        write_csv(
            &task_file(&cfg, "building_labels", link, "csv"),
            &prov,
            &csv_text(
                &[
                    "building",
                    "band",
                    "class",
                    "votes",
                    "n_samples",
                    "mean_confidence",
                    "p_low",
                    "p_medium",
                    "p_high",
                    "entropy_bits",
                ],
                rows,
            ),
        )?;

        let features: Vec<(usize, Map<String, Value>)> = t
            .labels
            .iter()
            .map(|l| {
                let mut props = Map::new();
                props.insert("id".into(), json!(l.building));
                props.insert("band".into(), json!(l.band));
                props.insert("task".into(), json!(tag(link)));
                props.insert("class".into(), json!(l.class.to_string()));
                props.insert("confidence".into(), json!(l.mean_confidence));
                (index[l.building.as_str()], props)
            })
            .collect();
        let mut extra = Map::new();
        extra.insert("metadata".into(), prov.json());
        write_text(
            &task_file(&cfg, "loss_map", link, "geojson"),
            &(write_feature_collection(&records, &loaded.frame, &features, extra) + "\n"),
        )?;

        let mut shares: BTreeMap<u32, [usize; N_CLASSES]> = BTreeMap::new();
        for l in &t.labels {
            shares.entry(l.band).or_default()[l.class.index()] += 1;
        }
        let rows = shares.iter().flat_map(|(band, c)| {
            let total: usize = c.iter().sum();
            LossClass::ALL.into_iter().map(move |k| {
                vec![
                    band.to_string(),
                    k.to_string(),
                    c[k.index()].to_string(),
                    format!("{:.2}", 100.0 * c[k.index()] as f64 / total as f64),
                ]
            })
        });
        write_csv(
            &task_file(&cfg, "class_shares", link, "csv"),
            &prov,
            &csv_text(&["band", "class", "buildings", "percent"], rows),
        )?;
        log::info!("infer {}: {} building-bands", tag(link), t.labels.len());
        tasks.push(t);
    }
    Ok(InferRun { tasks })
}
