use std::collections::BTreeMap;

use buildloss_core::dataset::{
    impute_attributes, load_samples, write_metadata_csv, BuildingRecord, ImputeReport, JoinReport,
    LoadedBuildings, LoadedSamples, MeasurementSample,
};
use buildloss_core::forest::ClassDistribution;
use buildloss_core::geoplane::OverlapEstimator;
use buildloss_core::losslab::{
    detect_all, fit_quantizer, label_losses, pair_and_compute_loss, zscore_filter, IndoorVerdict,
    LossObservation, LossQuantizer,
};
use buildloss_core::metrics::{majority_vote, BuildingLabel, VoteGroup};
use buildloss_core::seed::derive_seed;
use buildloss_core::{LinkType, LossClass, N_CLASSES};
use serde_json::json;

use super::{files, load_footprints, tag, task_file};
use crate::config::PipelineConfig;
use crate::error::PipelineError;
use crate::output::{csv_text, read_text, require_file, write_csv, write_json, Provenance};

#[derive(Clone, Debug)]
pub struct TaskLabels {
    pub link: LinkType,
    pub observations: Vec<LossObservation>,
    pub classes: Vec<LossClass>,
    /// Survivors of the per-building outlier filter.
    pub kept: Vec<bool>,
    pub quantizer: LossQuantizer,
    pub labels: Vec<BuildingLabel>,
}

#[derive(Clone, Debug)]
pub struct LabelRun {
    pub records: Vec<BuildingRecord>,
    pub join: JoinReport,
    pub impute: ImputeReport,
    pub samples: Vec<MeasurementSample>,
    pub rejected: Vec<(usize, String)>,
    pub verdicts: Vec<IndoorVerdict>,
    pub bands: Vec<u32>,
    pub tasks: Vec<TaskLabels>,
}

fn task_labels(
    config: &PipelineConfig,
    link: LinkType,
    all: &[LossObservation],
    records: &[BuildingRecord],
) -> Result<TaskLabels, PipelineError> {
    let observations: Vec<LossObservation> =
        all.iter().filter(|o| o.link == link).cloned().collect();
    let losses: Vec<f64> = observations.iter().map(|o| o.loss).collect();
    let quantizer =
        fit_quantizer(&losses, &config.quantizer).map_err(|e| match PipelineError::from(e) {
            PipelineError::Data(m) => PipelineError::Data(format!("{} {m}", tag(link))),
            other => other,
        })?;
    let classes = label_losses(&quantizer, &observations);
    let mut kept = vec![false; observations.len()];
    for i in zscore_filter(&observations, &config.zscore) {
        kept[i] = true;
    }
    let mut groups: BTreeMap<(usize, u32), Vec<ClassDistribution>> = BTreeMap::new();
    for (i, o) in observations.iter().enumerate() {
        if kept[i] {
            groups
                .entry((o.building, o.earfcn))
                .or_default()
                .push(ClassDistribution::one_hot(classes[i]));
        }
    }
    let groups: Vec<VoteGroup> = groups
        .into_iter()
        .map(|((b, band), predictions)| VoteGroup {
            building: records[b].id.clone(),
            band,
            predictions,
        })
        .collect();
    Ok(TaskLabels {
        link,
        labels: majority_vote(&groups),
        observations,
        classes,
        kept,
        quantizer,
    })
}

/// Imputes attributes, detects indoor samples, pairs them and turns the
/// quantized pair losses into per-(building, band) majority labels.
pub fn label_data(
    config: &PipelineConfig,
    buildings: LoadedBuildings,
    samples: LoadedSamples,
) -> Result<LabelRun, PipelineError> {
    let cfg = config.resolved();
    let (records, impute) = impute_attributes(&buildings.records, &cfg.impute)?;
    let estimator =
        OverlapEstimator::new(cfg.detect.overlap_budget, derive_seed(cfg.seed, "overlap"))?;
    let verdicts = detect_all(&samples.samples, &records, &estimator)?;
    let observations = pair_and_compute_loss(&verdicts, &samples.samples, &cfg.pairs);
    let tasks = cfg
        .task
        .links()
        .into_iter()
        .map(|link| task_labels(&cfg, link, &observations, &records))
        .collect::<Result<Vec<_>, _>>()?;
    let mut bands: Vec<u32> = samples.samples.iter().map(|s| s.earfcn).collect();
    bands.sort_unstable();
    bands.dedup();
    Ok(LabelRun {
        records,
        join: buildings.report,
        impute,
        samples: samples.samples,
        rejected: samples.rejected,
        verdicts,
        bands,
        tasks,
    })
}

fn class_counts(classes: impl Iterator<Item = LossClass>) -> [usize; N_CLASSES] {
    let mut c = [0; N_CLASSES];
    for k in classes {
        c[k.index()] += 1;
    }
    c
}

pub fn cmd_label(config: &PipelineConfig) -> Result<LabelRun, PipelineError> {
    config.validate()?;
    let prov = Provenance::new("label", config);
    let buildings = load_footprints(
        config,
        config.input(&config.paths.metadata, files::METADATA),
    )?;
    let samples_path = config.input(&config.paths.samples, files::SAMPLES);
    require_file(&samples_path, "samples file")?;
    let samples = load_samples(&read_text(&samples_path)?, &buildings.frame)
        .map_err(|e| PipelineError::from(e).in_file(&samples_path))?;
    for (line, why) in &samples.rejected {
        log::warn!("{}:{line}: sample rejected: {why}", samples_path.display());
    }
    let run = label_data(config, buildings, samples)?;
    let out = config.out_dir();

    write_csv(
        &out.join(files::IMPUTED),
        &prov,
        &write_metadata_csv(&run.records),
    )?;
    let detections = run.verdicts.iter().map(|v| {
        let s = &run.samples[v.sample];
        vec![
            s.id.clone(),
            s.cell_id.to_string(),
            s.earfcn.to_string(),
            v.building
                .map(|b| run.records[b].id.clone())
                .unwrap_or_default(),
            format!("{:.6}", v.overlap),
            v.rule.as_str().to_string(),
        ]
    });
    write_csv(
        &out.join(files::DETECTIONS),
        &prov,
        &csv_text(
            &["sample", "cell_id", "earfcn", "building", "overlap", "rule"],
            detections,
        ),
    )?;

    let mut task_reports = serde_json::Map::new();
    for t in &run.tasks {
        let obs = t.observations.iter().enumerate().map(|(i, o)| {
            vec![
                run.samples[o.first].id.clone(),
                run.samples[o.second].id.clone(),
                run.records[o.building].id.clone(),
                o.cell_id.to_string(),
                o.earfcn.to_string(),
                format!("{:.4}", o.distance),
                format!("{:.6}", o.loss),
                t.classes[i].to_string(),
                t.kept[i].to_string(),
            ]
        });
        write_csv(
            &task_file(config, "observations", t.link, "csv"),
            &prov,
            &csv_text(
                &[
                    "first",
                    "second",
                    "building",
                    "cell_id",
                    "earfcn",
                    "distance_m",
                    "loss_db_per_m",
                    "class",
                    "kept",
                ],
                obs,
            ),
        )?;
        write_json(
            &task_file(config, "quantizer", t.link, "json"),
            &prov,
            json!({ "task": tag(t.link), "quantizer": t.quantizer }),
        )?;
        let labels = t.labels.iter().map(|l| {
            vec![
                l.building.clone(),
                l.band.to_string(),
                l.class.to_string(),
                l.votes[0].to_string(),
                l.votes[1].to_string(),
                l.votes[2].to_string(),
                l.n_samples.to_string(),
            ]
        });
        write_csv(
            &task_file(config, "labels", t.link, "csv"),
            &prov,
            &csv_text(
                &[
                    "building",
                    "band",
                    "class",
                    "votes_low",
                    "votes_medium",
                    "votes_high",
                    "n_observations",
                ],
                labels,
            ),
        )?;
        task_reports.insert(
            tag(t.link).into(),
            json!({
                "observations": t.observations.len(),
                "kept": t.kept.iter().filter(|&&k| k).count(),
                "labeled_building_bands": t.labels.len(),
                "observation_classes": class_counts(t.classes.iter().copied()),
                "label_classes": class_counts(t.labels.iter().map(|l| l.class)),
                "box_cox_lambda": t.quantizer.transform.lambda,
                "box_cox_shift": t.quantizer.transform.shift,
                "thresholds_db_per_m": t.quantizer.thresholds(),
                "silhouette_sweep": t.quantizer.sweep,
            }),
        );
    }
    let indoor = run.verdicts.iter().filter(|v| v.is_indoor()).count();
    write_json(
        &out.join(files::LABEL_REPORT),
        &prov,
        json!({
            "buildings": run.records.len(),
            "samples": run.samples.len(),
            "rejected_samples": run.rejected.iter().map(|(l, w)| json!({"line": l, "reason": w})).collect::<Vec<_>>(),
            "indoor_samples": indoor,
            "outdoor_samples": run.samples.len() - indoor,
            "bands": run.bands,
            "join": run.join,
            "imputation": run.impute,
            "tasks": task_reports,
        }),
    )?;
    log::info!("label: {} samples, {indoor} indoor", run.samples.len());
    Ok(run)
}
