use std::collections::{BTreeMap, BTreeSet};

use buildloss_core::dataset::{
    build_feature_rows, fit_codebook, split_buildings, BuildingRecord, CodeBook, FeatureTable,
    SplitRole,
};
use buildloss_core::forest::{
    train_gradient_boosting, train_random_forest, train_voting, voting_of, ClassificationData,
    EnsembleModel, ForestError, GrowthStrategy, ModelBody,
};
use buildloss_core::seed::derive_seed;
use buildloss_core::ssl::{ledger_to_csv, rule_prior, self_train, LedgerEntry, Pool, StopReason};
use buildloss_core::{LinkType, LossClass, N_CLASSES};
use serde_json::{json, Value};

use super::{files, load_imputed, tag, task_file};
use crate::config::{Mode, ModelChoice, PipelineConfig, Targets};
use crate::error::PipelineError;
use crate::output::{
    csv_text, parse_field, read_csv_rows, require_file, write_csv, write_json, write_text,
    Provenance,
};

/// Majority label and vote counts per (building, band).
pub type LabelTable = BTreeMap<(String, u32), (LossClass, [usize; N_CLASSES])>;

pub fn read_labels(config: &PipelineConfig, link: LinkType) -> Result<LabelTable, PipelineError> {
    let path = task_file(config, "labels", link, "csv");
    require_file(&path, "label table")?;
    let cols = [
        "building",
        "band",
        "class",
        "votes_low",
        "votes_medium",
        "votes_high",
    ];
    let mut out = BTreeMap::new();
    for (line, r) in read_csv_rows(&path, &cols)? {
        let class: LossClass = parse_field(&path, line, "class", &r[2])?;
        let mut votes = [0; N_CLASSES];
        for c in 0..N_CLASSES {
            votes[c] = parse_field(&path, line, cols[3 + c], &r[3 + c])?;
        }
        out.insert(
            (r[0].clone(), parse_field(&path, line, "band", &r[1])?),
            (class, votes),
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TaskModel {
    pub link: LinkType,
    pub model: EnsembleModel,
    pub book: CodeBook,
    pub bands: Vec<u32>,
    pub ledger: Vec<LedgerEntry>,
    pub ssl_stop: Option<StopReason>,
    /// Accuracy against pipeline labels per role.
    pub label_accuracy: BTreeMap<String, f64>,
    pub importance: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub splits: BTreeMap<String, SplitRole>,
    pub tasks: Vec<TaskModel>,
}

/// Training rows for one role; every labeled building-band carries a total
/// weight of one.
fn labeled_rows(
    targets: Targets,
    table: &FeatureTable,
    records: &[BuildingRecord],
    labels: &LabelTable,
    splits: &BTreeMap<String, SplitRole>,
    role: SplitRole,
) -> ClassificationData {
    let (mut rows, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..table.rows.len() {
        let id = &records[table.building[i]].id;
        if splits.get(id) != Some(&role) {
            continue;
        }
        let Some((class, votes)) = labels.get(&(id.clone(), table.band[i])) else {
            continue;
        };
        if targets == Targets::Majority {
            rows.push(table.rows[i].clone());
            ys.push(class.index());
            ws.push(1.0);
            continue;
        }
        let n: usize = votes.iter().sum();
        for (c, &v) in votes.iter().enumerate() {
            if v > 0 {
                rows.push(table.rows[i].clone());
                ys.push(c);
                ws.push(v as f64 / n as f64);
            }
        }
    }
    ClassificationData::new(table.schema.clone(), rows, ys, N_CLASSES).with_weights(ws)
}

fn train_model(
    config: &PipelineConfig,
    data: &ClassificationData,
    validation: Option<&ClassificationData>,
) -> Result<EnsembleModel, ForestError> {
    match config.model {
        ModelChoice::Rf => train_random_forest(data, &config.forest),
        ModelChoice::GbLevel => {
            train_gradient_boosting(data, validation, GrowthStrategy::LevelWise, &config.boost)
        }
        ModelChoice::GbLeaf => {
            train_gradient_boosting(data, validation, GrowthStrategy::LeafWise, &config.boost)
        }
        ModelChoice::Voting => train_voting(data, validation, &config.forest, &config.boost),
    }
}

fn boosting_rounds(model: &EnsembleModel) -> Option<usize> {
    match &model.body {
        ModelBody::Boosted { rounds, .. } => Some(rounds.len().max(1)),
        _ => None,
    }
}

/// Retrains with the capacity `reference` settled on: boosting keeps its
/// early-stopped round count and skips validation, so adding pseudo-labels
/// cannot shift the stopping point on a small validation set.
fn train_frozen(
    config: &PipelineConfig,
    reference: &EnsembleModel,
    data: &ClassificationData,
) -> Result<EnsembleModel, ForestError> {
    let boost = |m: &EnsembleModel, growth| {
        let mut b = config.boost.clone();
        b.n_rounds = boosting_rounds(m).unwrap_or(b.n_rounds);
        train_gradient_boosting(data, None, growth, &b)
    };
    match (config.model, &reference.body) {
        (ModelChoice::Rf, _) => train_random_forest(data, &config.forest),
        (ModelChoice::GbLevel, _) => boost(reference, GrowthStrategy::LevelWise),
        (ModelChoice::GbLeaf, _) => boost(reference, GrowthStrategy::LeafWise),
        (ModelChoice::Voting, ModelBody::Voting { members }) if members.len() == 3 => {
            Ok(voting_of(vec![
                train_random_forest(data, &config.forest)?,
                boost(&members[1], GrowthStrategy::LevelWise)?,
                boost(&members[2], GrowthStrategy::LeafWise)?,
            ]))
        }
        (ModelChoice::Voting, _) => train_voting(data, None, &config.forest, &config.boost),
    }
}

/// Assigns labeled buildings to train/validation/test and the rest to hidden.
fn assign_roles(
    config: &PipelineConfig,
    records: &[BuildingRecord],
    labels: &[LabelTable],
) -> BTreeMap<String, SplitRole> {
    let labeled: BTreeSet<&String> = labels.iter().flat_map(|t| t.keys().map(|k| &k.0)).collect();
    let ids: Vec<String> = records
        .iter()
        .filter(|r| labeled.contains(&r.id))
        .map(|r| r.id.clone())
        .collect();
    // Stratify by the first task's label on the lowest band, when present.
    let strata: Vec<usize> = ids
        .iter()
        .map(|id| {
            labels[0]
                .range((id.clone(), 0)..=(id.clone(), u32::MAX))
                .next()
                .map_or(N_CLASSES, |(_, (c, _))| c.index())
        })
        .collect();
    let s = &config.split;
    let fractions = [
        (
            SplitRole::Train,
            1.0 - s.validation_fraction - s.test_fraction,
        ),
        (SplitRole::Validation, s.validation_fraction),
        (SplitRole::Test, s.test_fraction),
    ];
    let mut roles = split_buildings(
        &ids,
        Some(&strata),
        &fractions,
        derive_seed(config.seed, "split"),
    );
    for r in records {
        roles.entry(r.id.clone()).or_insert(SplitRole::Hidden);
    }
    roles
}

fn accuracy_on(
    model: &EnsembleModel,
    data: &ClassificationData,
) -> Result<Option<f64>, ForestError> {
    if data.is_empty() {
        return Ok(None);
    }
    let (mut hit, mut total) = (0.0, 0.0);
    for i in 0..data.len() {
        if model.predict_index(&data.rows[i])? == data.labels[i] {
            hit += data.weights[i];
        }
        total += data.weights[i];
    }
    Ok(Some(hit / total))
}

fn train_task(
    config: &PipelineConfig,
    link: LinkType,
    records: &[BuildingRecord],
    labels: &LabelTable,
    splits: &BTreeMap<String, SplitRole>,
) -> Result<TaskModel, PipelineError> {
    let bands: Vec<u32> = labels
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if bands.is_empty() {
        return Err(PipelineError::Data(format!(
            "no {} labels to train on",
            tag(link)
        )));
    }
    let book = fit_codebook(records, &bands);
    let table = build_feature_rows(records, &bands, link, &book, &config.features)?;
    let train = labeled_rows(
        config.targets,
        &table,
        records,
        labels,
        splits,
        SplitRole::Train,
    );
    let validation = labeled_rows(
        config.targets,
        &table,
        records,
        labels,
        splits,
        SplitRole::Validation,
    );
    let test = labeled_rows(
        config.targets,
        &table,
        records,
        labels,
        splits,
        SplitRole::Test,
    );
    let val = (!validation.is_empty()).then_some(&validation);
    let supervised = train_model(config, &train, val)?;

    let (model, ledger, ssl_stop) = match config.mode {
        Mode::Sl => (supervised, Vec::new(), None),
        Mode::Ssl => {
            let trainer = |d: &ClassificationData| train_frozen(config, &supervised, d);
            let mut pool = Pool::default();
            for i in 0..table.rows.len() {
                let r = &records[table.building[i]];
                if splits.get(&r.id) == Some(&SplitRole::Hidden) {
                    pool.ids.push(format!("{}@{}", r.id, table.band[i]));
                    pool.rows.push(table.rows[i].clone());
                    pool.priors.push(rule_prior(r, &config.rules, link));
                }
            }
            let out = self_train(trainer, &train, &pool, &config.ssl)?;
            log::info!(
                "ssl {}: {} pseudo-labels over {} iterations ({:?})",
                tag(link),
                out.ledger.len(),
                out.iterations,
                out.stop
            );
            (out.model, out.ledger, Some(out.stop))
        }
    };
    let mut label_accuracy = BTreeMap::new();
    for (name, data) in [
        ("train", &train),
        ("validation", &validation),
        ("test", &test),
    ] {
        if let Some(a) = accuracy_on(&model, data)? {
            label_accuracy.insert(name.to_string(), a);
        }
    }
    let importance = model.feature_importance();
    Ok(TaskModel {
        link,
        model,
        book,
        bands,
        ledger,
        ssl_stop,
        label_accuracy,
        importance,
    })
}

pub fn cmd_train(config: &PipelineConfig) -> Result<TrainRun, PipelineError> {
    config.validate()?;
    let cfg = config.resolved();
    let prov = Provenance::new("train", config);
    let records = load_imputed(&cfg)?.records;
    let links = cfg.task.links();
    let labels: Vec<LabelTable> = links
        .iter()
        .map(|&l| read_labels(&cfg, l))
        .collect::<Result<_, _>>()?;
    let splits = assign_roles(&cfg, &records, &labels);
    let out = cfg.out_dir();
    write_csv(
        &out.join(files::SPLITS),
        &prov,
        &csv_text(
            &["building", "role"],
            splits
                .iter()
                .map(|(id, r)| vec![id.clone(), r.as_str().to_string()]),
        ),
    )?;

    let mut tasks = Vec::new();
    for (&link, table) in links.iter().zip(&labels) {
        let t = train_task(&cfg, link, &records, table, &splits)?;
        let mut meta: BTreeMap<String, Value> = prov.json_map().into_iter().collect();
        meta.insert("task".into(), json!(tag(link)));
        meta.insert("model".into(), json!(cfg.model));
        meta.insert("mode".into(), json!(cfg.mode));
        meta.insert("bands".into(), json!(t.bands));
        meta.insert(
            "codebook".into(),
            serde_json::to_value(&t.book).expect("codebook serializes"),
        );
        write_text(
            &task_file(&cfg, "model", link, "json"),
            &(t.model.to_document(meta).to_json() + "\n"),
        )?;
        write_csv(
            &task_file(&cfg, "importance", link, "csv"),
            &prov,
            &csv_text(
                &["feature", "importance"],
                t.importance
                    .iter()
                    .map(|(f, v)| vec![f.clone(), format!("{v:.6}")]),
            ),
        )?;
        if cfg.mode == Mode::Ssl {
            write_csv(
                &task_file(&cfg, "ssl_ledger", link, "csv"),
                &prov,
                &ledger_to_csv(&t.ledger),
            )?;
        }
        write_json(
            &task_file(&cfg, "train_report", link, "json"),
            &prov,
            json!({
                "task": tag(link),
                "model": cfg.model,
                "mode": cfg.mode,
                "oob_accuracy": t.model.oob_accuracy,
                "label_accuracy": t.label_accuracy,
                "pseudo_labels": t.ledger.len(),
                "ssl_stop": t.ssl_stop,
                "warnings": t.model.warnings,
            }),
        )?;
        tasks.push(t);
    }
    Ok(TrainRun { splits, tasks })
}
