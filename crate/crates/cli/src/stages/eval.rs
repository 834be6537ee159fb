use std::collections::BTreeMap;
use std::path::Path;

use buildloss_core::dataset::SplitRole;
use buildloss_core::forest::ClassDistribution;
use buildloss_core::metrics::{classification_report, EvalReport};
use buildloss_core::{LinkType, LossClass};
use serde_json::{json, Map, Value};

use super::{files, tag, task_file};
use crate::config::PipelineConfig;
use crate::error::PipelineError;
use crate::output::{parse_field, read_csv_rows, require_file, write_json, write_text, Provenance};

#[derive(Clone, Debug)]
pub struct TaskEval {
    pub link: LinkType,
    /// Predicted labels against truth, per split role plus `all`.
    pub reports: BTreeMap<String, EvalReport>,
    /// Pipeline (measurement-derived) labels against truth.
    pub label_quality: Option<EvalReport>,
}

impl TaskEval {
    pub fn accuracy(&self, role: &str) -> Option<f64> {
        self.reports.get(role).map(|r| r.accuracy)
    }
}

#[derive(Clone, Debug)]
pub struct EvalRun {
    pub tasks: Vec<TaskEval>,
}

type ClassTable = BTreeMap<(String, u32), LossClass>;
type Predictions = BTreeMap<(String, u32), (LossClass, ClassDistribution)>;

pub fn read_truth(path: &Path, link: LinkType) -> Result<ClassTable, PipelineError> {
    require_file(path, "truth file")?;
    let column = format!("{}_class", tag(link));
    let mut out = BTreeMap::new();
    for (line, r) in read_csv_rows(path, &["building", "band", &column])? {
        let band = parse_field(path, line, "band", &r[1])?;
        out.insert(
            (r[0].clone(), band),
            parse_field(path, line, &column, &r[2])?,
        );
    }
    Ok(out)
}

pub fn read_splits(path: &Path) -> Result<BTreeMap<String, SplitRole>, PipelineError> {
    require_file(path, "split file")?;
    read_csv_rows(path, &["building", "role"])?
        .into_iter()
        .map(|(line, r)| Ok((r[0].clone(), parse_field(path, line, "role", &r[1])?)))
        .collect()
}

/// Predicted class and distribution per (building, band).
fn read_predictions(path: &Path) -> Result<Predictions, PipelineError> {
    require_file(path, "building label file")?;
    let cols = ["building", "band", "class", "p_low", "p_medium", "p_high"];
    let mut out = BTreeMap::new();
    for (line, r) in read_csv_rows(path, &cols)? {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = parse_field(path, line, cols[3 + k], &r[3 + k])?;
        }
        let band = parse_field(path, line, "band", &r[1])?;
        let class = parse_field(path, line, "class", &r[2])?;
        // Stored probabilities are rounded; restore the unit sum.
        let sum: f64 = p.iter().sum();
        if sum <= 0.0 {
            return Err(PipelineError::Data(format!(
                "{}:{line}: probabilities sum to {sum}",
                path.display()
            )));
        }
        p.iter_mut().for_each(|v| *v /= sum);
        out.insert((r[0].clone(), band), (class, ClassDistribution(p)));
    }
    Ok(out)
}

fn read_pipeline_labels(path: &Path) -> Result<ClassTable, PipelineError> {
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    read_csv_rows(path, &["building", "band", "class"])?
        .into_iter()
        .map(|(line, r)| {
            Ok((
                (r[0].clone(), parse_field(path, line, "band", &r[1])?),
                parse_field(path, line, "class", &r[2])?,
            ))
        })
        .collect()
}

fn report_for<'a>(
    keys: impl Iterator<Item = &'a (String, u32)>,
    truth: &ClassTable,
    predicted: impl Fn(&(String, u32)) -> Option<(LossClass, Option<ClassDistribution>)>,
) -> Result<Option<EvalReport>, PipelineError> {
    let (mut t, mut p) = (Vec::new(), Vec::new());
    let mut dists: BTreeMap<String, Vec<ClassDistribution>> = BTreeMap::new();
    for k in keys {
        let (Some(&tc), Some((pc, d))) = (truth.get(k), predicted(k)) else {
            continue;
        };
        t.push(tc);
        p.push(pc);
        if let Some(d) = d {
            dists.entry(k.0.clone()).or_default().push(d);
        }
    }
    if t.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        classification_report(&t, &p)?.with_uncertainty(&dists)?,
    ))
}

pub fn cmd_eval(config: &PipelineConfig) -> Result<EvalRun, PipelineError> {
    config.validate()?;
    let prov = Provenance::new("eval", config);
    let truth_path = config.input(&config.paths.truth, files::TRUTH_BUILDINGS);
    let splits = read_splits(&config.out_dir().join(files::SPLITS))?;
    let mut tasks = Vec::new();
    for link in config.task.links() {
        let truth = read_truth(&truth_path, link)?;
        let predicted = read_predictions(&task_file(config, "building_labels", link, "csv"))?;
        let lookup = |k: &(String, u32)| predicted.get(k).map(|&(c, d)| (c, Some(d)));
        let mut reports = BTreeMap::new();
        for role in [
            SplitRole::Train,
            SplitRole::Validation,
            SplitRole::Test,
            SplitRole::Hidden,
        ] {
            let keys = predicted.keys().filter(|k| splits.get(&k.0) == Some(&role));
            if let Some(r) = report_for(keys, &truth, lookup)? {
                reports.insert(role.as_str().to_string(), r);
            }
        }
        if let Some(r) = report_for(predicted.keys(), &truth, lookup)? {
            reports.insert("all".into(), r);
        }
        let pipeline = read_pipeline_labels(&task_file(config, "labels", link, "csv"))?;
        let label_quality = report_for(pipeline.keys(), &truth, |k| {
            pipeline.get(k).map(|&c| (c, None))
        })?;

        let mut body = Map::new();
        body.insert("task".into(), json!(tag(link)));
        body.insert("mode".into(), json!(config.mode));
        body.insert("model".into(), json!(config.model));
        let roles: Map<String, Value> = reports
            .iter()
            .map(|(k, r)| {
                (
                    k.clone(),
                    serde_json::to_value(r).expect("report serializes"),
                )
            })
            .collect();
        body.insert("roles".into(), Value::Object(roles));
        if let Some(q) = &label_quality {
            body.insert(
                "pipeline_labels".into(),
                serde_json::to_value(q).expect("report serializes"),
            );
        }
        write_json(
            &task_file(config, "eval", link, "json"),
            &prov,
            Value::Object(body),
        )?;

        let mut text = prov.csv_line();
        for (role, r) in &reports {
            text.push_str(&format!("[{} / {role}] n={}\n", tag(link), r.n));
            text.push_str(
                &r.to_table(&format!("{:?}-{:?}", config.mode, config.model).to_lowercase()),
            );
        }
        if let Some(q) = &label_quality {
            text.push_str(&format!("[{} / pipeline labels] n={}\n", tag(link), q.n));
            text.push_str(&q.to_table("labels"));
        }
        write_text(&task_file(config, "eval", link, "txt"), &text)?;
        for (role, r) in &reports {
            log::info!(
                "eval {} {role}: accuracy {:.4}, macro-F1 {:.4}",
                tag(link),
                r.accuracy,
                r.macro_f1
            );
        }
        tasks.push(TaskEval {
            link,
            reports,
            label_quality,
        });
    }
    Ok(EvalRun { tasks })
}
