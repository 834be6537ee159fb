//! Self-training with domain-rule priors.
//!
//! Each round retrains on the labeled rows plus every pseudo-label accepted
//! so far, scores the remaining pool, blends the scores with rule priors
//! (`p' = (1 - w) p + w prior`) and accepts the most confident rows above
//! the threshold, up to a per-round cap. Accepted pseudo-labels are never
//! revoked.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::{LinkType, LossClass, N_CLASSES};
use crate::dataset::{BuildingRecord, Usage};
use crate::forest::{ClassDistribution, ClassificationData, EnsembleModel, ForestError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SslError {
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Training(#[from] ForestError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    /// Minimum blended confidence for acceptance; must exceed 1/3.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Per-round acceptance cap as a fraction of the initial pool.
    pub cap_fraction: f64,
    /// Rule prior weight; must be below 0.5.
    pub rule_weight: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            threshold: 0.80,
            max_iterations: 10,
            cap_fraction: 0.20,
            rule_weight: 0.15,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        if !(self.threshold > 1.0 / 3.0 && self.threshold <= 1.0) {
            return Err(SslError::InvalidConfig(format!(
                "threshold {} not in (1/3, 1]",
                self.threshold
            )));
        }
        if !(0.0..0.5).contains(&self.rule_weight) {
            return Err(SslError::InvalidConfig(format!(
                "rule weight {} not in [0, 0.5)",
                self.rule_weight
            )));
        }
        if !(self.cap_fraction > 0.0 && self.cap_fraction <= 1.0) {
            return Err(SslError::InvalidConfig(format!(
                "cap fraction {} not in (0, 1]",
                self.cap_fraction
            )));
        }
        Ok(())
    }
}

/// Condition on building attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attribute", rename_all = "snake_case")]
pub enum RulePredicate {
    Glazing { any_of: Vec<String> },
    Insulation { any_of: Vec<String> },
    WallMaterial { any_of: Vec<String> },
    Usage { any_of: Vec<Usage> },
    YearAtLeast { year: i32 },
}

impl RulePredicate {
    pub fn matches(&self, r: &BuildingRecord) -> bool {
        let any = |v: &Option<String>, set: &[String]| {
            v.as_ref().is_some_and(|x| set.iter().any(|s| s == x))
        };
        match self {
            RulePredicate::Glazing { any_of } => any(&r.glazing, any_of),
            RulePredicate::Insulation { any_of } => any(&r.insulation, any_of),
            RulePredicate::WallMaterial { any_of } => any(&r.wall_material, any_of),
            RulePredicate::Usage { any_of } => r.usage.is_some_and(|u| any_of.contains(&u)),
            RulePredicate::YearAtLeast { year } => r.year.is_some_and(|y| y >= *year),
        }
    }
}

/// Soft prior toward `target` for matching buildings on the `link` task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRule {
    pub name: String,
    pub link: LinkType,
    pub predicate: RulePredicate,
    pub target: LossClass,
    /// Relative contribution when several rules match.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// The shipped rule set: modern low-E or triple glazing leans O2I high.
pub fn default_rules() -> Vec<DomainRule> {
    vec![DomainRule {
        name: "low-e glazing".into(),
        link: LinkType::O2I,
        predicate: RulePredicate::Glazing {
            any_of: vec!["low-e".into(), "triple".into()],
        },
        target: LossClass::High,
        weight: 1.0,
    }]
}

/// Weighted mix of the matching rules' targets, or `None` if none match.
pub fn rule_prior(
    record: &BuildingRecord,
    rules: &[DomainRule],
    link: LinkType,
) -> Option<ClassDistribution> {
    let mut p = [0.0; N_CLASSES];
    for r in rules
        .iter()
        .filter(|r| r.link == link && r.predicate.matches(record))
    {
        p[r.target.index()] += r.weight.max(0.0);
    }
    let total: f64 = p.iter().sum();
    (total > 0.0).then(|| ClassDistribution(p.map(|v| v / total)))
}

/// `(1 - w) p + w prior`, renormalized.
pub fn blend(
    p: &ClassDistribution,
    prior: Option<&ClassDistribution>,
    w: f64,
) -> ClassDistribution {
    match prior {
        Some(q) if w > 0.0 => {
            let mut out = [0.0; N_CLASSES];
            for c in 0..N_CLASSES {
                out[c] = (1.0 - w) * p.0[c] + w * q.0[c];
            }
            let s: f64 = out.iter().sum();
            ClassDistribution(out.map(|v| v / s))
        }
        _ => *p,
    }
}

pub fn apply_rules(
    record: &BuildingRecord,
    p: &ClassDistribution,
    rules: &[DomainRule],
    link: LinkType,
    w: f64,
) -> ClassDistribution {
    blend(p, rule_prior(record, rules, link).as_ref(), w)
}

/// Unlabeled rows with optional rule priors.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub priors: Vec<Option<ClassDistribution>>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: String,
    pub iteration: usize,
    pub class: LossClass,
    pub confidence: f64,
    /// Change in the accepted class's probability caused by the rules.
    pub rule_delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EmptyPool,
    NoAcceptances,
    CapExhausted,
    MaxIterations,
    PoolExhausted,
}

#[derive(Clone, Debug)]
pub struct SslOutcome {
    pub model: EnsembleModel,
    pub ledger: Vec<LedgerEntry>,
    pub iterations: usize,
    pub stop: StopReason,
}

pub fn ledger_to_csv(ledger: &[LedgerEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row_id", "iteration", "class", "confidence", "rule_delta"])
        .expect("in-memory write");
    for e in ledger {
        w.write_record([
            e.id.clone(),
            e.iteration.to_string(),
            e.class.to_string(),
            format!("{:.6}", e.confidence),
            format!("{:.6}", e.rule_delta),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// The training set of a round: labeled rows plus accepted pseudo-labels (weight 1).
pub fn augment(
    labeled: &ClassificationData,
    pool: &Pool,
    accepted: &[(usize, LossClass)],
) -> ClassificationData {
    let mut data = labeled.clone();
    for &(i, c) in accepted {
        data.rows.push(pool.rows[i].clone());
        data.labels.push(c.index());
        data.weights.push(1.0);
    }
    data
}

/// Runs self-training. `train` must be deterministic in its input set.
pub fn self_train<F>(
    train: F,
    labeled: &ClassificationData,
    pool: &Pool,
    config: &SslConfig,
) -> Result<SslOutcome, SslError>
where
    F: Fn(&ClassificationData) -> Result<EnsembleModel, ForestError>,
{
    config.validate()?;
    if labeled.is_empty() {
        return Err(SslError::EmptyLabeledSet);
    }
    let mut model = train(labeled)?;
    if pool.is_empty() {
        return Ok(SslOutcome {
            model,
            ledger: Vec::new(),
            iterations: 0,
            stop: StopReason::EmptyPool,
        });
    }
    let cap = ((config.cap_fraction * pool.len() as f64).ceil() as usize).max(1);
    let mut open = vec![true; pool.len()];
    let mut accepted: Vec<(usize, LossClass)> = Vec::new();
    let mut ledger = Vec::new();
    let mut cap_streak = 0;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for iteration in 1..=config.max_iterations {
        iterations = iteration;
        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| open[i]).collect();
        if remaining.is_empty() {
            stop = StopReason::PoolExhausted;
            break;
        }
        let scored: Vec<(usize, ClassDistribution, ClassDistribution)> = remaining
            .par_iter()
            .map(|&i| {
                let p = model.predict_proba(&pool.rows[i])?;
                Ok((i, p, blend(&p, pool.priors[i].as_ref(), config.rule_weight)))
            })
            .collect::<Result<_, ForestError>>()?;
        let mut candidates: Vec<&(usize, ClassDistribution, ClassDistribution)> = scored
            .iter()
            .filter(|(_, _, q)| q.max_prob() >= config.threshold)
            .collect();
        candidates.sort_by(|a, b| {
            b.2.max_prob()
                .total_cmp(&a.2.max_prob())
                .then(a.0.cmp(&b.0))
        });
        if candidates.is_empty() {
            stop = StopReason::NoAcceptances;
            break;
        }
        let binding = candidates.len() > cap;
        for &&(i, p, q) in candidates.iter().take(cap) {
            let class = q.class();
            open[i] = false;
            accepted.push((i, class));
            ledger.push(LedgerEntry {
                id: pool.ids[i].clone(),
                iteration,
                class,
                confidence: q.max_prob(),
                rule_delta: q.0[class.index()] - p.0[class.index()],
            });
        }
        model = train(&augment(labeled, pool, &accepted))?;
        cap_streak = if binding { cap_streak + 1 } else { 0 };
        if cap_streak >= 2 {
            stop = StopReason::CapExhausted;
            break;
        }
    }
    Ok(SslOutcome {
        model,
        ledger,
        iterations,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_random_forest, RandomForestConfig, Schema};
    use crate::geoplane::Polygon;

    fn glazed(g: &str) -> BuildingRecord {
        let mut r = BuildingRecord::bare("b", Polygon::rectangle(0.0, 0.0, 1.0, 1.0).unwrap());
        r.glazing = Some(g.into());
        r
    }

    #[test]
    fn uniform_with_high_rule_example() {
        let out = apply_rules(
            &glazed("low-e"),
            &ClassDistribution::UNIFORM,
            &default_rules(),
            LinkType::O2I,
            0.15,
        );
        let want = [0.85 / 3.0, 0.85 / 3.0, 0.85 / 3.0 + 0.15];
        for (a, b) in out.0.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.0[0] - 0.2833).abs() < 1e-4 && (out.0[2] - 0.4333).abs() < 1e-4);
    }

    #[test]
    fn no_match_or_zero_weight_is_identity() {
        let p = ClassDistribution([0.2, 0.5, 0.3]);
        assert_eq!(
            apply_rules(&glazed("single"), &p, &default_rules(), LinkType::O2I, 0.15),
            p
        );
        assert_eq!(
            apply_rules(&glazed("low-e"), &p, &default_rules(), LinkType::O2I, 0.0),
            p
        );
        assert_eq!(
            apply_rules(&glazed("low-e"), &p, &default_rules(), LinkType::I2I, 0.15),
            p
        );
    }

    #[test]
    fn config_bounds() {
        assert!(SslConfig {
            threshold: 0.3,
            ..SslConfig::default()
        }
        .validate()
        .is_err());
        assert!(SslConfig {
            rule_weight: 0.5,
            ..SslConfig::default()
        }
        .validate()
        .is_err());
        assert!(SslConfig::default().validate().is_ok());
    }

    fn blobs() -> (ClassificationData, Pool) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut pool = Pool::default();
        for i in 0..90 {
            let c = i % 3;
            let x = vec![
                c as f64 * 10.0 + (i as f64 * 0.37).sin(),
                (i as f64 * 0.91).cos(),
            ];
            if i < 30 {
                rows.push(x);
                labels.push(c);
            } else {
                pool.ids.push(format!("u{i}"));
                pool.rows.push(x);
                pool.priors.push(None);
            }
        }
        (
            ClassificationData::new(Schema::numeric(2), rows, labels, 3),
            pool,
        )
    }

    fn rf(d: &ClassificationData) -> Result<EnsembleModel, ForestError> {
        train_random_forest(
            d,
            &RandomForestConfig {
                n_trees: 20,
                seed: 4,
                ..RandomForestConfig::default()
            },
        )
    }

    #[test]
    fn empty_pool_equals_supervised() {
        let (labeled, _) = blobs();
        let out = self_train(rf, &labeled, &Pool::default(), &SslConfig::default()).unwrap();
        assert_eq!(out.model, rf(&labeled).unwrap());
        assert!(out.ledger.is_empty());
        assert_eq!(out.stop, StopReason::EmptyPool);
    }

    #[test]
    fn unreachable_threshold_accepts_nothing() {
        let (labeled, pool) = blobs();
        let cfg = SslConfig {
            threshold: 1.0,
            ..SslConfig::default()
        };
        // Bootstrap leaves some soft leaves, so confidence 1 is rarely reached;
        // use a uniform prior with positive weight to make it impossible.
        let soft_pool = Pool {
            priors: vec![Some(ClassDistribution::UNIFORM); pool.len()],
            ..pool
        };
        let out = self_train(rf, &labeled, &soft_pool, &cfg).unwrap();
        assert!(out.ledger.is_empty());
        assert_eq!(out.stop, StopReason::NoAcceptances);
    }

    #[test]
    fn ledger_respects_threshold_cap_and_fixpoint() {
        let (labeled, pool) = blobs();
        let cfg = SslConfig::default();
        let out = self_train(rf, &labeled, &pool, &cfg).unwrap();
        assert!(!out.ledger.is_empty());
        let cap = (cfg.cap_fraction * pool.len() as f64).ceil() as usize;
        for it in 1..=out.iterations {
            assert!(out.ledger.iter().filter(|e| e.iteration == it).count() <= cap);
        }
        assert!(out.ledger.iter().all(|e| e.confidence >= cfg.threshold));
        let accepted: Vec<(usize, LossClass)> = out
            .ledger
            .iter()
            .map(|e| (pool.ids.iter().position(|id| *id == e.id).unwrap(), e.class))
            .collect();
        let replay = self_train(
            rf,
            &augment(&labeled, &pool, &accepted),
            &Pool::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(replay.model, out.model);
        let csv = ledger_to_csv(&out.ledger);
        assert_eq!(csv.lines().count(), out.ledger.len() + 1);
    }
}
