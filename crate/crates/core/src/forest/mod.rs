//! Tree-ensemble learners written from scratch.
//!
//! * [`train_random_forest`]: bagged Gini trees with per-node feature subsampling.
//! * [`train_gradient_boosting`]: multinomial log-loss boosting, one Newton tree
//!   per class per round, grown level-wise or leaf-wise.
//! * [`train_voting`]: soft vote over the three learners above.
//! * [`train_gb_regressor`]: squared-error leaf-wise boosting (used for imputation).
//!
//! Training rows carry weights so duplicated observations can be collapsed
//! into a single weighted row. Rows are put into a canonical order before
//! training, which makes every model independent of input row order.

mod boost;
mod rf;
mod tree;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::{argmax_high, LossClass, N_CLASSES};

pub use boost::{
    multiclass_log_loss, softmax, softmax_gradient, train_gb_regressor, train_gradient_boosting,
    GbRegressorConfig, GradientBoostingConfig, GrowthStrategy, RegressionModel,
};
pub use rf::{train_random_forest, FeatureSubsample, RandomForestConfig};
pub use tree::{DecisionTree, Node, SplitRule};

/// Categorical features with more codes than this are split as ordered codes.
pub const MAX_SUBSET_CATEGORIES: usize = 32;

pub const MODEL_FORMAT: &str = "buildloss-ensemble";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("non-finite gradient at round {round}, class {class}: {detail}")]
    NonFiniteGradient {
        round: usize,
        class: usize,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model document: {0}")]
    Document(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical { n_categories: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
}

impl Schema {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>) -> Self {
        assert_eq!(names.len(), kinds.len(), "one kind per feature name");
        Self { names, kinds }
    }

    pub fn numeric(n: usize) -> Self {
        Self {
            names: (0..n).map(|i| format!("f{i}")).collect(),
            kinds: vec![FeatureKind::Numeric; n],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn check_row(&self, row: &[f64]) -> Result<(), ForestError> {
        if row.len() != self.len() {
            return Err(ForestError::SchemaMismatch(format!(
                "expected {} features, got {}",
                self.len(),
                row.len()
            )));
        }
        for (j, (&x, kind)) in row.iter().zip(&self.kinds).enumerate() {
            let ok = match kind {
                FeatureKind::Numeric => x.is_finite(),
                FeatureKind::Categorical { n_categories } => {
                    x.fract() == 0.0 && x >= 0.0 && (x as usize) < *n_categories
                }
            };
            if !ok {
                return Err(ForestError::SchemaMismatch(format!(
                    "feature `{}` has invalid value {x}",
                    self.names[j]
                )));
            }
        }
        Ok(())
    }
}

/// Weighted classification training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationData {
    pub schema: Schema,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_classes: usize,
}

impl ClassificationData {
    pub fn new(schema: Schema, rows: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Self {
        let weights = vec![1.0; rows.len()];
        Self {
            schema,
            rows,
            labels,
            weights,
            n_classes,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.rows.is_empty() {
            return Err(ForestError::EmptyTrainingSet);
        }
        if self.labels.len() != self.rows.len() || self.weights.len() != self.rows.len() {
            return Err(ForestError::SchemaMismatch(
                "rows, labels and weights differ in length".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(ForestError::InvalidConfig(
                "need at least two classes".into(),
            ));
        }
        for row in &self.rows {
            self.schema.check_row(row)?;
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(ForestError::SchemaMismatch(format!(
                "label {l} out of range"
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ForestError::InvalidConfig(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Total weight per class.
    pub fn class_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_classes];
        for (&l, &wt) in self.labels.iter().zip(&self.weights) {
            w[l] += wt;
        }
        w
    }

    /// Copy in canonical row order with zero-weight rows removed.
    pub(crate) fn canonical(&self) -> ClassificationData {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        idx.sort_by(|&a, &b| {
            cmp_rows(&self.rows[a], &self.rows[b])
                .then(self.labels[a].cmp(&self.labels[b]))
                .then(self.weights[a].total_cmp(&self.weights[b]))
        });
        ClassificationData {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Inverse-frequency class reweighting; absent classes stay at zero.
    pub(crate) fn balanced(&self) -> ClassificationData {
        let cw = self.class_weights();
        let total: f64 = cw.iter().sum();
        let present = cw.iter().filter(|&&w| w > 0.0).count() as f64;
        let mut out = self.clone();
        for (w, &l) in out.weights.iter_mut().zip(&self.labels) {
            *w *= total / (present * cw[l]);
        }
        out
    }
}

pub(crate) fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Probability vector over {low, medium, high}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution(pub [f64; N_CLASSES]);

impl ClassDistribution {
    pub const UNIFORM: ClassDistribution = ClassDistribution([1.0 / 3.0; N_CLASSES]);

    pub fn one_hot(class: LossClass) -> Self {
        let mut p = [0.0; N_CLASSES];
        p[class.index()] = 1.0;
        Self(p)
    }

    pub fn from_slice(p: &[f64]) -> Option<Self> {
        let arr: [f64; N_CLASSES] = p.try_into().ok()?;
        Some(Self(arr))
    }

    pub fn probs(&self) -> &[f64; N_CLASSES] {
        &self.0
    }

    /// Arg-max class, ties toward the higher loss class.
    pub fn class(&self) -> LossClass {
        LossClass::from_index(argmax_high(&self.0)).expect("three classes")
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RandomForest,
    GbLevelwise,
    GbLeafwise,
    Voting,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random-forest",
            ModelKind::GbLevelwise => "gb-levelwise",
            ModelKind::GbLeafwise => "gb-leafwise",
            ModelKind::Voting => "voting",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "body", rename_all = "snake_case")]
pub enum ModelBody {
    /// Predicts the same distribution everywhere.
    Constant {
        distribution: Vec<f64>,
    },
    Forest {
        trees: Vec<DecisionTree>,
    },
    /// `rounds[r][k]` is the tree for class `k` in round `r`.
    Boosted {
        base_scores: Vec<f64>,
        learning_rate: f64,
        rounds: Vec<Vec<DecisionTree>>,
    },
    Voting {
        members: Vec<EnsembleModel>,
    },
}

/// A trained classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: ModelKind,
    pub n_classes: usize,
    pub schema: Schema,
    pub body: ModelBody,
    /// Total split gain per feature (unnormalized).
    pub gains: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oob_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EnsembleModel {
    pub(crate) fn constant(
        kind: ModelKind,
        schema: Schema,
        distribution: Vec<f64>,
        warning: String,
    ) -> Self {
        let d = schema.len();
        Self {
            kind,
            n_classes: distribution.len(),
            schema,
            body: ModelBody::Constant { distribution },
            gains: vec![0.0; d],
            oob_accuracy: None,
            warnings: vec![warning],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.body, ModelBody::Constant { .. })
    }

    /// Class probabilities for an arbitrary class count.
    pub fn predict_proba_vec(&self, row: &[f64]) -> Result<Vec<f64>, ForestError> {
        self.schema.check_row(row)?;
        Ok(self.proba_unchecked(row))
    }

    fn proba_unchecked(&self, row: &[f64]) -> Vec<f64> {
        match &self.body {
            ModelBody::Constant { distribution } => distribution.clone(),
            ModelBody::Forest { trees } => {
                let mut p = vec![0.0; self.n_classes];
                for t in trees {
                    for (acc, v) in p.iter_mut().zip(t.leaf_value(row)) {
                        *acc += v;
                    }
                }
                normalize(&mut p);
                p
            }
            ModelBody::Boosted {
                base_scores,
                learning_rate,
                rounds,
            } => {
                let mut scores = base_scores.clone();
                for round in rounds {
                    for (k, t) in round.iter().enumerate() {
                        scores[k] += learning_rate * t.leaf_value(row)[0];
                    }
                }
                softmax(&scores)
            }
            ModelBody::Voting { members } => {
                let mut p = vec![0.0; self.n_classes];
                for m in members {
                    for (acc, v) in p.iter_mut().zip(m.proba_unchecked(row)) {
                        *acc += v;
                    }
                }
                normalize(&mut p);
                p
            }
        }
    }

    /// Loss-class distribution; requires a three-class model.
    pub fn predict_proba(&self, row: &[f64]) -> Result<ClassDistribution, ForestError> {
        if self.n_classes != N_CLASSES {
            return Err(ForestError::SchemaMismatch(format!(
                "model has {} classes, loss classes need {N_CLASSES}",
                self.n_classes
            )));
        }
        let p = self.predict_proba_vec(row)?;
        Ok(ClassDistribution::from_slice(&p).expect("three classes"))
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<LossClass, ForestError> {
        Ok(self.predict_proba(row)?.class())
    }

    /// Arg-max class index for any class count (ties toward the higher index).
    pub fn predict_index(&self, row: &[f64]) -> Result<usize, ForestError> {
        Ok(argmax_high(&self.predict_proba_vec(row)?))
    }

    /// Split gain per feature normalized to sum to one; voting averages members.
    pub fn feature_importance(&self) -> BTreeMap<String, f64> {
        self.schema
            .names
            .iter()
            .cloned()
            .zip(self.importance_vec())
            .collect()
    }

    pub fn importance_vec(&self) -> Vec<f64> {
        match &self.body {
            ModelBody::Voting { members } => {
                let mut acc = vec![0.0; self.schema.len()];
                for m in members {
                    for (a, v) in acc.iter_mut().zip(m.importance_vec()) {
                        *a += v;
                    }
                }
                let n = members.len().max(1) as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
            _ => {
                let total: f64 = self.gains.iter().filter(|g| **g > 0.0).sum();
                if total > 0.0 {
                    self.gains.iter().map(|g| g.max(0.0) / total).collect()
                } else {
                    vec![0.0; self.gains.len()]
                }
            }
        }
    }

    pub fn to_document(&self, metadata: BTreeMap<String, serde_json::Value>) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            metadata,
            model: self.clone(),
        }
    }
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|v| *v /= s);
    }
}

/// Versioned JSON envelope for a persisted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub model: EnsembleModel,
}

impl ModelDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| ForestError::Document(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(ForestError::Document(format!(
                "unexpected format `{}`",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(ForestError::Document(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        Ok(doc)
    }
}

/// Soft vote over a random forest and both boosting strategies, equal weights.
pub fn train_voting(
    data: &ClassificationData,
    validation: Option<&ClassificationData>,
    rf: &RandomForestConfig,
    gb: &GradientBoostingConfig,
) -> Result<EnsembleModel, ForestError> {
    let forest = train_random_forest(data, rf)?;
    let level = train_gradient_boosting(data, validation, GrowthStrategy::LevelWise, gb)?;
    let leaf = train_gradient_boosting(data, validation, GrowthStrategy::LeafWise, gb)?;
    Ok(voting_of(vec![forest, level, leaf]))
}

/// Wraps already trained members into an equal-weight soft-voting model.
pub fn voting_of(members: Vec<EnsembleModel>) -> EnsembleModel {
    let first = &members[0];
    let warnings = members
        .iter()
        .flat_map(|m| m.warnings.iter().cloned())
        .collect();
    EnsembleModel {
        kind: ModelKind::Voting,
        n_classes: first.n_classes,
        schema: first.schema.clone(),
        gains: vec![0.0; first.schema.len()],
        body: ModelBody::Voting {
            members: members.clone(),
        },
        oob_accuracy: None,
        warnings,
    }
}

/// Degenerate input: at most one class carries weight.
pub(crate) fn single_class(data: &ClassificationData) -> Option<usize> {
    let cw = data.class_weights();
    let present: Vec<usize> = (0..cw.len()).filter(|&c| cw[c] > 0.0).collect();
    (present.len() == 1).then(|| present[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_rejects_bad_rows() {
        let schema = Schema::new(
            vec!["a".into(), "b".into()],
            vec![
                FeatureKind::Numeric,
                FeatureKind::Categorical { n_categories: 3 },
            ],
        );
        assert!(schema.check_row(&[1.0, 2.0]).is_ok());
        assert!(matches!(
            schema.check_row(&[1.0]),
            Err(ForestError::SchemaMismatch(_))
        ));
        assert!(schema.check_row(&[1.0, 3.0]).is_err());
        assert!(schema.check_row(&[1.0, 0.5]).is_err());
        assert!(schema.check_row(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn canonical_order_is_input_order_free() {
        let schema = Schema::numeric(1);
        let a = ClassificationData::new(
            schema.clone(),
            vec![vec![2.0], vec![1.0], vec![3.0]],
            vec![0, 1, 0],
            2,
        );
        let b = ClassificationData::new(
            schema,
            vec![vec![3.0], vec![2.0], vec![1.0]],
            vec![0, 0, 1],
            2,
        );
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn distribution_helpers() {
        let d = ClassDistribution([0.4, 0.2, 0.4]);
        assert_eq!(d.class(), LossClass::High);
        assert_eq!(d.max_prob(), 0.4);
        assert!(d.is_valid(1e-9));
        assert!(!ClassDistribution([0.5, 0.5, 0.5]).is_valid(1e-9));
    }
}
