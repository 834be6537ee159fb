use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowData, GrowParams, Growth};
use super::{
    cmp_rows, single_class, ClassificationData, DecisionTree, EnsembleModel, ForestError,
    ModelBody, ModelKind, Schema,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthStrategy {
    /// Depth-limited trees grown level by level.
    LevelWise,
    /// Best-gain leaf first, up to a leaf budget.
    LeafWise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientBoostingConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    /// Depth cap applied to leaf-wise trees.
    pub leafwise_max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub min_samples_leaf: usize,
    pub early_stopping_patience: usize,
    pub balanced_class_weights: bool,
    pub seed: u64,
}

impl Default for GradientBoostingConfig {
    fn default() -> Self {
        Self {
            n_rounds: 300,
            learning_rate: 0.1,
            max_depth: 6,
            max_leaves: 31,
            leafwise_max_depth: 16,
            lambda: 1.0,
            min_child_weight: 1e-3,
            min_samples_leaf: 1,
            early_stopping_patience: 20,
            balanced_class_weights: true,
            seed: 0,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Negative log-likelihood of `label` under softmax(scores).
pub fn multiclass_log_loss(scores: &[f64], label: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[label]
}

/// Gradient of [`multiclass_log_loss`] with respect to the scores: softmax minus one-hot.
pub fn softmax_gradient(scores: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(scores);
    g[label] -= 1.0;
    g
}

fn weighted_log_loss(scores: &[Vec<f64>], data: &ClassificationData) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for ((s, &l), &w) in scores.iter().zip(&data.labels).zip(&data.weights) {
        total += w * multiclass_log_loss(s, l);
        weight += w;
    }
    if weight > 0.0 {
        total / weight
    } else {
        0.0
    }
}

fn growth_for(strategy: GrowthStrategy, config: &GradientBoostingConfig) -> Growth {
    match strategy {
        GrowthStrategy::LevelWise => Growth::DepthWise {
            max_depth: config.max_depth,
        },
        GrowthStrategy::LeafWise => Growth::LeafWise {
            max_leaves: config.max_leaves,
            max_depth: config.leafwise_max_depth,
        },
    }
}

/// Multinomial log-loss boosting with a softmax link.
///
/// With a validation set, training stops once validation log-loss has not
/// improved for `early_stopping_patience` rounds and the model is truncated
/// to the best round.
pub fn train_gradient_boosting(
    data: &ClassificationData,
    validation: Option<&ClassificationData>,
    strategy: GrowthStrategy,
    config: &GradientBoostingConfig,
) -> Result<EnsembleModel, ForestError> {
    data.validate()?;
    if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
        return Err(ForestError::InvalidConfig(
            "learning rate must be finite and >= 0".into(),
        ));
    }
    let kind = match strategy {
        GrowthStrategy::LevelWise => ModelKind::GbLevelwise,
        GrowthStrategy::LeafWise => ModelKind::GbLeafwise,
    };
    if let Some(c) = single_class(data) {
        let mut dist = vec![0.0; data.n_classes];
        dist[c] = 1.0;
        return Ok(EnsembleModel::constant(
            kind,
            data.schema.clone(),
            dist,
            format!("single-class input (class {c}); constant model"),
        ));
    }
    if let Some(v) = validation {
        v.validate()?;
        if v.schema != data.schema || v.n_classes != data.n_classes {
            return Err(ForestError::SchemaMismatch(
                "validation schema differs from training".into(),
            ));
        }
    }
    let mut train = data.canonical();
    if config.balanced_class_weights {
        train = train.balanced();
    }
    let n = train.len();
    let k = train.n_classes;
    let cw = train.class_weights();
    let total: f64 = cw.iter().sum();
    let base_scores: Vec<f64> = cw.iter().map(|w| (w / total).max(1e-12).ln()).collect();

    let mut scores = vec![base_scores.clone(); n];
    let mut val_scores = validation.map(|v| vec![base_scores.clone(); v.len()]);
    let mut rounds: Vec<Vec<DecisionTree>> = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    let growth = growth_for(strategy, config);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut stats = vec![0.0; n * 2];

    for round in 0..config.n_rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut trees = Vec::with_capacity(k);
        for class in 0..k {
            for i in 0..n {
                let p = probs[i][class];
                let y = if train.labels[i] == class { 1.0 } else { 0.0 };
                let w = train.weights[i];
                let g = w * (p - y);
                let h = w * (p * (1.0 - p)).max(1e-16);
                if !g.is_finite() || !h.is_finite() {
                    return Err(ForestError::NonFiniteGradient {
                        round,
                        class,
                        detail: format!("row {i}: scores {:?}, weight {w}", scores[i]),
                    });
                }
                stats[2 * i] = g;
                stats[2 * i + 1] = h;
            }
            let grow_data = GrowData {
                rows: &train.rows,
                kinds: &train.schema.kinds,
                stats: &stats,
                dim: 2,
                criterion: Criterion::Newton {
                    lambda: config.lambda,
                },
            };
            let params = GrowParams {
                growth,
                min_samples_leaf: config.min_samples_leaf,
                min_child_weight: config.min_child_weight,
                min_gain: 1e-12,
                features_per_node: None,
                seed: config.seed,
            };
            trees.push(grow(&grow_data, all_rows.clone(), &params));
        }
        for (i, s) in scores.iter_mut().enumerate() {
            for (c, t) in trees.iter().enumerate() {
                s[c] += config.learning_rate * t.leaf_value(&train.rows[i])[0];
            }
        }
        if let (Some(v), Some(vs)) = (validation, val_scores.as_mut()) {
            for (row, s) in v.rows.iter().zip(vs.iter_mut()) {
                for (c, t) in trees.iter().enumerate() {
                    s[c] += config.learning_rate * t.leaf_value(row)[0];
                }
            }
            let loss = weighted_log_loss(vs, v);
            rounds.push(trees);
            if loss < best.0 {
                best = (loss, round);
            } else if round - best.1 >= config.early_stopping_patience {
                break;
            }
        } else {
            rounds.push(trees);
        }
    }
    if validation.is_some() {
        rounds.truncate(best.1 + 1);
    }

    let mut gains = vec![0.0; train.schema.len()];
    for t in rounds.iter().flatten() {
        t.add_gains(&mut gains);
    }
    Ok(EnsembleModel {
        kind,
        n_classes: k,
        schema: train.schema.clone(),
        body: ModelBody::Boosted {
            base_scores,
            learning_rate: config.learning_rate,
            rounds,
        },
        gains,
        oob_accuracy: None,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbRegressorConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbRegressorConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_leaves: 15,
            max_depth: 8,
            lambda: 1.0,
            min_samples_leaf: 3,
            seed: 0,
        }
    }
}

/// Squared-error boosted regressor with leaf-wise trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub schema: Schema,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    pub gains: Vec<f64>,
}

impl RegressionModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64, ForestError> {
        self.schema.check_row(row)?;
        Ok(self.base
            + self.learning_rate * self.trees.iter().map(|t| t.leaf_value(row)[0]).sum::<f64>())
    }
}

pub fn train_gb_regressor(
    schema: &Schema,
    rows: &[Vec<f64>],
    targets: &[f64],
    config: &GbRegressorConfig,
) -> Result<RegressionModel, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if rows.len() != targets.len() {
        return Err(ForestError::SchemaMismatch(
            "rows and targets differ in length".into(),
        ));
    }
    for row in rows {
        schema.check_row(row)?;
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(ForestError::NonFiniteGradient {
            round: 0,
            class: 0,
            detail: "non-finite regression target".into(),
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&rows[a], &rows[b]).then(targets[a].total_cmp(&targets[b])));
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let targets: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
    let n = rows.len();

    let base = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut stats = vec![0.0; 2 * n];
    let all: Vec<usize> = (0..n).collect();
    for round in 0..config.n_rounds {
        for i in 0..n {
            let g = pred[i] - targets[i];
            if !g.is_finite() {
                return Err(ForestError::NonFiniteGradient {
                    round,
                    class: 0,
                    detail: format!("row {i}"),
                });
            }
            stats[2 * i] = g;
            stats[2 * i + 1] = 1.0;
        }
        let data = GrowData {
            rows: &rows,
            kinds: &schema.kinds,
            stats: &stats,
            dim: 2,
            criterion: Criterion::Newton {
                lambda: config.lambda,
            },
        };
        let params = GrowParams {
            growth: Growth::LeafWise {
                max_leaves: config.max_leaves,
                max_depth: config.max_depth,
            },
            min_samples_leaf: config.min_samples_leaf,
            min_child_weight: 0.0,
            min_gain: 1e-12,
            features_per_node: None,
            seed: config.seed,
        };
        let tree = grow(&data, all.clone(), &params);
        if tree.n_leaves() == 1 && tree.leaf_value(&rows[0])[0].abs() < 1e-15 {
            // Residuals are already zero; further rounds add nothing.
            break;
        }
        for (p, row) in pred.iter_mut().zip(&rows) {
            *p += config.learning_rate * tree.leaf_value(row)[0];
        }
        trees.push(tree);
    }
    let mut gains = vec![0.0; schema.len()];
    for t in &trees {
        t.add_gains(&mut gains);
    }
    Ok(RegressionModel {
        schema: schema.clone(),
        base,
        learning_rate: config.learning_rate,
        trees,
        gains,
    })
}
