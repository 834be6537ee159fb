use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowData, GrowParams, Growth};
use super::{
    single_class, ClassificationData, DecisionTree, EnsembleModel, ForestError, ModelBody,
    ModelKind,
};
use crate::class::argmax_high;
use crate::seed::mix64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    Sqrt,
    All,
    Count(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub features: FeatureSubsample,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub balanced_class_weights: bool,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 12,
            features: FeatureSubsample::Sqrt,
            bootstrap: true,
            min_samples_leaf: 1,
            balanced_class_weights: true,
            seed: 0,
        }
    }
}

/// Content hash of a row and its label. Bootstrap multiplicities are keyed on
/// this rather than on row position, so exact duplicate rows always receive
/// the same multiplicity in a given tree.
fn row_key(row: &[f64], label: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in row {
        h = mix64(h ^ x.to_bits());
    }
    mix64(h ^ label as u64)
}

/// Poisson(1) draw from a uniform variate, i.e. an online bootstrap multiplicity.
fn poisson1(u: f64) -> u32 {
    let mut p = (-1.0f64).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && k < 32 {
        k += 1;
        p /= f64::from(k);
        cdf += p;
    }
    k
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub fn train_random_forest(
    data: &ClassificationData,
    config: &RandomForestConfig,
) -> Result<EnsembleModel, ForestError> {
    data.validate()?;
    if config.n_trees == 0 {
        return Err(ForestError::InvalidConfig(
            "n_trees must be positive".into(),
        ));
    }
    if let Some(c) = single_class(data) {
        let mut dist = vec![0.0; data.n_classes];
        dist[c] = 1.0;
        return Ok(EnsembleModel::constant(
            ModelKind::RandomForest,
            data.schema.clone(),
            dist,
            format!("single-class input (class {c}); constant model"),
        ));
    }
    let mut train = data.canonical();
    if config.balanced_class_weights {
        train = train.balanced();
    }
    let n = train.len();
    let k = train.n_classes;
    let d = train.schema.len();
    let mtry = match config.features {
        FeatureSubsample::Sqrt => ((d as f64).sqrt().ceil() as usize).max(1),
        FeatureSubsample::All => d,
        FeatureSubsample::Count(c) => c.clamp(1, d),
    };
    let keys: Vec<u64> = (0..n)
        .map(|i| row_key(&train.rows[i], train.labels[i]))
        .collect();

    let grown: Vec<(DecisionTree, Vec<u32>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = mix64(config.seed ^ mix64(t as u64 + 1));
            let counts: Vec<u32> = if config.bootstrap {
                keys.iter()
                    .map(|&h| poisson1(unit(mix64(h ^ tree_seed))))
                    .collect()
            } else {
                vec![1; n]
            };
            let mut stats = vec![0.0; n * k];
            for i in 0..n {
                stats[i * k + train.labels[i]] = train.weights[i] * f64::from(counts[i]);
            }
            let idx: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
            let grow_data = GrowData {
                rows: &train.rows,
                kinds: &train.schema.kinds,
                stats: &stats,
                dim: k,
                criterion: Criterion::Gini,
            };
            let params = GrowParams {
                growth: Growth::DepthWise {
                    max_depth: config.max_depth,
                },
                min_samples_leaf: config.min_samples_leaf,
                min_child_weight: 0.0,
                min_gain: 1e-12,
                features_per_node: Some(mtry),
                seed: tree_seed,
            };
            let tree = if idx.is_empty() {
                DecisionTree::leaf(vec![1.0 / k as f64; k])
            } else {
                grow(&grow_data, idx, &params)
            };
            (tree, counts)
        })
        .collect();

    let mut gains = vec![0.0; d];
    let mut oob = vec![vec![0.0; k]; n];
    let mut has_oob = vec![false; n];
    for (tree, counts) in &grown {
        tree.add_gains(&mut gains);
        if config.bootstrap {
            for i in 0..n {
                if counts[i] == 0 {
                    for (acc, v) in oob[i].iter_mut().zip(tree.leaf_value(&train.rows[i])) {
                        *acc += v;
                    }
                    has_oob[i] = true;
                }
            }
        }
    }
    let oob_accuracy = if config.bootstrap {
        let (mut hit, mut total) = (0.0, 0.0);
        for i in (0..n).filter(|&i| has_oob[i]) {
            total += train.weights[i];
            if argmax_high(&oob[i]) == train.labels[i] {
                hit += train.weights[i];
            }
        }
        (total > 0.0).then(|| hit / total)
    } else {
        None
    };

    Ok(EnsembleModel {
        kind: ModelKind::RandomForest,
        n_classes: k,
        schema: train.schema.clone(),
        body: ModelBody::Forest {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
        },
        gains,
        oob_accuracy,
        warnings: Vec::new(),
    })
}
