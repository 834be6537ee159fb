use std::collections::BTreeSet;

use buildloss_core::dataset::{impute_attributes, ImputeConfig};
use buildloss_core::geoplane::{OverlapEstimator, Point};
use buildloss_core::losslab::{detect_all, fit_quantizer, relative_loss, QuantizerConfig};
use buildloss_core::synthcity::{generate_scenario, mask_heights, SynthConfig};

fn city(n: usize) -> SynthConfig {
    SynthConfig {
        n_buildings: n,
        samples_per_building: 40.0,
        ..SynthConfig::default()
    }
}

#[test]
fn exact_positions_give_perfect_detection() {
    let s = generate_scenario(&city(100).noiseless()).unwrap();
    let e = s.emit_samples();
    let records = s.records();
    let verdicts = detect_all(
        &e.samples,
        &records,
        &OverlapEstimator::new(4096, 3).unwrap(),
    )
    .unwrap();
    for (v, t) in verdicts.iter().zip(&e.truth) {
        assert_eq!(v.building, t.building, "sample {}", t.sample);
    }
}

/// Penetration is the only class signal here (no interior attenuation).
/// Each true indoor sample is paired with the generator's outdoor power 5 m
/// away, so shadowing and path-loss differences add realistic noise.
#[test]
fn quantizer_recovers_separated_penetration_classes() {
    let s = generate_scenario(&SynthConfig {
        interior_rate_db_per_m: [0.0; 3],
        ..city(200)
    })
    .unwrap();
    let e = s.emit_samples();
    let d = 5.0;
    let (mut losses, mut truth) = (Vec::new(), Vec::new());
    for (i, (m, t)) in e.samples.iter().zip(&e.truth).enumerate() {
        let Some(b) = t.building else { continue };
        let cell = s.cells.iter().position(|c| c.id == m.cell_id).unwrap();
        let angle = i as f64 * 2.399_963_229_728_653;
        let q = Point::new(
            t.true_position.x + d * angle.cos(),
            t.true_position.y + d * angle.sin(),
        );
        losses.push(relative_loss(s.rsrp(cell, m.earfcn, q, None), m.rsrp, d));
        truth.push(s.buildings[b].o2i);
    }
    assert!(losses.len() > 1000);
    let q = fit_quantizer(&losses, &QuantizerConfig::default()).unwrap();
    assert_eq!(q.centers.len(), 3);
    let wrong = losses
        .iter()
        .zip(&truth)
        .filter(|(&l, &c)| q.classify(l) != c)
        .count();
    let err = wrong as f64 / losses.len() as f64;
    assert!(err <= 0.05, "confusion with truth {err}");

    // With zero noise the pair loss is the penetration over the gap exactly.
    let s = generate_scenario(&SynthConfig {
        interior_rate_db_per_m: [0.0; 3],
        ..city(50).noiseless()
    })
    .unwrap();
    let e = s.emit_samples();
    for (m, t) in e.samples.iter().zip(&e.truth) {
        let Some(b) = t.building else { continue };
        let cell = s.cells.iter().position(|c| c.id == m.cell_id).unwrap();
        let loss = relative_loss(s.rsrp(cell, m.earfcn, t.true_position, None), m.rsrp, d);
        assert!((loss - s.buildings[b].penetration_db / d).abs() < 1e-9);
    }
}

#[test]
fn chained_imputation_beats_the_median_on_heights() {
    let truth = generate_scenario(&city(300)).unwrap().records();
    let (masked, idx) = mask_heights(&truth, 0.3, 5);
    assert_eq!(idx.len(), 90);
    let (imputed, report) = impute_attributes(&masked, &ImputeConfig::default()).unwrap();
    assert!(report.iterative_columns.iter().any(|c| c == "height"));
    let mut kept: Vec<f64> = masked.iter().filter_map(|r| r.height).collect();
    kept.sort_by(f64::total_cmp);
    let median = kept[kept.len() / 2];
    let rmse = |f: &dyn Fn(usize) -> f64| {
        (idx.iter()
            .map(|&i| (f(i) - truth[i].height.unwrap()).powi(2))
            .sum::<f64>()
            / idx.len() as f64)
            .sqrt()
    };
    let chained = rmse(&|i| imputed[i].height.unwrap());
    let baseline = rmse(&|_| median);
    assert!(chained < baseline, "chained {chained} vs median {baseline}");
    let untouched: BTreeSet<usize> = (0..truth.len()).filter(|i| !idx.contains(i)).collect();
    assert!(untouched
        .iter()
        .all(|&i| imputed[i].height == truth[i].height));
}
