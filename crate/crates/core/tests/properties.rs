use std::f64::consts::PI;

use buildloss_core::forest::{
    train_random_forest, ClassDistribution, ClassificationData, RandomForestConfig, Schema,
};
use buildloss_core::geoplane::{
    footprint_metrics, rectangle_mass, GaussianPosition, OverlapEstimator, Point, Polygon, Rect,
};
use buildloss_core::losslab::{
    fit_box_cox, fit_quantizer, kmeans_1d, relative_loss, silhouette_1d, QuantizerConfig,
};
use buildloss_core::metrics::{building_entropy, entropy_bits, mmpp, silhouette, vote};
use buildloss_core::ssl::{self_train, Pool, SslConfig};
use buildloss_core::LossClass;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Star-shaped polygon from sorted angles and radii about the origin.
fn star(radii: &[f64], jitter: &[f64]) -> Polygon {
    let n = radii.len();
    let pts = (0..n)
        .map(|i| {
            let a = 2.0 * PI * (i as f64 + 0.4 * jitter[i]) / n as f64;
            Point::new(radii[i] * a.cos(), radii[i] * a.sin())
        })
        .collect();
    Polygon::new(pts, Vec::new()).unwrap()
}

fn rotate(p: Point, about: Point, theta: f64) -> Point {
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (p.x - about.x, p.y - about.y);
    Point::new(about.x + c * dx - s * dy, about.y + s * dx + c * dy)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn footprint_metrics_are_similarity_invariant(
        radii in prop::collection::vec(1.0f64..20.0, 5..12),
        seed in 0u64..1000,
        dx in -1e4f64..1e4, dy in -1e4f64..1e4,
        theta in 0.0f64..(2.0 * PI),
        scale in 0.05f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter: Vec<f64> = radii.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let poly = star(&radii, &jitter);
        let m = footprint_metrics(&poly).unwrap();
        prop_assert!(m.compactness > 0.0 && m.compactness <= 1.0);
        let moved = poly
            .map_points(|p| {
                let r = rotate(p, Point::new(0.0, 0.0), theta);
                Point::new(scale * r.x + dx, scale * r.y + dy)
            })
            .unwrap();
        let t = footprint_metrics(&moved).unwrap();
        prop_assert!((t.area - scale * scale * m.area).abs() <= 1e-9 * t.area.max(1.0));
        prop_assert!((t.perimeter - scale * m.perimeter).abs() <= 1e-9 * t.perimeter.max(1.0));
        prop_assert!((t.compactness - m.compactness).abs() <= 1e-9);
    }

    /// An isotropic Gaussian's mass is rotation invariant, so a rotated
    /// rectangle (sampled path) must match the closed-form product.
    #[test]
    fn rotated_rectangle_overlap_matches_cdf_product(
        w in 2.0f64..40.0, h in 2.0f64..40.0,
        mx in -10.0f64..50.0, my in -10.0f64..50.0,
        sigma in 0.5f64..15.0,
        theta in 0.05f64..1.5,
    ) {
        let rect = Rect { min: Point::new(0.0, 0.0), max: Point::new(w, h) };
        let pos = GaussianPosition::new(Point::new(mx, my), sigma).unwrap();
        let want = rectangle_mass(&pos, &rect);
        let pivot = Point::new(3.0, -2.0);
        let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            .map(|(x, y)| rotate(Point::new(x, y), pivot, theta));
        let poly = Polygon::new(corners.to_vec(), Vec::new()).unwrap();
        let rpos = GaussianPosition::new(rotate(pos.mean, pivot, theta), sigma).unwrap();
        let est = OverlapEstimator::new(4096, 1).unwrap();
        let got = est.overlap(&rpos, &poly);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - want).abs() <= 0.02, "got {} want {}", got, want);
    }

    #[test]
    fn relative_loss_is_antisymmetric_and_offset_free(
        a in -140.0f64..-40.0, b in -140.0f64..-40.0,
        c in -30.0f64..30.0, d in 0.5f64..200.0,
    ) {
        let l = relative_loss(a, b, d);
        prop_assert!((l + relative_loss(b, a, d)).abs() <= 1e-12);
        prop_assert!((relative_loss(a + c, b + c, d) - l).abs() <= 1e-12);
    }

    #[test]
    fn box_cox_inverts(values in prop::collection::vec(0.01f64..30.0, 20..80), probe in 0.01f64..30.0) {
        let bc = fit_box_cox(&values);
        // Below the fit domain the transform clamps by design.
        prop_assume!(probe + bc.shift >= 0.5);
        prop_assert!((bc.inverse(bc.transform(probe)) - probe).abs() <= 1e-8 * probe.max(1.0));
    }

    #[test]
    fn simplex_metrics_stay_in_bounds(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..20)) {
        let dists: Vec<ClassDistribution> = raw
            .iter()
            .map(|&(x, y, z)| {
                let s = x + y + z + 1e-12;
                ClassDistribution([x / s, y / s, z / s])
            })
            .collect();
        let hi = 3f64.log2() + 1e-12;
        for d in &dists {
            let h = entropy_bits(d.probs());
            prop_assert!((-1e-12..=hi).contains(&h));
        }
        let h = building_entropy(&dists).unwrap();
        prop_assert!((-1e-12..=hi).contains(&h));
        let m = mmpp(&dists).unwrap();
        prop_assert!((1.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&m));
    }

    #[test]
    fn vote_is_argmax_with_high_ties(v in prop::array::uniform3(0usize..6)) {
        prop_assume!(v.iter().sum::<usize>() > 0);
        let c = vote(&v);
        let best = *v.iter().max().unwrap();
        prop_assert_eq!(v[c.index()], best);
        prop_assert!(v[c.index() + 1..].iter().all(|&x| x < best));
    }
}

/// Exact 1-D k-means by dynamic programming over sorted values.
fn dp_kmeans(values: &[f64], k: usize) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let x: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let n = x.len();
    let (mut s1, mut s2) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    let cost = |i: usize, j: usize| {
        let m = (j - i) as f64;
        let s = s1[j] - s1[i];
        (s2[j] - s2[i]) - s * s / m
    };
    let mut dp = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for c in 1..=k {
        for j in c..=n {
            for i in (c - 1)..j {
                let v = dp[c - 1][i] + cost(i, j);
                if v < dp[c][j] {
                    dp[c][j] = v;
                    cut[c][j] = i;
                }
            }
        }
    }
    let mut labels = vec![0; n];
    let mut j = n;
    for c in (1..=k).rev() {
        let i = cut[c][j];
        for &o in &order[i..j] {
            labels[o] = c - 1;
        }
        j = i;
    }
    (dp[k][n], labels)
}

fn mixture(seed: u64, means: &[f64], sd: f64, n_per: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    means
        .iter()
        .flat_map(|&m| {
            let d = Normal::new(m, sd).unwrap();
            (0..n_per).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn kmeans_matches_the_exact_dynamic_program() {
    for seed in 0..10 {
        let v = mixture(seed, &[0.0, 2.0, 6.5], 0.6, 60);
        let (opt, labels) = dp_kmeans(&v, 3);
        let fit = kmeans_1d(&v, 3, 10, seed).unwrap();
        assert!(fit.inertia >= opt - 1e-9);
        assert!(
            fit.inertia <= opt * (1.0 + 1e-6),
            "seed {seed}: {} vs {opt}",
            fit.inertia
        );
        // Both label sets are ordered by center.
        let agree = labels
            .iter()
            .zip(&fit.assignments)
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 / v.len() as f64 >= 0.99);
    }
}

#[test]
fn quantizer_centers_recover_the_modes() {
    let v = mixture(3, &[1.0, 5.0, 9.0], 0.4, 100);
    let q = fit_quantizer(&v, &QuantizerConfig::default()).unwrap();
    let centers: Vec<f64> = q.centers.iter().map(|&c| q.transform.inverse(c)).collect();
    for (c, want) in centers.iter().zip([1.0, 5.0, 9.0]) {
        assert!((c - want).abs() < 0.2, "{centers:?}");
    }
    let nearest_mode = |x: f64| {
        (0..3)
            .min_by(|&a, &b| {
                (x - [1.0, 5.0, 9.0][a])
                    .abs()
                    .total_cmp(&(x - [1.0, 5.0, 9.0][b]).abs())
            })
            .unwrap()
    };
    assert!(v.iter().all(|&x| q.classify(x).index() == nearest_mode(x)));
    let sil = |k: usize| {
        q.sweep
            .iter()
            .find(|e| e.k == k)
            .and_then(|e| e.silhouette)
            .unwrap()
    };
    assert!(sil(3) > sil(10));
}

/// Textbook O(n²) silhouette.
fn silhouette_oracle(x: &[f64], a: &[usize], k: usize) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sum[a[j]] += (x[i] - x[j]).abs();
                cnt[a[j]] += 1;
            }
        }
        if cnt[a[i]] == 0 {
            continue;
        }
        let ai = sum[a[i]] / cnt[a[i]] as f64;
        let bi = (0..k)
            .filter(|&c| c != a[i] && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if ai.max(bi) > 0.0 {
            total += (bi - ai) / ai.max(bi);
        }
    }
    total / n as f64
}

#[test]
fn fast_silhouettes_match_the_quadratic_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 2..=5 {
        let n = 100 * k;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let a: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.random_range(0..k) })
            .collect();
        let want = silhouette_oracle(&x, &a, k);
        assert!((silhouette_1d(&x, &a, k) - want).abs() <= 1e-9);
        let points: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        assert!((silhouette(&points, &a).unwrap() - want).abs() <= 1e-9);
    }
}

#[test]
fn self_training_ledger_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut make = |n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            rows.push(vec![
                4.0 * c as f64 + noise.sample(&mut rng),
                noise.sample(&mut rng),
            ]);
            labels.push(c);
        }
        (rows, labels)
    };
    let (rows, labels) = make(60);
    let labeled = ClassificationData::new(Schema::numeric(2), rows, labels, 3);
    let (pool_rows, _) = make(300);
    let pool = Pool {
        ids: (0..300).map(|i| format!("u{i}")).collect(),
        rows: pool_rows,
        priors: vec![None; 300],
    };
    let cfg = RandomForestConfig {
        n_trees: 40,
        ..RandomForestConfig::default()
    };
    let train = |d: &ClassificationData| train_random_forest(d, &cfg);
    let ssl = SslConfig {
        threshold: 0.7,
        ..SslConfig::default()
    };
    let out = self_train(train, &labeled, &pool, &ssl).unwrap();
    assert!(!out.ledger.is_empty());
    assert!(out.ledger.len() <= pool.len());
    assert!(out.ledger.iter().all(|e| e.confidence >= ssl.threshold));
    let cap = (ssl.cap_fraction * pool.len() as f64).ceil() as usize;
    let mut ids: Vec<&str> = out.ledger.iter().map(|e| e.id.as_str()).collect();
    for it in 1..=out.iterations {
        let n = out.ledger.iter().filter(|e| e.iteration == it).count();
        assert!(n <= cap);
    }
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), out.ledger.len(), "a row was accepted twice");
    // Rerunning is deterministic.
    let again = self_train(train, &labeled, &pool, &ssl).unwrap();
    assert_eq!(again.ledger, out.ledger);
    assert_eq!(again.model, out.model);

    let strict = SslConfig {
        threshold: 1.0,
        ..SslConfig::default()
    };
    let none = self_train(train, &labeled, &pool, &strict).unwrap();
    let soft =
        (0..pool.len()).all(|i| none.model.predict_proba(&pool.rows[i]).unwrap().max_prob() < 1.0);
    if soft {
        assert!(none.ledger.is_empty());
    }
    let _ = LossClass::ALL;
}
