use std::f64::consts::PI;

use pricerule::fusion::*;
use pricerule::ingest::{GeoPoint, MarketDataset, StoreProfile};
use pricerule::sim::{generate_world, WorldConfig};
use proptest::prelude::*;

fn km_east(km: f64) -> GeoPoint {
    GeoPoint::new(0.0, km / (EARTH_RADIUS_KM * PI / 180.0))
}

/// Two customers with scale 10 at 1 km and 2 km east of one store at the origin.
fn two_customer_world() -> MarketDataset {
    let mut ds = generate_world(&WorldConfig {
        customers: 2,
        skus: 2,
        periods: 2,
        seed: 1,
        ..WorldConfig::default()
    })
    .unwrap()
    .dataset;
    for (c, km) in ds.customers.iter_mut().zip([1.0, 2.0]) {
        c.location = km_east(km);
        c.scale = 10.0;
    }
    ds.stores = vec![StoreProfile {
        id: "S1".into(),
        location: GeoPoint::new(0.0, 0.0),
        demographics: vec![1.0, 5.0],
    }];
    ds
}

fn soft(id: &str, text: &str, v: f64) -> FusionRule {
    FusionRule {
        id: id.into(),
        text: text.into(),
        embedding: Vec::new(),
        strictness: Strictness::Soft,
        transform: Transform::constant(v),
    }
}

fn strict(id: &str, text: &str, v: f64) -> FusionRule {
    FusionRule {
        strictness: Strictness::Strict,
        ..soft(id, text, v)
    }
}

fn sample(id: usize, label: f64) -> LabeledPrediction {
    LabeledPrediction {
        id: id.to_string(),
        features: vec![id as f64],
        prediction: label,
        label,
    }
}

#[test]
fn haversine_examples() {
    let o = GeoPoint::new(0.0, 0.0);
    assert_eq!(haversine(o, o, EARTH_RADIUS_KM), 0.0);
    let q = haversine(o, GeoPoint::new(0.0, 90.0), EARTH_RADIUS_KM);
    assert!((q - 10007.543).abs() < 1e-3, "{q}");
    assert!((q - PI * EARTH_RADIUS_KM / 2.0).abs() < 1e-9);
    let anti = haversine(GeoPoint::new(10.0, 20.0), GeoPoint::new(-10.0, -160.0), EARTH_RADIUS_KM);
    assert!((anti - PI * EARTH_RADIUS_KM).abs() < 1e-6 * PI * EARTH_RADIUS_KM, "{}", anti - PI * EARTH_RADIUS_KM);
}

#[test]
fn distance_weights_split_point_eight_point_two() {
    let ds = two_customer_world();
    let agg = aggregate_demographics(&ds, &AffinityPrior::default(), 1.0, 0.9);
    let ids: Vec<String> = ds.customers.iter().map(|c| c.id.clone()).collect();
    let w0 = agg.weights[&("S1".to_string(), ids[0].clone())];
    let w1 = agg.weights[&("S1".to_string(), ids[1].clone())];
    assert!((w0 - 0.8).abs() < 1e-9 && (w1 - 0.2).abs() < 1e-9, "{w0} {w1}");
    let g0 = &agg.vectors[&ids[0]];
    assert!((g0[0] - 0.8).abs() < 1e-9 && (g0[1] - 4.0).abs() < 1e-9);
    assert!(agg.exclusive.is_empty());
}

#[test]
fn single_covering_customer_gets_the_store() {
    let ds = two_customer_world();
    let agg = aggregate_demographics(&ds, &AffinityPrior::default(), 0.15, 0.9);
    let id = &ds.customers[0].id;
    assert_eq!(agg.weights.len(), 1);
    assert_eq!(agg.weights[&("S1".to_string(), id.clone())], 1.0);
    assert_eq!(agg.vectors[id], vec![1.0, 5.0]);
    assert_eq!(agg.vectors[&ds.customers[1].id], vec![0.0, 0.0]);
}

#[test]
fn strong_prior_binds_store_exclusively() {
    let ds = two_customer_world();
    let far = ds.customers[1].id.clone();
    let mut prior = AffinityPrior::default();
    prior.insert("S1", &far, 0.99);
    prior.insert("S1", &ds.customers[0].id, 0.5);
    let agg = aggregate_demographics(&ds, &prior, 1.0, 0.9);
    assert_eq!(agg.exclusive["S1"], far);
    assert_eq!(agg.weights.len(), 1);
    assert_eq!(agg.vectors[&far], vec![1.0, 5.0]);
    let text = format!("store,customer,score\nS1,{far},0.99\n");
    assert_eq!(AffinityPrior::from_csv(&text).unwrap().get("S1", &far), 0.99);
}

#[test]
fn calibrated_alpha_covers_the_median_customer() {
    let ds = generate_world(&WorldConfig {
        customers: 30,
        skus: 3,
        periods: 2,
        seed: 4,
        ..WorldConfig::default()
    })
    .unwrap()
    .dataset;
    let alpha = calibrate_alpha(&ds);
    let agg = aggregate_demographics(&ds, &AffinityPrior::default(), alpha, 2.0);
    let covered = ds
        .customers
        .iter()
        .filter(|c| agg.weights.keys().any(|(_, k)| *k == c.id))
        .count();
    assert!(covered * 2 >= ds.customers.len(), "{covered} of {}", ds.customers.len());
}

#[test]
fn temporal_stats_examples() {
    let flat = temporal_stats(&[3.0; 12], 4, 3);
    assert!(flat.rolling_var.iter().all(|v| *v == 0.0));
    assert!(flat.top_frequencies.iter().all(|f| f.1 < 1e-12));
    let tone: Vec<f64> = (0..16).map(|t| (2.0 * PI * t as f64 / 4.0).sin()).collect();
    let s = temporal_stats(&tone, 4, 2);
    assert_eq!(s.top_frequencies[0].0, 4);
    let short = temporal_stats(&[1.0, 2.0, 3.0], 10, 1);
    assert_eq!(short.rolling_mean, vec![2.0]);
    assert!((short.rolling_var[0] - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(short.to_vector().len(), 4);
}

#[test]
fn zscore_examples() {
    let (out, z) = zscore_fit_apply(&[vec![1.0, 7.0], vec![3.0, 7.0]], 10);
    assert_eq!(out, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    assert_eq!(z.guarded, vec![false, true]);
    assert_eq!(z.convention, "population");
    let std: Vec<Vec<f64>> = [-1.0, 1.0, -1.0, 1.0].iter().map(|v| vec![*v]).collect();
    let (again, _) = zscore_fit_apply(&std, 10);
    for (a, b) in again.iter().zip(&std) {
        assert!((a[0] - b[0]).abs() < 1e-12);
    }
}

#[test]
fn zscore_refit_threshold() {
    let mut z = ZScore::fit(&[vec![0.0], vec![2.0]], 3);
    assert!(!z.observe(&[vec![10.0]]));
    assert!(!z.observe(&[vec![10.0], vec![10.0]]));
    assert_eq!(z.mean, vec![1.0]);
    assert!(z.observe(&[vec![10.0]]));
    assert_eq!(z.refits, 1);
    assert!((z.mean[0] - 42.0 / 6.0).abs() < 1e-12);
    assert_eq!(z.pending, 0);
}

#[test]
fn dual_tower_examples() {
    assert_eq!(dual_tower_fuse(&[2.0], &[4.0], 0.25).unwrap(), vec![0.5, 3.0]);
    assert!(dual_tower_fuse(&[2.0], &[4.0], 0.5).is_err());
    assert!(dual_tower_fuse(&[2.0], &[4.0], 0.0).is_err());
    let tiny = dual_tower_fuse(&[1e6], &[1.0], 1e-12).unwrap();
    assert!(tiny[0] < 1e-5);
    let t = DualTower::new([(3, 4), (2, 5)], 0.3, 9).unwrap();
    assert_eq!(t, DualTower::new([(3, 4), (2, 5)], 0.3, 9).unwrap());
    let e = t.encode(&[1.0, 2.0, 3.0], &[0.5, -0.5]);
    assert_eq!(e.len(), 9);
    assert!(e.iter().all(|v| *v >= 0.0));
}

#[test]
fn strict_rule_ignores_initial_prediction() {
    let mut base = RuleBase::default();
    base.push(strict("cap", "price cap for beverages", 7.0));
    base.push(soft("promo", "weekend promotion snacks", 3.0));
    let q = hash_embed("beverages price cap", EMBED_DIM);
    let cfg = FusionConfig::default();
    let hist = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let (a, audit) = fuse_prediction(&[], &q, 100.0, &base, &hist, &cfg, &mut ConstantAlpha::default()).unwrap();
    let (b, _) = fuse_prediction(&[], &q, -5.0, &base, &hist, &cfg, &mut ConstantAlpha::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!((audit.rule_id.as_str(), audit.h), ("cap", 1));
    assert_eq!(audit.delta_h, 3.0);
    assert!((a - (0.05 * 1.0 + 0.95 * 7.0)).abs() < 1e-12);
}

#[test]
fn constant_history_leaves_fused_value_scaled() {
    let mut base = RuleBase::default();
    base.push(soft("promo", "weekend promotion", 3.0));
    let q = hash_embed("weekend promotion", EMBED_DIM);
    let cfg = FusionConfig::default();
    let (a, audit) = fuse_prediction(&[], &q, 5.0, &base, &[2.0; 6], &cfg, &mut ConstantAlpha(0.5)).unwrap();
    assert_eq!(audit.delta_h, 0.0);
    assert_eq!(audit.a_fused, 4.0);
    assert!((a - 0.95 * 4.0).abs() < 1e-12);
    let (_, audit) = fuse_prediction(&[], &q, 5.0, &base, &[2.0; 6], &cfg, &mut ConstantAlpha(1.0)).unwrap();
    assert_eq!(audit.a_fused, 5.0);
    assert!(audit.csv_row().starts_with("promo,1,0,0,5,5,"));
}

#[test]
fn fusion_errors() {
    let q = hash_embed("x", EMBED_DIM);
    let cfg = FusionConfig::default();
    let empty = RuleBase::default();
    assert!(matches!(
        fuse_prediction(&[], &q, 1.0, &empty, &[0.0; 6], &cfg, &mut ConstantAlpha::default()),
        Err(FusionError::EmptyRuleBase)
    ));
    let mut base = RuleBase::default();
    base.push(soft("a", "x", 1.0));
    assert!(matches!(
        fuse_prediction(&[], &q, 1.0, &base, &[0.0; 5], &cfg, &mut ConstantAlpha::default()),
        Err(FusionError::History { have: 5, need: 6 })
    ));
    let bad = FusionConfig { beta: 0.2, ..cfg };
    assert!(matches!(
        fuse_prediction(&[], &q, 1.0, &base, &[0.0; 6], &bad, &mut ConstantAlpha::default()),
        Err(FusionError::Beta(_))
    ));
}

#[test]
fn rule_base_jsonl_roundtrip() {
    let mut base = RuleBase::default();
    base.push(strict("a", "cap drinks", 2.0));
    base.push(soft("b", "discount snacks", 1.0));
    let mut buf = Vec::new();
    base.write_jsonl(&mut buf).unwrap();
    assert_eq!(RuleBase::read_jsonl(buf.as_slice()).unwrap(), base);
    base.rules[1].embedding.pop();
    assert!(matches!(base.validate(), Err(FusionError::EmbeddingDim { .. })));
}

#[test]
fn posterior_clean_examples() {
    let samples: Vec<LabeledPrediction> = (0..10).map(|i| sample(i, i as f64)).collect();
    let mut never = ScriptedCleaner::default();
    let out = posterior_clean(&samples, |_| 0.0, f64::NEG_INFINITY, &mut never);
    assert_eq!(out.cleaned, samples);
    assert_eq!(never.calls, 0);

    let mut unsure = ScriptedCleaner {
        judgments: vec![Judgment::Uncertain; 10],
        calls: 0,
    };
    let out = posterior_clean(&samples, |_| 0.0, 1.0, &mut unsure);
    assert_eq!(out.manual_review.len(), 10);
    assert_eq!(out.cleaned, samples);

    let mut mixed = ScriptedCleaner {
        judgments: vec![
            Judgment::Invalid {
                corrected: Some(42.0),
                rule: "labels above 40 only".into(),
            },
            Judgment::Uncertain,
        ],
        calls: 0,
    };
    let conf = |s: &LabeledPrediction| if s.features[0] < 2.0 { 0.1 } else { 0.9 };
    let out = posterior_clean(&samples, conf, 0.5, &mut mixed);
    assert_eq!((out.corrected, out.removed, out.manual_review.len()), (1, 0, 1));
    assert_eq!(out.new_rules, vec!["labels above 40 only"]);
    assert_eq!(out.cleaned[0].label, 42.0);
    assert_eq!(out.cleaned.len(), 10);
    assert_eq!(mixed.calls, 2);
}

fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| GeoPoint::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn haversine_is_a_metric(a in point(), b in point(), c in point()) {
        let r = EARTH_RADIUS_KM;
        let ab = haversine(a, b, r);
        prop_assert!(ab >= 0.0 && ab <= PI * r + 1e-9);
        prop_assert!((ab - haversine(b, a, r)).abs() <= 1e-9 * ab.max(1.0));
        let ac = haversine(a, c, r);
        let cb = haversine(c, b, r);
        prop_assert!(ab <= (ac + cb) * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn shared_store_weights_sum_to_one(kms in prop::collection::vec((0.1f64..50.0, 1.0f64..100.0), 1..6), alpha in 0.5f64..5.0) {
        let mut ds = two_customer_world();
        let proto = ds.customers[0].clone();
        ds.customers = kms.iter().enumerate().map(|(i, (km, s))| {
            let mut c = proto.clone();
            c.id = format!("K{i}");
            c.location = km_east(*km);
            c.scale = *s;
            c
        }).collect();
        let agg = aggregate_demographics(&ds, &AffinityPrior::default(), alpha, 0.9);
        let total: f64 = agg.weights.values().sum();
        let covering = kms.iter().filter(|(km, s)| *km <= alpha * s).count();
        if covering > 0 {
            prop_assert!((total - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(agg.weights.is_empty());
        }
    }

    #[test]
    fn soft_fusion_is_convex(a_init in -100.0f64..100.0, g in -100.0f64..100.0, alpha in 0.0f64..=1.0) {
        let mut base = RuleBase::default();
        base.push(soft("s", "soft", g));
        let cfg = FusionConfig { beta: 0.0, tau: 0, ..FusionConfig::default() };
        let (out, _) = fuse_prediction(&[], &hash_embed("soft", EMBED_DIM), a_init, &base, &[], &cfg, &mut ConstantAlpha(alpha)).unwrap();
        prop_assert!(out >= a_init.min(g) - 1e-9 && out <= a_init.max(g) + 1e-9);
    }

    #[test]
    fn zscore_does_not_refit_below_threshold(n_update in 1usize..20, batches in prop::collection::vec(1usize..4, 0..10)) {
        let mut z = ZScore::fit(&[vec![0.0], vec![1.0]], n_update);
        let mut pending = 0;
        for b in batches {
            pending += b;
            let fired = z.observe(&vec![vec![5.0]; b]);
            prop_assert_eq!(fired, pending > n_update);
            if fired {
                pending = 0;
            }
        }
    }

    #[test]
    fn dual_tower_length_is_additive(h in prop::collection::vec(-5.0f64..5.0, 0..8), l in prop::collection::vec(-5.0f64..5.0, 0..8), beta in 0.01f64..0.49) {
        prop_assert_eq!(dual_tower_fuse(&h, &l, beta).unwrap().len(), h.len() + l.len());
    }
}
