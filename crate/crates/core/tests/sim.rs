use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pricerule::fitness::{mae_vs_golden, DemandCurve};
use pricerule::pipeline::{AllocationLine, AllocationPlan, Branch};
use pricerule::sim::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> WorldConfig {
    WorldConfig {
        customers: 5,
        skus: 6,
        periods: 4,
        seed,
        ..WorldConfig::default()
    }
}

fn quiet(family: DemandFamily, customers: usize, skus: usize) -> World {
    generate_world(&WorldConfig {
        customers,
        skus,
        family,
        density: 1.0,
        noise: 0.0,
        ..small(4)
    })
    .unwrap()
}

fn fd_argmax(curve: &DemandCurve, cost: f64, theta: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=n {
        let p = lo + step * i as f64;
        let u = theta * curve.demand(p) + (1.0 - theta) * (p - cost) * curve.demand(p);
        if u > best.0 {
            best = (u, p);
        }
    }
    best.1
}

#[test]
fn same_seed_same_world() {
    let a = generate_world(&small(9)).unwrap();
    let b = generate_world(&small(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a.dataset).unwrap(),
        serde_json::to_string(&b.dataset).unwrap()
    );
    assert_ne!(generate_world(&small(10)).unwrap().dataset, a.dataset);
}

#[test]
fn invalid_world_config() {
    for cfg in [
        WorldConfig { customers: 0, ..small(0) },
        WorldConfig { sigma_g: -1.0, ..small(0) },
        WorldConfig { theta: 1.5, ..small(0) },
        WorldConfig { beta_range: (0.0, 1.0), ..small(0) },
    ] {
        assert!(matches!(generate_world(&cfg), Err(SimError::Config(_))));
    }
}

#[test]
fn noise_free_volumes_equal_model_demand() {
    for family in [DemandFamily::Exponential, DemandFamily::RegionalLinear] {
        let w = quiet(family, 4, 5);
        assert!(!w.dataset.transactions.is_empty());
        for t in &w.dataset.transactions {
            let q = w.truth.curve(&t.customer_id, &t.material_code).unwrap().demand(t.unit_price);
            assert_eq!(t.volume, q.max(0.0));
        }
    }
}

#[test]
fn experiment_scale_world() {
    let w = generate_world(&WorldConfig {
        customers: 2362,
        skus: 104,
        periods: 1,
        density: 0.05,
        ..WorldConfig::default()
    })
    .unwrap();
    assert_eq!(w.dataset.customers.len(), 2362);
    assert_eq!(w.dataset.skus.len(), 104);
    assert!(w.dataset.validate().is_ok());
}

#[test]
fn analytic_price_example() {
    assert_eq!(analytic_optimal_price(2.0, 10.0, 1.0, 4.0, 0.0).unwrap(), 12.0);
    assert_eq!(published_closed_form_price(2.0, 10.0, 1.0, 4.0, 0.0).unwrap(), 12.0);
    assert!(matches!(analytic_optimal_price(2.0, 10.0, 1.0, 4.0, 1.0), Err(SimError::Oracle(_))));
    assert!(matches!(analytic_optimal_price(2.0, 10.0, 0.0, 4.0, 0.5), Err(SimError::Oracle(_))));
}

#[test]
fn zero_theta_reduces_to_markup_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (a, g, b, c) = (rng.random_range(0.5..3.0), rng.random_range(5.0..15.0), rng.random_range(0.2..2.0), rng.random_range(0.0..5.0));
        let p = analytic_optimal_price(a, g, b, c, 0.0).unwrap();
        assert!((p - (a * g / (2.0 * b) + c / 2.0)).abs() < 1e-12);
    }
}

#[test]
fn analytic_price_matches_finite_difference_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let step = 1e-3;
    for _ in 0..100 {
        let (a, g, b) = (rng.random_range(0.5..3.0), rng.random_range(5.0..15.0), rng.random_range(0.3..2.0));
        let c = rng.random_range(0.0..0.5) * a * g / b;
        let theta = rng.random_range(0.0..0.9);
        let curve = DemandCurve::Linear { scale: 1.0, intercept: a * g, slope: b };
        let p = analytic_optimal_price(a, g, b, c, theta).unwrap();
        let fd = fd_argmax(&curve, c, theta, -5.0, a * g / b, step);
        assert!((p - fd).abs() <= step, "analytic {p} vs grid {fd}");
    }
}

#[test]
fn published_form_departs_from_argmax_when_theta_positive() {
    let (a, g, b, c, theta) = (2.0, 10.0, 0.5, 4.0, 0.5);
    let curve = DemandCurve::Linear { scale: 1.0, intercept: a * g, slope: b };
    let fd = fd_argmax(&curve, c, theta, 0.0, a * g / b, 1e-3);
    let published = published_closed_form_price(a, g, b, c, theta).unwrap();
    let foc = analytic_optimal_price(a, g, b, c, theta).unwrap();
    assert!((foc - fd).abs() <= 1e-3);
    assert!((published - fd).abs() > 1.0);
    assert!(published > foc);
}

#[test]
fn deploy_empty_and_at_cost() {
    let w = quiet(DemandFamily::Exponential, 3, 4);
    assert_eq!(deploy_plan(&AllocationPlan::default(), &w.truth, 0), Realized::default());
    assert_eq!(deploy_prices(&BTreeMap::new(), &w.truth, 0), Realized::default());
    let at_cost: BTreeMap<(String, String), f64> = w
        .truth
        .model
        .curves()
        .into_iter()
        .map(|(k, _)| {
            let c = w.truth.cost(&k.1);
            (k, c)
        })
        .collect();
    let r = deploy_prices(&at_cost, &w.truth, 0);
    assert!(r.volume > 0.0);
    assert!(r.profit.abs() < 1e-9 * r.revenue);
    assert_eq!(r.pairs, at_cost.len());
}

#[test]
fn optimum_weakly_dominates_perturbed_prices() {
    let w = quiet(DemandFamily::Exponential, 4, 6);
    let priced = |f: f64| -> BTreeMap<(String, String), f64> {
        w.truth
            .model
            .curves()
            .into_iter()
            .map(|(k, c)| {
                let p = c.profit_optimal_price(w.truth.cost(&k.1));
                (k, p * f)
            })
            .collect()
    };
    let best = deploy_prices(&priced(1.0), &w.truth, 0).profit;
    for f in [0.9, 0.95, 1.05, 1.1] {
        assert!(best >= deploy_prices(&priced(f), &w.truth, 0).profit, "factor {f}");
    }
}

#[test]
fn deploy_is_seed_deterministic() {
    let w = generate_world(&small(2)).unwrap();
    let prices: BTreeMap<(String, String), f64> = w.truth.model.curves().into_iter().map(|(k, _)| (k, 10.0)).collect();
    let a = deploy_prices(&prices, &w.truth, 5);
    assert_eq!(a, deploy_prices(&prices, &w.truth, 5));
    assert_ne!(a, deploy_prices(&prices, &w.truth, 6));
}

#[test]
fn plan_profit_rises_with_margin_at_fixed_volume() {
    let w = quiet(DemandFamily::Exponential, 2, 3);
    let ((c, m), curve) = w.truth.model.curves().remove(0);
    let DemandCurve::Exponential { p0, .. } = curve else { unreachable!() };
    let line = |p: f64| AllocationLine {
        customer: c.clone(),
        material: m.clone(),
        k1: String::new(),
        k2: String::new(),
        branch: Branch::CandidateAccepted,
        units: 1e-3,
        price: p,
        cost: 0.0,
        amount: 1e-3 * p,
        profit: 0.0,
    };
    let plan = |p: f64| AllocationPlan {
        lines: vec![line(p)],
        ..AllocationPlan::default()
    };
    let lo = deploy_plan(&plan(p0), &w.truth, 0);
    let hi = deploy_plan(&plan(p0 * 1.1), &w.truth, 0);
    assert_eq!(lo.volume, hi.volume);
    assert!(hi.profit > lo.profit);
}

#[test]
fn golden_on_single_regional_pair_is_analytic() {
    let w = quiet(DemandFamily::RegionalLinear, 1, 1);
    let g = golden_response(&w).unwrap();
    assert_eq!(g.entries.len(), 1);
    let ((_, m), curve) = w.truth.model.curves().remove(0);
    let DemandCurve::Linear { intercept, slope, .. } = curve else { unreachable!() };
    let e = g.entries.values().next().unwrap();
    let want = analytic_optimal_price(intercept, 1.0, slope, w.truth.cost(&m), w.truth.theta).unwrap();
    assert_eq!(e.price, want);
    assert!(e.stock);
    assert!((e.units - curve.demand(want)).abs() < 1e-12);
}

#[test]
fn grid_and_analytic_agree_on_regional_family() {
    let w = quiet(DemandFamily::RegionalLinear, 4, 5);
    let g = golden_response(&w).unwrap();
    for (k, curve) in w.truth.model.curves() {
        let p = g.entries[&k].price;
        let (lo, hi) = ((0.5 * p).ln(), (2.0 * p).ln());
        let step = (hi - lo) / 199.0;
        let grid: Vec<f64> = (0..200).map(|i| (lo + step * i as f64).exp()).collect();
        let cost = w.truth.cost(&k.1);
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| utility_b2(&curve, *a, cost, 0.0).total_cmp(&utility_b2(&curve, *b, cost, 0.0)))
            .unwrap();
        assert!((best.ln() - p.ln()).abs() <= step, "{k:?}: grid {best} analytic {p}");
    }
}

#[test]
fn golden_exponential_grid_and_self_mae() {
    let w = quiet(DemandFamily::Exponential, 3, 4);
    let g = golden_response(&w).unwrap();
    let actions: Vec<f64> = g.actions().into_values().collect();
    assert_eq!(mae_vs_golden(&actions, &actions).unwrap(), 0.0);
    for (k, curve) in w.truth.model.curves() {
        let DemandCurve::Exponential { p0, beta, .. } = curve else { unreachable!() };
        let e = g.entries[&k];
        assert!(e.price >= 0.5 * p0 * (1.0 - 1e-12) && e.price <= 2.0 * p0 * (1.0 + 1e-12));
        let opt = (w.truth.cost(&k.1) + 1.0 / beta).clamp(0.5 * p0, 2.0 * p0);
        let step = 4f64.ln() / 199.0;
        assert!((e.price.ln() - opt.ln()).abs() <= step + 1e-12, "{k:?}");
    }
}

fn planted(n: usize, d: usize, rows: usize, seed: u64) -> (LowRankHistory, DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let u = raw.qr().q();
    let v = DMatrix::from_diagonal(&DVector::from_iterator(d, (0..d).map(|i| 2.0 + i as f64)));
    let m = &u * v * u.transpose();
    let p_bar: Vec<f64> = (0..n).map(|_| rng.random_range(8.0..12.0)).collect();
    let q_bar: Vec<f64> = (0..n).map(|_| rng.random_range(15.0..25.0)).collect();
    let mut h = LowRankHistory::default();
    for r in 0..rows {
        let dp = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let dq = -(&m * &dp);
        h.prices.push((0..n).map(|i| p_bar[i] + dp[i]).collect());
        h.demand.push((0..n).map(|i| q_bar[i] + dq[i]).collect());
        h.observed.push(vec![true; n]);
        h.group.push(r % 2);
    }
    (h, m, p_bar, q_bar)
}

#[test]
fn lowrank_plant_and_recover() {
    let (h, m, _, _) = planted(6, 2, 40, 1);
    let model = fit_lowrank(&h, 2).unwrap();
    assert!((model.response() + &m).norm() < 1e-8 * m.norm());
    for (_, (pm, qm, obs)) in h.means() {
        let p = optimize_revenue(&model, &pm, &qm, &obs, 5000, (0.01, 100.0));
        let pb = DVector::from_vec(pm.clone());
        let qb = DVector::from_vec(qm.clone());
        let (u, sym) = (&model.u, &m + m.transpose());
        let a = u.transpose() * &sym * u;
        let x = a.lu().solve(&(u.transpose() * (&qb + &m * &pb - &sym * &pb))).unwrap();
        let truth = &pb + u * x;
        for i in 0..p.len() {
            assert!((p[i] - truth[i]).abs() <= 0.05 * truth[i].abs(), "item {i}: {} vs {}", p[i], truth[i]);
        }
    }
}

#[test]
fn full_rank_fit_is_allowed() {
    let (h, m, _, _) = planted(4, 4, 30, 2);
    let model = fit_lowrank(&h, 4).unwrap();
    assert_eq!(model.rank, 4);
    assert!((model.response() + &m).norm() < 1e-8 * m.norm());
    assert!(fit_lowrank(&h, 5).is_err());
    assert!(fit_lowrank(&h, 0).is_err());
}

#[test]
fn rank_deficient_history_is_reported() {
    let (mut h, _, _, _) = planted(5, 2, 10, 3);
    for row in h.prices.iter_mut() {
        *row = vec![10.0; 5];
    }
    match fit_lowrank(&h, 2) {
        Err(SimError::History(msg)) => assert!(msg.contains("0 independent"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn lowrank_baseline_prices_every_traded_pair() {
    let w = generate_world(&small(6)).unwrap();
    let out = baseline_lowrank(&w.dataset, &LowRankConfig::default()).unwrap();
    let traded: std::collections::BTreeSet<(String, String)> = w
        .dataset
        .transactions
        .iter()
        .map(|t| (t.customer_id.clone(), t.material_code.clone()))
        .collect();
    assert_eq!(out.prices.keys().cloned().collect::<std::collections::BTreeSet<_>>(), traded);
    assert!(out.prices.values().all(|p| p.is_finite() && *p > 0.0));
}

#[test]
fn perturbation_schedule() {
    assert_eq!(perturbation(0.8, 16), 0.4);
    assert_eq!(perturbation(0.8, 1), 0.8);
    assert_eq!(perturbation(0.8, 0), 0.8);
}

#[test]
fn clustering_groups() {
    let same = vec![vec![1.0, 2.0]; 5];
    assert_eq!(cluster_parameters(&same, 0.1), vec![0; 5]);
    let two = vec![vec![0.0], vec![10.0], vec![0.2], vec![10.1], vec![-0.1]];
    assert_eq!(cluster_parameters(&two, 0.5), vec![0, 1, 0, 1, 0]);
}

#[test]
fn clustering_baseline_runs() {
    let w = generate_world(&small(8)).unwrap();
    let out = baseline_clustering(&w.dataset, &ClusteringConfig::default()).unwrap();
    assert_eq!(out.clusters.len(), w.dataset.skus.len());
    assert!(out.prices.values().all(|p| *p >= 0.01));
    let bad = ClusteringConfig {
        delta0: 0.0,
        ..ClusteringConfig::default()
    };
    assert!(baseline_clustering(&w.dataset, &bad).is_err());
}

#[test]
fn dataset_carries_no_truth() {
    let w = generate_world(&small(1)).unwrap();
    let json = serde_json::to_value(&w.dataset).unwrap();
    let text = json.to_string();
    for key in ["\"q0\"", "\"p0\"", "\"beta\"", "\"alpha\"", "\"model\"", "\"truth\"", "\"noise\""] {
        assert!(!text.contains(key), "{key} leaked");
    }
    let dir = tempfile::tempdir().unwrap();
    pricerule::ingest::save_csv_bundle(&w.dataset, dir.path()).unwrap();
    for e in std::fs::read_dir(dir.path()).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        assert!(!name.contains("truth"), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn worlds_validate(seed in 0u64..10_000, family in prop_oneof![Just(DemandFamily::Exponential), Just(DemandFamily::RegionalLinear)]) {
        let w = generate_world(&WorldConfig { family, ..small(seed) }).unwrap();
        prop_assert!(w.dataset.validate().is_ok());
        prop_assert!(w.dataset.transactions.iter().all(|t| t.volume >= 0.0 && t.unit_price >= 0.01));
    }

    #[test]
    fn linear_optimum_beats_neighbours(a in 0.5f64..3.0, g in 5.0f64..15.0, b in 0.3f64..2.0, cf in 0.0f64..0.5, theta in 0.0f64..0.9) {
        let c = cf * a * g / b;
        let curve = DemandCurve::Linear { scale: 1.0, intercept: a * g, slope: b };
        let p = analytic_optimal_price(a, g, b, c, theta).unwrap();
        let u = utility_b2(&curve, p, c, theta);
        for dp in [-0.1, -0.01, 0.01, 0.1] {
            prop_assert!(u >= utility_b2(&curve, p + dp, c, theta) - 1e-9);
        }
    }
}
