use std::collections::{BTreeMap, BTreeSet};

use pricerule::fitness::{DemandModel, ExponentialElasticityModel, ExponentialParams};
use pricerule::ingest::*;
use pricerule::pipeline::*;
use pricerule::sim::{generate_world, WorldConfig};
use proptest::prelude::*;

fn sku(code: &str, k1: &str, k2: &str, cost: f64, price: f64) -> SkuRecord {
    SkuRecord {
        code: code.into(),
        primary_category: k1.into(),
        secondary_category: k2.into(),
        unit_cost: cost,
        weighted_price: price,
        embedding: Vec::new(),
        locked_amount: None,
    }
}

fn customer(id: &str, aov: f64, forecast: f64, features: Vec<f64>) -> CustomerRecord {
    CustomerRecord {
        id: id.into(),
        name: id.into(),
        location: GeoPoint::new(30.0, 120.0),
        scale: 1.0,
        avg_order_value: aov,
        forecast_total: forecast,
        features,
        tags: Vec::new(),
    }
}

fn tx(c: &str, m: &str, volume: f64, price: f64, period: i64) -> Transaction {
    Transaction {
        customer_id: c.into(),
        material_code: m.into(),
        volume,
        unit_price: price,
        period,
    }
}

fn dataset(customers: Vec<CustomerRecord>, skus: Vec<SkuRecord>, transactions: Vec<Transaction>) -> MarketDataset {
    MarketDataset {
        meta: DatasetMeta {
            customer_feature_names: vec!["f1".into()],
            ..DatasetMeta::default()
        },
        customers,
        skus,
        transactions,
        stores: Vec::new(),
        expenses: ExpenseLedger::default(),
        cost_rows: Vec::new(),
    }
}

fn quote(code: &str, k2: &str, price: f64, cost: f64, forecast: f64) -> MaterialQuote {
    MaterialQuote {
        code: code.into(),
        k2: k2.into(),
        price,
        cost,
        forecast,
    }
}

fn bounds(lower: f64, upper: f64) -> CategoryBounds {
    CategoryBounds {
        lower,
        upper,
        locked: 0.0,
        infeasible: false,
    }
}

fn market(seed: u64) -> MarketDataset {
    generate_world(&WorldConfig {
        customers: 3,
        skus: 12,
        k1_count: 3,
        density: 1.0,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
    .dataset
}

fn estimated(ds: &MarketDataset) -> ElasticityPredictor {
    ElasticityPredictor {
        model: DemandModel::Exponential(ExponentialElasticityModel::estimate(ds, 0.2)),
    }
}

fn toy_forecast_world() -> (MarketDataset, ElasticityPredictor) {
    let ds = dataset(
        vec![customer("A", 100.0, 10.0, vec![1.0]), customer("B", 50.0, 10.0, vec![3.0])],
        vec![
            sku("m1", "K1", "a", 2.0, 10.0),
            sku("m2", "K1", "a", 2.0, 20.0),
            sku("m3", "K2", "b", 2.0, 5.0),
        ],
        Vec::new(),
    );
    let mut pairs = BTreeMap::new();
    for c in ["A", "B"] {
        for (m, p0) in [("m1", 10.0), ("m2", 20.0), ("m3", 5.0)] {
            pairs.insert((c.to_string(), m.to_string()), ExponentialParams { q0: 50.0, p0, beta: 0.2 });
        }
    }
    let model = DemandModel::Exponential(ExponentialElasticityModel { pairs });
    (ds, ElasticityPredictor { model })
}

#[test]
fn forecast_is_the_cartesian_table() {
    let (ds, pred) = toy_forecast_world();
    let cands: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let t = augment_and_forecast(&ds, &cands, &DiscountGrid::default(), &pred).unwrap();
    assert_eq!(t.rows.len(), 18);
    let cells: BTreeSet<(String, String, u64)> = t
        .rows
        .iter()
        .map(|r| (r.customer.clone(), r.material.clone(), r.discount.to_bits()))
        .collect();
    assert_eq!(cells.len(), 18);
    assert!(t.rows.iter().all(|r| r.units >= 0.0));
    assert!((t.baseline("A", "m1") - 50.0).abs() < 1e-12);
    for c in ["A", "B"] {
        for m in ["m1", "m2", "m3"] {
            let at = |d: f64| t.rows.iter().find(|r| r.customer == c && r.material == m && r.discount == d).unwrap().units;
            assert!(at(0.9) >= at(0.95) && at(0.95) >= at(1.0));
        }
    }
    assert_eq!(t.baselines().len(), 6);
}

#[test]
fn single_level_grid_is_baseline_only() {
    let (ds, pred) = toy_forecast_world();
    let cands: BTreeSet<String> = ["A".to_string()].into();
    let grid = DiscountGrid::new(vec![1.0]).unwrap();
    let t = augment_and_forecast(&ds, &cands, &grid, &pred).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.rows.iter().all(|r| r.discount == 1.0));
}

#[test]
fn grid_validation() {
    assert!(DiscountGrid::new(vec![]).is_err());
    assert!(DiscountGrid::new(vec![0.0]).is_err());
    assert!(DiscountGrid::new(vec![1.6]).is_err());
    let g = DiscountGrid::new(vec![1.0, 0.9, 1.0]).unwrap();
    assert_eq!(g.levels(), &[0.9, 1.0]);
}

#[test]
fn predictor_sees_z_scored_features() {
    let (ds, _) = toy_forecast_world();
    let cands: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let seen = std::sync::Mutex::new(Vec::new());
    let probe = |c: &CustomerRecord, _: &SkuRecord, x: &[f64], _: f64| -> Result<f64, String> {
        seen.lock().unwrap().push((c.id.clone(), x[0]));
        Ok(1.0)
    };
    augment_and_forecast(&ds, &cands, &DiscountGrid::new(vec![1.0]).unwrap(), &probe).unwrap();
    for (id, z) in seen.into_inner().unwrap() {
        let want = if id == "A" { -1.0 } else { 1.0 };
        assert!((z - want).abs() < 1e-12, "{id} {z}");
    }
}

#[test]
fn predictor_errors_carry_cell_coordinates() {
    let (ds, _) = toy_forecast_world();
    let cands: BTreeSet<String> = ["B".to_string()].into();
    let failing = |_: &CustomerRecord, s: &SkuRecord, _: &[f64], _: f64| -> Result<f64, String> {
        if s.code == "m2" {
            Err("boom".into())
        } else {
            Ok(1.0)
        }
    };
    match augment_and_forecast(&ds, &cands, &DiscountGrid::default(), &failing) {
        Err(PipelineError::Predictor { customer, material, discount, .. }) => {
            assert_eq!((customer.as_str(), material.as_str(), discount), ("B", "m2", 0.9));
        }
        other => panic!("{other:?}"),
    }
    let unknown: BTreeSet<String> = ["Z".to_string()].into();
    assert!(matches!(
        augment_and_forecast(&ds, &unknown, &DiscountGrid::default(), &failing),
        Err(PipelineError::UnknownCustomer(_))
    ));
}

#[test]
fn fee_shares_follow_revenue() {
    let mut ds = dataset(
        vec![customer("A", 100.0, 1.0, vec![0.0]), customer("Z", 100.0, 1.0, vec![0.0])],
        vec![sku("m1", "K1", "a", 1.0, 10.0), sku("m2", "K2", "b", 1.0, 10.0)],
        vec![tx("A", "m1", 30.0, 10.0, 0), tx("A", "m2", 10.0, 10.0, 1)],
    );
    ds.meta.period_end = 1;
    ds.expenses.entries.insert("rent".into(), 40.0);
    ds.expenses.entries.insert("staff".into(), 20.0);
    let t = fee_ratios(&ds);
    let k1 = &t.entries[&("A".to_string(), "K1".to_string())];
    assert!((k1.share - 0.75).abs() < 1e-12);
    assert!((t.share("A", "K2") - 0.25).abs() < 1e-12);
    assert!((k1.revenue - 300.0).abs() < 1e-12);
    assert!((k1.by_type["rent"] - 0.75 * 40.0 / 300.0).abs() < 1e-12);
    let want = 0.75 * (0.75 * 40.0 / 300.0) + 0.75 * (0.75 * 20.0 / 300.0);
    assert!((t.ratio("A", "K1") - want).abs() < 1e-12);
    assert!((t.monthly_revenue["A"] - 200.0).abs() < 1e-12);
    assert_eq!(t.excluded, vec!["Z".to_string()]);
    assert_eq!(t.ratio("Z", "K1"), 0.0);
}

#[test]
fn single_category_and_no_expense_cases() {
    let ds = dataset(
        vec![customer("A", 100.0, 1.0, vec![0.0])],
        vec![sku("m1", "K1", "a", 1.0, 10.0)],
        vec![tx("A", "m1", 5.0, 8.0, 0)],
    );
    let t = fee_ratios(&ds);
    assert_eq!(t.share("A", "K1"), 1.0);
    assert_eq!(t.ratio("A", "K1"), 0.0);
    let mut ds = ds;
    ds.expenses.entries.insert("rent".into(), 8.0);
    let t = fee_ratios(&ds);
    assert!((t.entries[&("A".to_string(), "K1".to_string())].by_type["rent"] - 0.2).abs() < 1e-12);
}

#[test]
fn category_bound_examples() {
    let b = category_bounds(1000.0, 0.5, 0.0);
    assert!((b.lower - 380.0).abs() < 1e-9 && (b.upper - 630.0).abs() < 1e-9);
    assert!(!b.infeasible);
    let b = category_bounds(1000.0, 0.05, 0.0);
    assert_eq!(b.lower, 0.0);
    assert!((b.upper - 157.5).abs() < 1e-9);
    let b = category_bounds(1000.0, 0.5, 630.0);
    assert_eq!((b.lower, b.upper), (0.0, 0.0));
    assert!(b.infeasible);
    let b = category_bounds(1000.0, 0.5, 100.0);
    assert!((b.lower - 280.0).abs() < 1e-9 && (b.upper - 530.0).abs() < 1e-9);
}

#[test]
fn scaling_branch_hits_upper_bound_exactly() {
    let quotes = vec![quote("m1", "a", 10.0, 2.0, 30.0), quote("m2", "b", 20.0, 4.0, 10.0)];
    let b = bounds(100.0, 250.0);
    let a = allocate_category(&quotes, 0.0, &b, &PipelineConfig::default());
    assert!((a.candidate_value - 500.0).abs() < 1e-12);
    assert!(a.lines.iter().all(|l| l.1 == Branch::CandidateScaled));
    assert!((a.lines[0].2 - 15.0).abs() < 1e-12 && (a.lines[1].2 - 5.0).abs() < 1e-12);
    assert!((a.value - 250.0).abs() <= 1e-9 * 250.0);
}

#[test]
fn middle_branch_keeps_forecasts() {
    let quotes = vec![quote("m1", "a", 10.0, 2.0, 30.0), quote("m2", "b", 20.0, 4.0, 10.0)];
    let a = allocate_category(&quotes, 0.0, &bounds(400.0, 600.0), &PipelineConfig::default());
    let got: Vec<(&str, Branch, f64)> = a.lines.iter().map(|(m, b, x)| (m.as_str(), *b, *x)).collect();
    assert_eq!(got, vec![("m1", Branch::CandidateAccepted, 30.0), ("m2", Branch::CandidateAccepted, 10.0)]);
    assert!(a.fillers.is_empty() && !a.unfilled);
}

#[test]
fn top_five_per_secondary_category() {
    let mut quotes: Vec<MaterialQuote> = (0..6)
        .map(|i| quote(&format!("m{i}"), "a", 10.0, 1.0 + i as f64, 1.0))
        .collect();
    quotes.push(quote("n0", "b", 10.0, 1.0, 1.0));
    let a = allocate_category(&quotes, 0.0, &bounds(0.0, 1e6), &PipelineConfig::default());
    assert_eq!(a.candidates, vec!["m0", "n0", "m1", "m2", "m3", "m4"]);
    assert!(!a.candidates.contains(&"m5".to_string()));
}

#[test]
fn margin_filter_and_zero_price() {
    let quotes = vec![
        quote("lo", "a", 10.0, 9.5, 1.0),
        quote("hi", "a", 10.0, 5.0, 1.0),
        quote("free", "a", 0.0, 1.0, 1.0),
    ];
    let a = allocate_category(&quotes, 0.35, &bounds(0.0, 1e6), &PipelineConfig::default());
    assert_eq!(a.candidates, vec!["hi"]);
    assert_eq!(a.zero_price, vec!["free"]);
    let a = allocate_category(&quotes, 0.42, &bounds(0.0, 1e6), &PipelineConfig::default());
    assert!(a.candidates.is_empty());
}

#[test]
fn equal_margins_break_by_code() {
    let quotes: Vec<MaterialQuote> = ["e", "c", "a", "f", "b", "d"].iter().map(|c| quote(c, "k", 10.0, 2.0, 1.0)).collect();
    let a = allocate_category(&quotes, 0.0, &bounds(0.0, 1e6), &PipelineConfig::default());
    assert_eq!(a.candidates, vec!["a", "b", "c", "d", "e"]);
}

#[test]
fn filler_covers_the_gap() {
    let quotes = vec![
        quote("cand", "a", 10.0, 1.0, 10.0),
        quote("f1", "a", 10.0, 9.5, 10.0),
        quote("f2", "a", 10.0, 9.6, 10.0),
        quote("f3", "a", 10.0, 9.7, 10.0),
        quote("g1", "b", 10.0, 9.8, 10.0),
    ];
    let a = allocate_category(&quotes, 0.5, &bounds(250.0, 400.0), &PipelineConfig::default());
    assert_eq!(a.candidates, vec!["cand"]);
    assert_eq!(a.fillers, vec!["f1", "f2"]);
    assert!((a.value - 250.0).abs() < 1e-9);
    let f: Vec<f64> = a.lines.iter().filter(|l| l.1 == Branch::Filler).map(|l| l.2).collect();
    assert_eq!(f, vec![7.5, 7.5]);
    assert!(!a.unfilled);
}

#[test]
fn filler_residual_goes_to_lowest_loss_first() {
    let quotes = vec![quote("f1", "a", 10.0, 5.0, 1.0), quote("f2", "b", 10.0, 6.0, 20.0)];
    let a = allocate_category(&quotes, 1.0, &bounds(100.0, 400.0), &PipelineConfig::default());
    assert_eq!(a.fillers, vec!["f1", "f2"]);
    let x: BTreeMap<&str, f64> = a.lines.iter().map(|l| (l.0.as_str(), l.2)).collect();
    assert!((x["f1"] - 1.0).abs() < 1e-12);
    assert!((x["f2"] - 9.0).abs() < 1e-12);
    assert!(!a.unfilled);
}

#[test]
fn unfillable_gap_is_flagged() {
    let quotes = vec![quote("f1", "a", 10.0, 5.0, 1.0)];
    let a = allocate_category(&quotes, 1.0, &bounds(100.0, 400.0), &PipelineConfig::default());
    assert!(a.unfilled);
    assert!((a.value - 10.0).abs() < 1e-12);
}

#[test]
fn no_candidates_gives_an_empty_plan() {
    let ds = market(1);
    let cfg = PipelineConfig {
        theta: f64::MAX,
        ..PipelineConfig::default()
    };
    let plan = run_pipeline(&ds, &estimated(&ds), &Locks::default(), &cfg).unwrap();
    assert!(plan.lines.is_empty() && plan.customers.is_empty());
    assert_eq!((plan.total_amount(), plan.total_profit()), (0.0, 0.0));
    assert_eq!(plan.to_csv(), format!("{PLAN_CSV_HEADER}\n"));
}

fn check_plan(ds: &MarketDataset, plan: &AllocationPlan, cfg: &PipelineConfig) {
    let mut total = 0.0;
    let mut profit = 0.0;
    for l in &plan.lines {
        let s = ds.sku(&l.material).unwrap();
        assert!(l.units >= 0.0 && l.amount >= 0.0);
        assert!((l.amount - l.units * s.weighted_price).abs() <= 1e-9 * l.amount.max(1.0));
        assert!((l.profit - l.units * (s.weighted_price - s.unit_cost)).abs() <= 1e-9 * l.amount.max(1.0));
        total += l.units * s.weighted_price;
        profit += l.units * (s.weighted_price - s.unit_cost);
    }
    assert!((plan.total_amount() - total).abs() <= 1e-9 * total.max(1.0));
    assert!((plan.total_profit() - profit).abs() <= 1e-9 * total.max(1.0));

    for c in &plan.customers {
        let mine: Vec<&AllocationLine> = plan.lines.iter().filter(|l| l.customer == c.customer).collect();
        let sum: f64 = mine.iter().map(|l| l.amount).sum();
        assert!((c.total - sum).abs() <= 1e-9 * sum.max(1.0));
        let mats: BTreeSet<&str> = mine.iter().map(|l| l.material.as_str()).collect();
        assert_eq!(mats.len(), mine.len());
        let mut fills: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for l in mine.iter().filter(|l| l.branch == Branch::Filler) {
            *fills.entry((l.k1.as_str(), l.k2.as_str())).or_default() += 1;
        }
        assert!(fills.values().all(|n| *n <= cfg.fill_per_k2));
        if c.infeasible() {
            continue;
        }
        assert!(c.in_band(cfg.band), "{} total {} target {}", c.customer, c.total, c.target);
        for k in &c.categories {
            let x: f64 = mine.iter().filter(|l| l.k1 == k.k1).map(|l| l.amount).sum();
            let tol = 1e-9 * c.budget.max(1.0);
            assert!(x >= k.bounds.lower + k.bounds.locked - tol, "{} {}: {x} < L", c.customer, k.k1);
            assert!(x <= k.bounds.upper + k.bounds.locked + tol, "{} {}: {x} > U", c.customer, k.k1);
        }
    }
}

#[test]
fn fixture_market_plan_meets_bounds() {
    let ds = market(7);
    assert_eq!((ds.customers.len(), ds.skus.len(), ds.primary_categories().len()), (3, 12, 3));
    let cfg = PipelineConfig::default();
    let plan = run_pipeline(&ds, &estimated(&ds), &Locks::default(), &cfg).unwrap();
    assert_eq!(plan.customers.len(), 3);
    assert!(!plan.lines.is_empty());
    assert!(plan.customers.iter().any(|c| !c.infeasible()));
    check_plan(&ds, &plan, &cfg);
}

#[test]
fn locked_lines_appear_verbatim() {
    let mut ds = market(7);
    ds.skus[0].locked_amount = Some(12.5);
    let mut locks = Locks::from_dataset(&ds);
    locks.merge_csv("customer,material,amount\nC0002,M0002,7.25\n").unwrap();
    assert_eq!(locks.get("C0001", "M0001"), Some(12.5));
    assert_eq!(locks.get("C0001", "M0002"), None);
    let cfg = PipelineConfig::default();
    let plan = run_pipeline(&ds, &estimated(&ds), &locks, &cfg).unwrap();
    for c in &plan.customers {
        let l = plan.lines.iter().find(|l| l.customer == c.customer && l.material == "M0001").unwrap();
        assert_eq!((l.branch, l.amount), (Branch::Locked, 12.5));
    }
    let l = plan.lines.iter().find(|l| l.customer == "C0002" && l.material == "M0002").unwrap();
    assert_eq!((l.branch, l.amount), (Branch::Locked, 7.25));
    check_plan(&ds, &plan, &cfg);
}

#[test]
fn pipeline_is_deterministic() {
    let ds = market(3);
    let cfg = PipelineConfig::default();
    let a = run_pipeline(&ds, &estimated(&ds), &Locks::default(), &cfg).unwrap();
    let b = run_pipeline(&ds, &estimated(&ds), &Locks::default(), &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(
        serde_json::to_string(&a.summary_json()).unwrap(),
        serde_json::to_string(&b.summary_json()).unwrap()
    );
    assert!(a.to_csv().starts_with("customer,material,branch,amount,profit\n"));
}

#[test]
fn violations_are_attached() {
    let ds = market(5);
    let plan = run_pipeline(&ds, &estimated(&ds), &Locks::default(), &PipelineConfig::default()).unwrap();
    assert_eq!(plan.violations.customers.len(), plan.customers.len());
    let json = plan.summary_json();
    assert!(json["violations"]["violating"].is_u64());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bounds_are_ordered(x in 0.0f64..1e6, h in 0.0f64..1.0, lock in 0.0f64..1e5) {
        let b = category_bounds(x, h, lock);
        prop_assert!(b.lower >= 0.0 && b.lower <= b.upper);
    }

    #[test]
    fn allocation_respects_bounds(
        raw in prop::collection::vec((0u8..3, 1.0f64..50.0, 0.0f64..1.0, 0.0f64..40.0), 1..15),
        fr in 0.0f64..0.5,
        h in 0.0f64..1.0,
        x in 10.0f64..2000.0,
    ) {
        let quotes: Vec<MaterialQuote> = raw
            .iter()
            .enumerate()
            .map(|(i, &(k2, p, m, f))| quote(&format!("m{i:02}"), &format!("k{k2}"), p, p * (1.0 - m), f))
            .collect();
        let b = category_bounds(x, h, 0.0);
        let cfg = PipelineConfig::default();
        let a = allocate_category(&quotes, fr, &b, &cfg);
        let price: BTreeMap<&str, &MaterialQuote> = quotes.iter().map(|q| (q.code.as_str(), q)).collect();
        let v: f64 = a.lines.iter().map(|(m, _, u)| u * price[m.as_str()].price).sum();
        prop_assert!(a.lines.iter().all(|l| l.2 > 0.0));
        prop_assert!((v - a.value).abs() <= 1e-9 * v.max(1.0));
        prop_assert!(v <= b.upper * (1.0 + 1e-9) + 1e-9);
        if !a.unfilled {
            prop_assert!(v >= b.lower * (1.0 - 1e-9) - 1e-9);
        }
        if a.lines.iter().any(|l| l.1 == Branch::CandidateScaled) {
            prop_assert!((v - b.upper).abs() <= 1e-9 * b.upper);
        }
        let mut per_k2: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &a.fillers {
            *per_k2.entry(price[f.as_str()].k2.as_str()).or_default() += 1;
        }
        prop_assert!(per_k2.values().all(|n| *n <= 2));
        for c in &a.candidates {
            prop_assert!(price[c.as_str()].margin_rate() > fr + 0.08);
        }
    }
}
