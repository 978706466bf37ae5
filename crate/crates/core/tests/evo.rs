use pricerule::dsl::*;
use pricerule::evo::*;
use pricerule::search::Archive;
use pricerule_testkit::{desk_config, desk_world, DESK_FEATURES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn features() -> Vec<String> {
    DESK_FEATURES.iter().map(|s| s.to_string()).collect()
}

fn short(generations: usize, seed: u64) -> EvoConfig {
    EvoConfig {
        population: 20,
        generations,
        patience: None,
        seed,
        ..EvoConfig::default()
    }
}

fn sample_rule(seed: u64) -> DecisionRule {
    let cfg = EvoConfig::default();
    init_population(&cfg, &features(), &mut ChaCha8Rng::seed_from_u64(seed)).remove(0)
}

#[test]
fn defaults_and_validation() {
    let cfg = EvoConfig::default();
    assert_eq!(cfg.population, 50);
    assert_eq!(cfg.elite_count(), 5);
    assert!(cfg.validate().is_ok());
    let two = EvoConfig {
        population: 2,
        ..EvoConfig::default()
    };
    assert_eq!(two.elite_count(), 1);
    let bad = EvoConfig {
        alpha: 0.6,
        beta: 0.6,
        ..EvoConfig::default()
    };
    assert!(bad.validate().is_err());
    let tiny = EvoConfig {
        population: 1,
        ..EvoConfig::default()
    };
    assert!(run(&tiny, &desk_world(0, 5, desk_config())).is_err());
}

#[test]
fn initial_population_has_requested_size() {
    let cfg = EvoConfig::default();
    let pop = init_population(&cfg, &features(), &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(pop.len(), 50);
    assert!(pop.iter().all(|r| r.price.depth() <= 5 && r.gate.depth() <= 3));
}

#[test]
fn same_seed_same_result() {
    let ctx = desk_world(11, 30, desk_config());
    let a = run(&short(15, 4), &ctx).unwrap();
    let b = run(&short(15, 4), &ctx).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_generations_returns_initial_best() {
    let ctx = desk_world(2, 20, desk_config());
    let r = run(&short(0, 9), &ctx).unwrap();
    assert_eq!(r.generations_run, 0);
    assert!(r.trace.rows.is_empty());
    assert_eq!(r.best_fitness, r.initial.0);
    assert_eq!(r.archive.fitness(), r.initial.0);
}

#[test]
fn elitism_keeps_best_fitness_monotone() {
    let ctx = desk_world(5, 30, desk_config());
    for population in [2, 20] {
        let cfg = EvoConfig {
            population,
            ..short(40, 1)
        };
        let r = run(&cfg, &ctx).unwrap();
        let best = r.trace.best();
        assert!(best.windows(2).all(|w| w[1] >= w[0]), "{best:?}");
        assert!(best[0] >= r.initial.0);
        let arch: Vec<f64> = r.trace.rows.iter().map(|t| t.archive_best).collect();
        assert!(arch.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn patience_stops_early() {
    let ctx = desk_world(5, 10, desk_config());
    let cfg = EvoConfig {
        patience: Some(3),
        ..short(500, 2)
    };
    let r = run(&cfg, &ctx).unwrap();
    assert!(r.generations_run < 500);
}

#[test]
fn zero_sigma_perturbation_is_identity() {
    let r = DecisionRule::priced(ExprNode::add(ExprNode::feature("x1"), ExprNode::constant(2.5)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(perturb(&r, 0.0, &mut rng), r);
    let moved = perturb(&r, 1.0, &mut rng);
    assert_eq!(moved.node_count(), r.node_count());
    assert_ne!(moved, r);
}

#[test]
fn pruning_a_single_leaf_is_identity() {
    let r = DecisionRule::new(ExprNode::fixed(1.0), ExprNode::feature("x1"), 0.0);
    let out = prune(&r, &EvoConfig::default(), &features(), &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(out, r);
}

#[test]
fn pruning_shrinks() {
    let r = sample_rule(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let out = prune(&r, &EvoConfig::default(), &features(), &mut rng);
        assert!(out.total_nodes() < r.total_nodes() || r.total_nodes() == 2);
    }
}

#[test]
fn expansion_height_is_poisson_one() {
    let cfg = EvoConfig::default();
    let r = DecisionRule::priced(ExprNode::feature("x1"));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 20_000;
    let mut sum = 0usize;
    for _ in 0..n {
        let (out, d) = expand(&r, &cfg, &features(), &mut rng);
        assert!(out.total_nodes() > r.total_nodes());
        sum += d;
    }
    let mean = sum as f64 / n as f64;
    assert!((mean - 1.0).abs() <= 0.05, "mean δ {mean}");
}

#[test]
fn leaf_swap_changes_only_a_feature() {
    let r = DecisionRule::priced(ExprNode::mul(ExprNode::feature("x1"), ExprNode::constant(2.0)));
    let out = leaf_swap(&r, &features(), &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(out.price, ExprNode::mul(ExprNode::feature("x2"), ExprNode::constant(2.0)));
}

#[test]
fn crossover_of_identical_parents_is_identity() {
    let r = sample_rule(8);
    let (x, y) = crossover(&r, &r, 12, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!((x, y), (r.clone(), r));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn crossover_conserves_nodes(a in 0u64..1000, b in 0u64..1000, s in 0u64..1000) {
        let (ra, rb) = (sample_rule(a), sample_rule(b));
        let (x, y) = crossover(&ra, &rb, 64, &mut ChaCha8Rng::seed_from_u64(s));
        prop_assert_eq!(x.total_nodes() + y.total_nodes(), ra.total_nodes() + rb.total_nodes());
        prop_assert!(x.gate == ra.gate || x.price == ra.price);
    }

    #[test]
    fn operators_respect_depth_cap(a in 0u64..1000, b in 0u64..1000, s in 0u64..1000, cap in 1usize..6) {
        let cfg = EvoConfig { max_depth: cap, ..EvoConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (x, y) = crossover(&sample_rule(a), &sample_rule(b), cap, &mut rng);
        let (e, _) = expand(&sample_rule(a), &cfg, &features(), &mut rng);
        for r in [x, y, e] {
            prop_assert!(r.gate.depth() <= cap && r.price.depth() <= cap);
        }
    }

    #[test]
    fn archive_history_is_monotone(offers in prop::collection::vec((-100.0f64..100.0, prop::option::of(0.0f64..10.0)), 0..40)) {
        let mut a = Archive::default();
        let r = DecisionRule::priced(ExprNode::feature("x1"));
        for (i, (f, m)) in offers.iter().enumerate() {
            a.offer(&r, *f, *m, i);
        }
        prop_assert_eq!(a.history.len(), a.accepted);
        for w in a.history.windows(2) {
            prop_assert!(w[1].fitness > w[0].fitness);
            if let (Some(x), Some(y)) = (w[0].mae, w[1].mae) {
                prop_assert!(y <= x);
            }
        }
    }
}
