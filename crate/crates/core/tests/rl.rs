use pricerule::dsl::*;
use pricerule::grammar::Token;
use pricerule::rl::*;
use pricerule_testkit::{desk_config, desk_world};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick(episodes: usize, seed: u64) -> RlConfig {
    RlConfig {
        episodes,
        batch: 16,
        hidden: vec![32],
        max_len: 7,
        seed,
        ..RlConfig::default()
    }
}

fn transition(action: usize) -> Transition {
    Transition {
        state: vec![0.0; STATE_DIM],
        action,
        legal: vec![action],
        reward: 0.0,
        next_state: vec![0.0; STATE_DIM],
        next_legal: vec![],
        terminal: true,
    }
}

#[test]
fn epsilon_schedule() {
    let cfg = RlConfig::default();
    assert_eq!(cfg.epsilon_after(0), 1.0);
    assert!((cfg.epsilon_after(1) - 0.995).abs() < 1e-15);
    assert!((cfg.epsilon_after(100) - 0.995f64.powi(100)).abs() < 1e-12);
    assert_eq!(cfg.epsilon_after(1000), 0.1);
    assert_eq!(cfg.epsilon_after(5000), 0.1);
}

#[test]
fn invalid_config_is_rejected() {
    let bad = RlConfig {
        gamma: 1.0,
        ..RlConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = RlConfig {
        eps_min: 2.0,
        ..RlConfig::default()
    };
    assert!(bad.validate().is_err());
    let ctx = desk_world(0, 4, desk_config());
    let shaped = RlConfig {
        reward_mode: RewardMode::ShapedMae,
        ..RlConfig::default()
    };
    assert_eq!(ExprEnv::new(&ctx, &shaped).err(), Some(RlError::MissingGolden));
}

#[test]
fn first_step_legal_actions_and_transition() {
    let ctx = desk_world(0, 4, desk_config());
    let cfg = RlConfig {
        max_len: 3,
        ..RlConfig::default()
    };
    let mut env = ExprEnv::new(&ctx, &cfg).unwrap();
    let s = env.reset();
    let legal = env.legal_actions(&s);
    assert_eq!(legal.len(), env.vocab.len());
    let plus = env.vocab.iter().position(|t| *t == Token::Bin(BinaryOp::Add)).unwrap();
    let x1 = env.vocab.iter().position(|t| *t == Token::Feat("x1".into())).unwrap();
    let (s1, r, done) = env.step(&s, plus).unwrap();
    assert_eq!((r, done), (0.0, false));
    let legal = env.legal_actions(&s1);
    assert!(legal.iter().all(|&a| env.vocab[a].is_leaf()));
    assert_eq!(env.step(&s1, plus).unwrap_err(), RlError::Illegal(plus));
    let (s2, _, _) = env.step(&s1, x1).unwrap();
    let (s3, r, done) = env.step(&s2, x1).unwrap();
    assert!(done);
    let rule = env.rule_of(&s3).unwrap();
    assert_eq!(rule.price, ExprNode::add(ExprNode::feature("x1"), ExprNode::feature("x1")));
    assert_eq!(rule.gate, ExprNode::fixed(1.0));
    assert!(r.is_finite());
}

#[test]
fn state_features_have_fixed_width() {
    let ctx = desk_world(0, 4, desk_config());
    let env = ExprEnv::new(&ctx, &RlConfig::default()).unwrap();
    let f = env.features(&env.reset());
    assert_eq!(f.len(), STATE_DIM);
    assert!(f.iter().all(|v| v.is_finite()));
}

#[test]
fn buffer_capacity_and_duplicates() {
    let mut b = ReplayBuffer::new(3);
    assert!(b.push("s".into(), transition(0)));
    assert!(!b.push("s".into(), transition(0)));
    assert!(b.push("s".into(), transition(1)));
    assert!(b.push("t".into(), transition(0)));
    assert!(b.push("u".into(), transition(0)));
    assert_eq!(b.len(), 3);
    assert!(!b.contains("s", 0));
    assert!(b.contains("u", 0));
    assert!(b.push("s".into(), transition(0)));
    assert!(!ReplayBuffer::new(0).push("s".into(), transition(0)));
    assert!(ReplayBuffer::new(4).sample(5, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    assert_eq!(b.sample(7, &mut ChaCha8Rng::seed_from_u64(0)).len(), 7);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::new(&[STATE_DIM, 16, 6], &mut rng);
    let inputs: Vec<Vec<f64>> = (0..4).map(|i| (0..STATE_DIM).map(|j| ((i * 7 + j) as f64 * 0.37).sin()).collect()).collect();
    let err = gradient_check(&net, &inputs, None, &mut rng);
    assert!(err < 1e-5, "relative error {err}");
    let deep = Mlp::new(&[STATE_DIM, 8, 8, 3], &mut rng);
    assert!(gradient_check(&deep, &inputs, Some(50), &mut rng) < 1e-5);
}

#[test]
fn adam_reduces_a_quadratic() {
    let mut p = vec![3.0, -2.0];
    let mut opt = Adam::new(2, 0.1);
    for _ in 0..500 {
        let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        opt.step(&mut p, &g);
    }
    assert!(p.iter().all(|x| x.abs() < 0.05), "{p:?}");
}

#[test]
fn checkpoint_roundtrip_and_guards() {
    let net = Mlp::new(&[STATE_DIM, 4, 3], &mut ChaCha8Rng::seed_from_u64(1));
    let hash = [7u8; 32];
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &net, &hash).unwrap();
    let (back, h) = read_checkpoint(&mut buf.as_slice(), Some(&hash)).unwrap();
    assert_eq!((back, h), (net, hash));
    assert!(matches!(read_checkpoint(&mut buf.as_slice(), Some(&[0u8; 32])), Err(CheckpointError::Fingerprint)));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&mut bad.as_slice(), None), Err(CheckpointError::BadMagic)));
    assert!(read_checkpoint(&mut &buf[..buf.len() - 3], None).is_err());
}

#[test]
fn training_is_reproducible() {
    let ctx = desk_world(3, 20, desk_config());
    let a = train(&quick(60, 2), &ctx).unwrap();
    let b = train(&quick(60, 2), &ctx).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.q, b.q);
    assert_eq!(a.greedy, b.greedy);
    assert_eq!(a.trace.rows.len(), 60);
    assert!(a.trace.to_csv().starts_with("# seed=2\n"));
}

#[test]
fn greedy_rollout_is_valid() {
    let ctx = desk_world(3, 20, desk_config());
    let cfg = quick(40, 9);
    let res = train(&cfg, &ctx).unwrap();
    assert!(res.greedy.price.node_count() <= cfg.max_len);
    assert!(res.greedy_fitness.is_finite());
    let (_, f) = res.best();
    assert!(f >= res.greedy_fitness);
    assert!(f >= res.archive.fitness() || res.archive.best.is_none());
    let eps: Vec<f64> = res.trace.rows.iter().map(|r| r.epsilon).collect();
    assert!(eps.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn shaped_reward_runs_with_golden() {
    let ctx = desk_world(3, 10, desk_config());
    let target = DecisionRule::priced(ExprNode::add(ExprNode::feature("x1"), ExprNode::constant(2.0)));
    let g = ctx.actions(&target).unwrap();
    let ctx = ctx.with_golden(g).unwrap();
    let cfg = RlConfig {
        reward_mode: RewardMode::ShapedMae,
        ..quick(20, 1)
    };
    let res = train(&cfg, &ctx).unwrap();
    assert!(res.trace.rows.iter().all(|r| r.mae.is_some()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_legal_walks_complete(seed in 0u64..10_000, max_len in 1usize..12) {
        let ctx = desk_world(0, 3, desk_config());
        let cfg = RlConfig { max_len, ..RlConfig::default() };
        let mut env = ExprEnv::new(&ctx, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = env.reset();
        let mut steps = 0;
        while !s.is_complete() {
            let legal = env.legal_actions(&s);
            prop_assert!(!legal.is_empty());
            let a = legal[rand::Rng::random_range(&mut rng, 0..legal.len())];
            s = env.step(&s, a).unwrap().0;
            steps += 1;
        }
        prop_assert!(steps <= max_len);
        let rule = env.rule_of(&s).unwrap();
        prop_assert_eq!(rule.price.node_count(), steps);
    }

    #[test]
    fn buffer_never_exceeds_capacity(cap in 0usize..8, pushes in prop::collection::vec((0u8..4, 0usize..3), 0..40)) {
        let mut b = ReplayBuffer::new(cap);
        for (k, a) in pushes {
            let key = k.to_string();
            let had = b.contains(&key, a);
            let added = b.push(key.clone(), transition(a));
            prop_assert!(!(had && added));
            prop_assert!(b.len() <= cap);
        }
    }
}
