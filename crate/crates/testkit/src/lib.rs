//! Independent oracles and small worlds for tests.

use pricerule::dsl::{BinaryOp, Cmp, DecisionRule, ExprNode, Schema, UnaryOp};
use pricerule::fitness::{DemandCurve, EvalContext, EvalRow, FitnessConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clamp(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else if v > 1e12 {
        1e12
    } else if v < -1e12 {
        -1e12
    } else {
        v
    }
}

/// Tree-walking evaluator written from the operator definitions.
pub fn oracle_expr(n: &ExprNode, names: &[String], row: &[f64]) -> f64 {
    let lookup = |f: &str| row[names.iter().position(|x| x == f).expect("feature")];
    let v = match n {
        ExprNode::Feature(f) => lookup(f),
        ExprNode::Const { value, .. } => *value,
        ExprNode::Unary(op, a) => {
            let a = oracle_expr(a, names, row);
            match op {
                UnaryOp::Log => (a.abs() + 1e-9).ln(),
                UnaryOp::Exp => {
                    if a > 50.0 {
                        50f64.exp()
                    } else {
                        a.exp()
                    }
                }
                UnaryOp::Sqrt => a.abs().sqrt(),
                UnaryOp::Sin => a.sin(),
                UnaryOp::Cos => a.cos(),
                UnaryOp::Neg => -a,
                UnaryOp::Sigmoid => {
                    if -a > 50.0 {
                        1.0 / (1.0 + 50f64.exp())
                    } else {
                        1.0 / (1.0 + (-a).exp())
                    }
                }
            }
        }
        ExprNode::Binary(op, a, b) => {
            let a = oracle_expr(a, names, row);
            let b = oracle_expr(b, names, row);
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b.abs() <= 1e-6 {
                        1.0
                    } else {
                        a / b
                    }
                }
                BinaryOp::Pow => {
                    let e = b.max(-10.0).min(10.0);
                    let m = a.abs().powf(e);
                    clamp(if a < 0.0 { -m } else { m })
                }
            }
        }
        ExprNode::Indicator(r, a) => {
            let inside = r.conditions.iter().all(|c| {
                let x = clamp(lookup(&c.feature));
                match c.cmp {
                    Cmp::Gt => x > c.threshold,
                    Cmp::Ge => x >= c.threshold,
                    Cmp::Lt => x < c.threshold,
                    Cmp::Le => x <= c.threshold,
                }
            });
            if inside {
                oracle_expr(a, names, row)
            } else {
                0.0
            }
        }
    };
    clamp(v)
}

/// Row-by-row profit objective computed without the library's evaluator.
pub fn oracle_fitness(rule: &DecisionRule, ctx: &EvalContext) -> f64 {
    let names = ctx.schema.names();
    let mut total = 0.0;
    for r in &ctx.rows {
        let h = oracle_expr(&rule.gate, names, &r.features);
        if h > rule.threshold {
            let g = oracle_expr(&rule.price, names, &r.features);
            let p = if g > 0.01 { g } else { 0.01 };
            let q = match r.curve {
                DemandCurve::Exponential { q0, p0, beta } => q0 * (-beta * (p - p0)).exp(),
                DemandCurve::Linear { scale, intercept, slope } => {
                    let q = scale * (intercept - slope * p);
                    if q > 0.0 {
                        q
                    } else {
                        0.0
                    }
                }
            };
            total += (p - r.cost) * q - ctx.cfg.eta * (p - r.ref_price) * (p - r.ref_price);
        }
    }
    let mean = if ctx.rows.is_empty() { 0.0 } else { total / ctx.rows.len() as f64 };
    let mut internal = 0.0;
    let mut leaves = 0.0;
    for t in [&rule.gate, &rule.price] {
        t.visit(&mut |n| {
            if n.is_leaf() {
                leaves += 1.0;
            } else {
                internal += 1.0;
            }
        });
    }
    mean - ctx.cfg.lambda * (2.0 * internal + leaves)
}

/// Leaves: the features then integer constants `lo..=hi`.
pub fn leaves(features: &[&str], lo: i32, hi: i32) -> Vec<ExprNode> {
    let mut out: Vec<ExprNode> = features.iter().map(|f| ExprNode::feature(*f)).collect();
    out.extend((lo..=hi).map(|c| ExprNode::constant(c as f64)));
    out
}

/// Every tree of depth ≤ `depth` over the four arithmetic operators.
pub fn enumerate_trees(leaves: &[ExprNode], depth: usize) -> Vec<ExprNode> {
    let mut level: Vec<ExprNode> = leaves.to_vec();
    for _ in 1..depth {
        let mut next = leaves.to_vec();
        for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div] {
            for a in &level {
                for b in &level {
                    next.push(ExprNode::binary(op, a.clone(), b.clone()));
                }
            }
        }
        level = next;
    }
    level
}

/// Calls `f` with every tree of depth ≤ 3 without materializing the whole set.
pub fn for_each_depth3_tree(leaves: &[ExprNode], mut f: impl FnMut(&ExprNode)) {
    let shallow = enumerate_trees(leaves, 2);
    for l in leaves {
        f(l);
    }
    for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div] {
        for a in &shallow {
            for b in &shallow {
                f(&ExprNode::binary(op, a.clone(), b.clone()));
            }
        }
    }
}

pub const DESK_FEATURES: [&str; 2] = ["x1", "x2"];

/// Two-feature world: `x1` is the unit cost, `x2` is noise, demand is
/// exponential with β = 0.5 so every row's optimum is `x1 + 2`.
pub fn desk_world(seed: u64, rows: usize, cfg: FitnessConfig) -> EvalContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(DESK_FEATURES.iter().map(|s| s.to_string()).collect());
    let rows = (0..rows)
        .map(|i| {
            let c: f64 = rng.random_range(1.0..5.0);
            let x2: f64 = rng.random_range(0.0..3.0);
            let p0 = c + 2.0;
            EvalRow {
                customer: format!("c{i}"),
                material: "m0".into(),
                k1: "k".into(),
                cost: c,
                ref_price: p0,
                curve: DemandCurve::Exponential { q0: 10.0, p0, beta: 0.5 },
                features: vec![c, x2],
            }
        })
        .collect();
    EvalContext::new(schema, rows, cfg).expect("desk context")
}

pub fn desk_config() -> FitnessConfig {
    FitnessConfig {
        eta: 0.0,
        lambda: 0.01,
        ..FitnessConfig::default()
    }
}

/// Best fitness over gate leaves × depth ≤ 3 price trees.
pub fn enumerated_optimum(ctx: &EvalContext) -> (f64, DecisionRule) {
    let lv = leaves(&DESK_FEATURES, -2, 2);
    let mut best = (f64::NEG_INFINITY, DecisionRule::priced(ExprNode::constant(0.0)));
    for gate in &lv {
        let mut rule = DecisionRule::new(gate.clone(), ExprNode::constant(0.0), 0.0);
        for_each_depth3_tree(&lv, |price| {
            rule.price = price.clone();
            let f = ctx.score(&rule);
            if f > best.0 {
                best = (f, rule.clone());
            }
        });
    }
    best
}
