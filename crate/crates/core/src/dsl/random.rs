use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryOp, DecisionRule, ExprNode, UnaryOp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTreeConfig {
    pub min_depth: usize,
    pub max_depth: usize,
    pub feature_leaf_prob: f64,
    /// Chance of closing a branch with a leaf once the forced depth is reached.
    pub leaf_stop_prob: f64,
    pub const_range: (f64, f64),
    pub binary_ops: Vec<BinaryOp>,
    pub unary_ops: Vec<UnaryOp>,
}

impl Default for RandomTreeConfig {
    fn default() -> Self {
        Self {
            min_depth: 2,
            max_depth: 5,
            feature_leaf_prob: 0.7,
            leaf_stop_prob: 0.3,
            const_range: (-5.0, 5.0),
            binary_ops: BinaryOp::ALL.to_vec(),
            unary_ops: vec![UnaryOp::Log, UnaryOp::Exp],
        }
    }
}

impl RandomTreeConfig {
    pub fn depths(mut self, min: usize, max: usize) -> Self {
        self.min_depth = min.max(1);
        self.max_depth = max.max(self.min_depth);
        self
    }
}

fn random_leaf<R: Rng + ?Sized>(cfg: &RandomTreeConfig, features: &[String], rng: &mut R) -> ExprNode {
    if !features.is_empty() && rng.random_bool(cfg.feature_leaf_prob.clamp(0.0, 1.0)) {
        ExprNode::Feature(features[rng.random_range(0..features.len())].clone())
    } else {
        let (lo, hi) = cfg.const_range;
        let v = if hi > lo { rng.random_range(lo..hi) } else { lo };
        ExprNode::constant((v * 100.0).round() / 100.0)
    }
}

fn grow<R: Rng + ?Sized>(cfg: &RandomTreeConfig, features: &[String], rng: &mut R, d: usize, must: usize) -> ExprNode {
    let n_ops = cfg.binary_ops.len() + cfg.unary_ops.len();
    if d >= cfg.max_depth || n_ops == 0 {
        return random_leaf(cfg, features, rng);
    }
    if d >= must && rng.random_bool(cfg.leaf_stop_prob.clamp(0.0, 1.0)) {
        return random_leaf(cfg, features, rng);
    }
    let k = rng.random_range(0..n_ops);
    if k < cfg.binary_ops.len() {
        let a = grow(cfg, features, rng, d + 1, must);
        let b = grow(cfg, features, rng, d + 1, 0);
        ExprNode::binary(cfg.binary_ops[k], a, b)
    } else {
        let a = grow(cfg, features, rng, d + 1, must);
        ExprNode::unary(cfg.unary_ops[k - cfg.binary_ops.len()], a)
    }
}

/// A random tree whose depth lies in `[min_depth, max_depth]`.
pub fn random_tree<R: Rng + ?Sized>(cfg: &RandomTreeConfig, features: &[String], rng: &mut R) -> ExprNode {
    let min = cfg.min_depth.max(1);
    let max = cfg.max_depth.max(min);
    let target = rng.random_range(min..=max);
    grow(cfg, features, rng, 1, target)
}

pub fn random_rule<R: Rng + ?Sized>(
    gate_cfg: &RandomTreeConfig,
    price_cfg: &RandomTreeConfig,
    features: &[String],
    rng: &mut R,
) -> DecisionRule {
    let gate = random_tree(gate_cfg, features, rng);
    let price = random_tree(price_cfg, features, rng);
    DecisionRule::new(gate, price, 0.0)
}
