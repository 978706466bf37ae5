//! Evolutionary search over decision rules.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{random_tree, BinaryOp, DecisionRule, ExprNode, RandomTreeConfig};
use crate::fitness::EvalContext;
use crate::search::{mean_finite, Archive, SearchTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Expansion probability.
    pub alpha: f64,
    /// Pruning probability.
    pub beta: f64,
    /// Perturbation probability.
    pub gamma: f64,
    /// Experimental feature-to-feature leaf swap; zero by default.
    pub leaf_swap: f64,
    pub poisson_lambda: f64,
    pub sigma: f64,
    pub elitism: f64,
    pub tournament: usize,
    pub max_depth: usize,
    /// Stop after this many generations without improvement.
    pub patience: Option<usize>,
    pub seed: u64,
    pub gate_tree: RandomTreeConfig,
    pub price_tree: RandomTreeConfig,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 500,
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            leaf_swap: 0.0,
            poisson_lambda: 1.0,
            sigma: 0.5,
            elitism: 0.1,
            tournament: 3,
            max_depth: 12,
            patience: Some(50),
            seed: 0,
            gate_tree: RandomTreeConfig::default().depths(1, 3),
            price_tree: RandomTreeConfig::default().depths(2, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvoError {
    #[error("invalid evolution config: {0}")]
    Config(String),
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvoError> {
        let probs = [self.alpha, self.beta, self.gamma, self.leaf_swap];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(EvoError::Config("mutation probabilities must lie in [0,1] and sum to at most 1".into()));
        }
        if self.population < 2 {
            return Err(EvoError::Config("population must be at least 2".into()));
        }
        if !(self.elitism > 0.0 && self.elitism <= 1.0) {
            return Err(EvoError::Config("elitism fraction must lie in (0,1]".into()));
        }
        if self.tournament == 0 || self.max_depth == 0 {
            return Err(EvoError::Config("tournament size and depth cap must be positive".into()));
        }
        if !(self.poisson_lambda > 0.0) || !(self.sigma >= 0.0) {
            return Err(EvoError::Config("poisson lambda must be positive and sigma non-negative".into()));
        }
        Ok(())
    }

    /// `max(1, ⌊elitism·M⌋)`.
    pub fn elite_count(&self) -> usize {
        ((self.elitism * self.population as f64).floor() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationKind {
    Expansion,
    Pruning,
    Perturbation,
    LeafSwap,
}

pub fn init_population<R: Rng + ?Sized>(cfg: &EvoConfig, features: &[String], rng: &mut R) -> Vec<DecisionRule> {
    (0..cfg.population)
        .map(|_| {
            let gate = random_tree(&cfg.gate_tree, features, rng);
            let price = random_tree(&cfg.price_tree, features, rng);
            DecisionRule::new(gate, price, 0.0)
        })
        .collect()
}

fn random_leaf<R: Rng + ?Sized>(tree: &RandomTreeConfig, features: &[String], rng: &mut R) -> ExprNode {
    random_tree(&tree.clone().depths(1, 1), features, rng)
}

/// Wraps a random node as `op(node, S)` where `S` has height δ ~ Poisson(λ);
/// returns the mutated rule and δ.
pub fn expand<R: Rng + ?Sized>(rule: &DecisionRule, cfg: &EvoConfig, features: &[String], rng: &mut R) -> (DecisionRule, usize) {
    let mut out = rule.clone();
    let i = rng.random_range(0..out.total_nodes());
    let delta = Poisson::new(cfg.poisson_lambda).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let sub = random_tree(&cfg.price_tree.clone().depths(delta + 1, delta + 1), features, rng);
    let ops = if cfg.price_tree.binary_ops.is_empty() {
        BinaryOp::ALL.to_vec()
    } else {
        cfg.price_tree.binary_ops.clone()
    };
    let op = ops[rng.random_range(0..ops.len())];
    if let Some(node) = out.node_mut(i) {
        let old = std::mem::replace(node, ExprNode::constant(0.0));
        *node = ExprNode::binary(op, old, sub);
    }
    repair(&mut out, cfg.max_depth);
    (out, delta)
}

/// Replaces a random internal node with a leaf; single-leaf trees are returned unchanged.
pub fn prune<R: Rng + ?Sized>(rule: &DecisionRule, cfg: &EvoConfig, features: &[String], rng: &mut R) -> DecisionRule {
    let mut out = rule.clone();
    let internal: Vec<usize> = (0..out.total_nodes())
        .filter(|&i| out.node(i).is_some_and(|n| !n.is_leaf()))
        .collect();
    if internal.is_empty() {
        return out;
    }
    let i = internal[rng.random_range(0..internal.len())];
    let leaf = random_leaf(&cfg.price_tree, features, rng);
    if let Some(node) = out.node_mut(i) {
        *node = leaf;
    }
    out
}

/// Adds N(0, σ) to one mutable constant.
pub fn perturb<R: Rng + ?Sized>(rule: &DecisionRule, sigma: f64, rng: &mut R) -> DecisionRule {
    let mut theta = rule.extract_parameters();
    if theta.is_empty() {
        return rule.clone();
    }
    let k = rng.random_range(0..theta.len());
    let noise = Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0);
    theta[k] += noise;
    rule.apply_parameters(&theta).unwrap_or_else(|_| rule.clone())
}

/// Replaces one feature leaf by a different feature.
pub fn leaf_swap<R: Rng + ?Sized>(rule: &DecisionRule, features: &[String], rng: &mut R) -> DecisionRule {
    let mut out = rule.clone();
    let leaves: Vec<usize> = (0..out.total_nodes())
        .filter(|&i| matches!(out.node(i), Some(ExprNode::Feature(_))))
        .collect();
    if leaves.is_empty() || features.len() < 2 {
        return out;
    }
    let i = leaves[rng.random_range(0..leaves.len())];
    if let Some(ExprNode::Feature(f)) = out.node_mut(i) {
        let others: Vec<&String> = features.iter().filter(|x| *x != f).collect();
        if !others.is_empty() {
            *f = others[rng.random_range(0..others.len())].clone();
        }
    }
    out
}

pub fn mutate<R: Rng + ?Sized>(
    rule: &DecisionRule,
    kind: MutationKind,
    cfg: &EvoConfig,
    features: &[String],
    rng: &mut R,
) -> DecisionRule {
    match kind {
        MutationKind::Expansion => expand(rule, cfg, features, rng).0,
        MutationKind::Pruning => prune(rule, cfg, features, rng),
        MutationKind::Perturbation => perturb(rule, cfg.sigma, rng),
        MutationKind::LeafSwap => leaf_swap(rule, features, rng),
    }
}

fn repair(rule: &mut DecisionRule, max_depth: usize) {
    rule.gate.truncate(max_depth);
    rule.price.truncate(max_depth);
}

/// Swaps uniformly chosen subtrees between the gates or between the prices.
pub fn crossover<R: Rng + ?Sized>(a: &DecisionRule, b: &DecisionRule, max_depth: usize, rng: &mut R) -> (DecisionRule, DecisionRule) {
    let mut x = a.clone();
    let mut y = b.clone();
    if a == b {
        return (x, y);
    }
    let gate_side = rng.random_bool(0.5);
    let (tx, ty) = if gate_side {
        (&mut x.gate, &mut y.gate)
    } else {
        (&mut x.price, &mut y.price)
    };
    let i = rng.random_range(0..tx.node_count());
    let j = rng.random_range(0..ty.node_count());
    let sa = tx.nth(i).cloned();
    let sb = ty.nth(j).cloned();
    if let (Some(sa), Some(sb)) = (sa, sb) {
        if let Some(n) = tx.nth_mut(i) {
            *n = sb;
        }
        if let Some(n) = ty.nth_mut(j) {
            *n = sa;
        }
    }
    repair(&mut x, max_depth);
    repair(&mut y, max_depth);
    (x, y)
}

fn tournament<R: Rng + ?Sized>(fit: &[f64], pool: &[usize], size: usize, rng: &mut R) -> usize {
    let k = size.min(pool.len()).max(1);
    let picks = sample(rng, pool.len(), k);
    let mut best = pool[picks.index(0)];
    for p in picks.iter().skip(1) {
        let c = pool[p];
        if fit[c] > fit[best] || (fit[c] == fit[best] && c < best) {
            best = c;
        }
    }
    best
}

fn key(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvoResult {
    pub best: DecisionRule,
    pub best_fitness: f64,
    pub archive: Archive,
    /// Best and mean fitness of the initial population.
    pub initial: (f64, f64),
    pub trace: SearchTrace,
    pub generations_run: usize,
}

fn score_all(ctx: &EvalContext, pop: &[DecisionRule]) -> Vec<f64> {
    pop.par_iter().map(|r| key(ctx.score(r))).collect()
}

fn argmax(fit: &[f64]) -> usize {
    let mut b = 0;
    for (i, &f) in fit.iter().enumerate() {
        if f > fit[b] {
            b = i;
        }
    }
    b
}

fn offer(archive: &mut Archive, ctx: &EvalContext, rule: &DecisionRule, fitness: f64, iteration: usize) {
    if fitness > archive.fitness() {
        let mae = ctx.mae(rule).ok().flatten();
        archive.offer(rule, fitness, mae, iteration);
    }
}

/// Generational loop: offspring from tournament parents, merged pool, top
/// elites kept, tournament fills the remaining slots.
pub fn run(cfg: &EvoConfig, ctx: &EvalContext) -> Result<EvoResult, EvoError> {
    cfg.validate()?;
    let features: Vec<String> = ctx.schema.names().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.population;
    let mut pop = init_population(cfg, &features, &mut rng);
    let mut fit = score_all(ctx, &pop);
    let mut archive = Archive::default();
    let b0 = argmax(&fit);
    offer(&mut archive, ctx, &pop[b0], fit[b0], 0);
    let initial = (fit[b0], mean_finite(&fit));
    let mut trace = SearchTrace::default();
    let mut best_seen = fit[b0];
    let mut stale = 0;
    let mut generations_run = 0;
    let elites = cfg.elite_count();
    let all: Vec<usize> = (0..m).collect();

    for g in 1..=cfg.generations {
        let mut children = Vec::with_capacity(m + 1);
        while children.len() < m {
            let u: f64 = rng.random();
            let p = tournament(&fit, &all, cfg.tournament, &mut rng);
            let kind = if u < cfg.alpha {
                Some(MutationKind::Expansion)
            } else if u < cfg.alpha + cfg.beta {
                Some(MutationKind::Pruning)
            } else if u < cfg.alpha + cfg.beta + cfg.gamma {
                Some(MutationKind::Perturbation)
            } else if u < cfg.alpha + cfg.beta + cfg.gamma + cfg.leaf_swap {
                Some(MutationKind::LeafSwap)
            } else {
                None
            };
            match kind {
                Some(k) => children.push(mutate(&pop[p], k, cfg, &features, &mut rng)),
                None => {
                    let q = tournament(&fit, &all, cfg.tournament, &mut rng);
                    let (x, y) = crossover(&pop[p], &pop[q], cfg.max_depth, &mut rng);
                    children.push(x);
                    children.push(y);
                }
            }
        }
        children.truncate(m);
        let child_fit = score_all(ctx, &children);

        let mut pool: Vec<DecisionRule> = std::mem::take(&mut pop);
        pool.extend(children);
        let mut pool_fit = std::mem::take(&mut fit);
        pool_fit.extend(child_fit);

        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| pool_fit[b].total_cmp(&pool_fit[a]).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = order[..elites].to_vec();
        let mut rest: Vec<usize> = order[elites..].to_vec();
        while chosen.len() < m && !rest.is_empty() {
            let w = tournament(&pool_fit, &rest, cfg.tournament, &mut rng);
            rest.retain(|&i| i != w);
            chosen.push(w);
        }
        pop = chosen.iter().map(|&i| pool[i].clone()).collect();
        fit = chosen.iter().map(|&i| pool_fit[i]).collect();

        let b = argmax(&fit);
        offer(&mut archive, ctx, &pop[b], fit[b], g);
        trace.push(g, fit[b], mean_finite(&fit), &archive, &pop[b]);
        generations_run = g;

        if fit[b] > best_seen {
            best_seen = fit[b];
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }

    let b = argmax(&fit);
    Ok(EvoResult {
        best: pop[b].clone(),
        best_fitness: fit[b],
        archive,
        initial,
        trace,
        generations_run,
    })
}
