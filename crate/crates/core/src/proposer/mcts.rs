use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bfgs::{fit_parameters, BfgsOptions, FitLoss};
use super::{normalize_priors, Proposer, RETRY_BUDGET};
use crate::dsl::{DecisionRule, ExprNode, UnaryOp};
use crate::fitness::EvalContext;
use crate::grammar::{default_vocab, PrefixBuilder, Token};
use crate::search::{Archive, SearchTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MctsReward {
    /// `1 / (1 + RMSE/σ(target) + 0.1·unused)` against golden prices.
    #[default]
    Nrmse,
    /// Logistic squash of fitness relative to the reference-price profit.
    Fitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub simulations: usize,
    pub c_puct: f64,
    pub replay_capacity: usize,
    pub max_len: usize,
    /// Weight of uniform noise mixed into proposer priors.
    pub prior_eps: f64,
    /// Number of complete constructions.
    pub iterations: usize,
    pub reward: MctsReward,
    /// Leaf value: `value_mix·proposer value + (1 − value_mix)·rollout reward`.
    pub value_mix: f64,
    pub constants: Vec<f64>,
    pub unary: Vec<UnaryOp>,
    /// Adds a free constant token fitted by BFGS at evaluation.
    pub free_constants: bool,
    /// Features whose absence from an expression is penalized.
    pub relevant_features: Vec<String>,
    pub gate: ExprNode,
    pub bfgs: BfgsOptions,
    /// Row cap for the constant fit; scoring always uses every row. 0 fits on all rows.
    pub fit_rows: usize,
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            simulations: 100,
            c_puct: 1.0,
            replay_capacity: 1000,
            max_len: 20,
            prior_eps: 0.0,
            iterations: 10,
            reward: MctsReward::Nrmse,
            value_mix: 0.5,
            constants: vec![1.0, 2.0],
            unary: Vec::new(),
            free_constants: true,
            relevant_features: Vec::new(),
            gate: ExprNode::fixed(1.0),
            bfgs: BfgsOptions {
                max_iters: 50,
                tol: 1e-8,
                ..BfgsOptions::default()
            },
            fit_rows: 256,
            seed: 0,
        }
    }
}

/// `(1 + nrmse + 0.1·unused)⁻¹`.
pub fn nrmse_reward(nrmse: f64, unused: usize) -> f64 {
    1.0 / (1.0 + nrmse + 0.1 * unused as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsNode {
    pub state: PrefixBuilder,
    pub parent: Option<usize>,
    pub legal: Vec<usize>,
    pub priors: Vec<f64>,
    /// Child node per legal slot, once created.
    pub children: Vec<Option<usize>>,
    pub visits: u64,
    pub value_sum: f64,
    pub expanded: bool,
}

impl MctsNode {
    fn new(state: PrefixBuilder, parent: Option<usize>, vocab: &[Token]) -> Self {
        let legal = if state.is_complete() { Vec::new() } else { state.legal(vocab) };
        let n = legal.len();
        Self {
            state,
            parent,
            legal,
            priors: Vec::new(),
            children: vec![None; n],
            visits: 0,
            value_sum: 0.0,
            expanded: false,
        }
    }

    pub fn q(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }

    pub fn terminal(&self) -> bool {
        self.state.is_complete()
    }
}

/// Arena-allocated search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsTree {
    pub nodes: Vec<MctsNode>,
    pub c_puct: f64,
}

impl MctsTree {
    pub fn new(root: PrefixBuilder, vocab: &[Token], c_puct: f64) -> Self {
        Self {
            nodes: vec![MctsNode::new(root, None, vocab)],
            c_puct,
        }
    }

    /// Slot maximizing `Q + c·P·√max(N,1)/(1 + n)`; ties go to the earliest slot.
    pub fn select(&self, node: usize) -> usize {
        let n = &self.nodes[node];
        let sqrt_n = (n.visits.max(1) as f64).sqrt();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..n.legal.len() {
            let (q, visits) = match n.children[k] {
                Some(c) => (self.nodes[c].q(), self.nodes[c].visits),
                None => (0.0, 0),
            };
            let p = n.priors.get(k).copied().unwrap_or(0.0);
            let score = q + self.c_puct * p * sqrt_n / (1.0 + visits as f64);
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        best
    }

    pub fn child(&mut self, node: usize, slot: usize, vocab: &[Token]) -> usize {
        if let Some(c) = self.nodes[node].children[slot] {
            return c;
        }
        let mut s = self.nodes[node].state.clone();
        let tok = vocab[self.nodes[node].legal[slot]].clone();
        s.push(tok).expect("legal token");
        let id = self.nodes.len();
        self.nodes.push(MctsNode::new(s, Some(node), vocab));
        self.nodes[node].children[slot] = Some(id);
        id
    }

    pub fn backup(&mut self, mut node: usize, value: f64) {
        loop {
            self.nodes[node].visits += 1;
            self.nodes[node].value_sum += value;
            match self.nodes[node].parent {
                Some(p) => node = p,
                None => break,
            }
        }
    }

    /// Sum of child visit counts at `node`.
    pub fn child_visits(&self, node: usize) -> u64 {
        self.nodes[node].children.iter().flatten().map(|&c| self.nodes[c].visits).sum()
    }

    /// Most visited slot; ties go to the earliest.
    pub fn most_visited(&self, node: usize) -> Option<usize> {
        let n = &self.nodes[node];
        let mut best: Option<(usize, u64)> = None;
        for (k, c) in n.children.iter().enumerate() {
            let v = c.map_or(0, |c| self.nodes[c].visits);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        best.map(|b| b.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub rule: DecisionRule,
    pub reward: f64,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsResult {
    pub best: DecisionRule,
    pub best_fitness: f64,
    pub archive: Archive,
    pub trace: SearchTrace,
    /// Completed constructions with their rewards, oldest first.
    pub replay: VecDeque<(String, f64)>,
    /// Root child visits at each committed move.
    pub root_visits: Vec<u64>,
    pub proposer_failures: usize,
}

struct Evaluator<'a> {
    ctx: &'a EvalContext,
    fit_ctx: EvalContext,
    cfg: &'a MctsConfig,
    cache: HashMap<String, Evaluated>,
    target_std: f64,
    fit_scale: f64,
    mode: MctsReward,
}

impl<'a> Evaluator<'a> {
    fn new(ctx: &'a EvalContext, cfg: &'a MctsConfig) -> Self {
        let mode = if ctx.golden.is_some() { cfg.reward } else { MctsReward::Fitness };
        let target_std = ctx.golden.as_ref().map_or(1.0, |g| {
            let n = g.len().max(1) as f64;
            let m = g.iter().sum::<f64>() / n;
            let s = (g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        let n = ctx.rows.len().max(1) as f64;
        let reference: f64 = ctx
            .rows
            .iter()
            .map(|r| (r.ref_price - r.cost) * r.curve.demand(r.ref_price))
            .sum::<f64>()
            / n;
        Self {
            ctx,
            fit_ctx: ctx.subsample(cfg.fit_rows),
            cfg,
            cache: HashMap::new(),
            target_std,
            fit_scale: reference.abs().max(1e-9),
            mode,
        }
    }

    fn eval(&mut self, s: &PrefixBuilder) -> Evaluated {
        let key = s.key();
        if let Some(e) = self.cache.get(&key) {
            return e.clone();
        }
        let price = s.to_expr().expect("complete expression");
        let mut rule = DecisionRule::new(self.cfg.gate.clone(), price, 0.0);
        if rule.parameter_count() > 0 && s.tokens.contains(&Token::Param) {
            let kind = match self.mode {
                MctsReward::Nrmse => FitLoss::Rmse,
                MctsReward::Fitness => FitLoss::NegFitness,
            };
            if let Ok((fitted, _)) = fit_parameters(&rule, &self.fit_ctx, kind, &self.cfg.bfgs) {
                rule = fitted;
            }
        }
        let fitness = self.ctx.score(&rule);
        let reward = match self.mode {
            MctsReward::Nrmse => {
                let used = rule.price.features();
                let unused = self.cfg.relevant_features.iter().filter(|f| !used.contains(f)).count();
                let rmse = match (self.ctx.actions(&rule), &self.ctx.golden) {
                    (Ok(a), Some(g)) => {
                        let n = a.len().max(1) as f64;
                        (a.iter().zip(g).map(|(a, g)| (a - g).powi(2)).sum::<f64>() / n).sqrt()
                    }
                    _ => f64::INFINITY,
                };
                nrmse_reward(rmse / self.target_std, unused)
            }
            MctsReward::Fitness => {
                let z = fitness / self.fit_scale;
                if z.is_finite() {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    0.0
                }
            }
        };
        let reward = if reward.is_finite() { reward.clamp(0.0, 1.0) } else { 0.0 };
        let e = Evaluated { rule, reward, fitness };
        self.cache.insert(key, e.clone());
        e
    }
}

/// Labels of the legal tokens, as sent to the proposer.
fn labels(vocab: &[Token], legal: &[usize]) -> Vec<String> {
    legal.iter().map(|&a| vocab[a].to_string()).collect()
}

/// PUCT tree search over prefix constructions; each move spends the
/// simulation budget and commits to the most visited child.
pub fn mcts_search(proposer: &mut dyn Proposer, ctx: &EvalContext, cfg: &MctsConfig) -> MctsResult {
    let features: Vec<String> = ctx.schema.names().to_vec();
    let mut vocab = default_vocab(&features, &cfg.constants, &cfg.unary);
    if cfg.free_constants {
        vocab.push(Token::Param);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = Evaluator::new(ctx, cfg);
    let mut archive = Archive::default();
    let mut trace = SearchTrace::default();
    let mut replay: VecDeque<(String, f64)> = VecDeque::new();
    let mut root_visits = Vec::new();
    let mut failures = 0;
    let mut best_rule = DecisionRule::new(cfg.gate.clone(), ExprNode::constant(1.0), 0.0);

    let record = |ev_out: &Evaluated, key: String, archive: &mut Archive, iteration: usize, replay: &mut VecDeque<(String, f64)>| {
        if ev_out.fitness > archive.fitness() {
            archive.offer(&ev_out.rule, ev_out.fitness, ctx.mae(&ev_out.rule).ok().flatten(), iteration);
        }
        if cfg.replay_capacity > 0 {
            if replay.len() == cfg.replay_capacity {
                replay.pop_front();
            }
            replay.push_back((key, ev_out.reward));
        }
    };

    for it in 1..=cfg.iterations.max(1) {
        let mut tree = MctsTree::new(PrefixBuilder::new(cfg.max_len), &vocab, cfg.c_puct);
        let mut root = 0;
        let mut expand = |tree: &mut MctsTree, node: usize, failures: &mut usize| -> f64 {
            let legal = tree.nodes[node].legal.clone();
            let labels = labels(&vocab, &legal);
            let key = tree.nodes[node].state.key();
            let mut got = None;
            for _ in 0..RETRY_BUDGET {
                if let Ok(v) = proposer.value_and_priors(&key, &labels) {
                    got = Some(v);
                    break;
                }
            }
            let (raw, value) = got.unwrap_or_else(|| {
                *failures += 1;
                (Vec::new(), 0.5)
            });
            let mut p = normalize_priors(&raw, legal.len());
            if cfg.prior_eps > 0.0 && !p.is_empty() {
                let u = 1.0 / p.len() as f64;
                for x in p.iter_mut() {
                    *x = (1.0 - cfg.prior_eps) * *x + cfg.prior_eps * u;
                }
            }
            tree.nodes[node].priors = p;
            tree.nodes[node].expanded = true;
            value.clamp(0.0, 1.0)
        };

        while !tree.nodes[root].terminal() {
            if !tree.nodes[root].expanded {
                expand(&mut tree, root, &mut failures);
            }
            for _ in 0..cfg.simulations.max(1) {
                let mut node = root;
                loop {
                    let slot = tree.select(node);
                    node = tree.child(node, slot, &vocab);
                    if tree.nodes[node].terminal() || !tree.nodes[node].expanded {
                        break;
                    }
                }
                let value = if tree.nodes[node].terminal() {
                    let s = tree.nodes[node].state.clone();
                    let e = ev.eval(&s);
                    record(&e, s.key(), &mut archive, it, &mut replay);
                    e.reward
                } else {
                    let v = expand(&mut tree, node, &mut failures);
                    let mut s = tree.nodes[node].state.clone();
                    while !s.is_complete() {
                        let legal = s.legal(&vocab);
                        let a = legal[rng.random_range(0..legal.len())];
                        s.push(vocab[a].clone()).expect("legal token");
                    }
                    let e = ev.eval(&s);
                    record(&e, s.key(), &mut archive, it, &mut replay);
                    cfg.value_mix * v + (1.0 - cfg.value_mix) * e.reward
                };
                tree.backup(node, value);
            }
            root_visits.push(tree.child_visits(root));
            let slot = tree.most_visited(root).unwrap_or(0);
            root = tree.child(root, slot, &vocab);
        }
        let s = tree.nodes[root].state.clone();
        let e = ev.eval(&s);
        record(&e, s.key(), &mut archive, it, &mut replay);
        if let Some(b) = &archive.best {
            best_rule = b.rule.clone();
        }
        trace.push(it, archive.fitness(), e.fitness, &archive, &best_rule);
    }

    MctsResult {
        best_fitness: archive.fitness(),
        best: best_rule,
        archive,
        trace,
        replay,
        root_visits,
        proposer_failures: failures,
    }
}
