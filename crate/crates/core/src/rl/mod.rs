//! Q-learning over prefix construction of price expressions.

mod buffer;
mod checkpoint;
mod mlp;

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, Transition};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, MAGIC, VERSION};
pub use mlp::{gradient_check, Adam, BatchCache, Cache, Mlp};

use crate::dsl::{BinaryOp, DecisionRule, ExprNode, UnaryOp};
use crate::fitness::EvalContext;
use crate::grammar::{default_vocab, PrefixBuilder, Token};
use crate::search::Archive;

pub const STATE_DIM: usize = 20;

pub type BuildState = PrefixBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    TerminalFitness,
    ShapedMae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub lr_q: f64,
    pub lr_pi: f64,
    pub gamma: f64,
    pub eps_init: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    pub batch: usize,
    pub episodes: usize,
    pub tau: f64,
    pub sync_every: usize,
    /// Environment steps between gradient updates.
    pub update_every: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub max_len: usize,
    pub reward_mode: RewardMode,
    /// Weights of (ΔMAE, complexity incentive, validity bonus).
    pub shaped_weights: (f64, f64, f64),
    pub policy_head: bool,
    pub constants: Vec<f64>,
    pub unary: Vec<UnaryOp>,
    /// Gate attached to every constructed price.
    pub gate: ExprNode,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            lr_q: 1e-3,
            lr_pi: 1e-4,
            gamma: 0.95,
            eps_init: 1.0,
            eps_min: 0.1,
            eps_decay: 0.995,
            batch: 128,
            episodes: 5000,
            tau: 0.01,
            sync_every: 20,
            update_every: 1,
            buffer_capacity: 10_000,
            hidden: vec![256],
            max_len: 20,
            reward_mode: RewardMode::TerminalFitness,
            shaped_weights: (1.0, 0.01, 0.1),
            policy_head: false,
            constants: vec![1.0, 2.0],
            unary: Vec::new(),
            gate: ExprNode::fixed(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RlError {
    #[error("invalid RL config: {0}")]
    Config(String),
    #[error("action {0} is not legal in this state")]
    Illegal(usize),
    #[error("shaped reward needs a golden response")]
    MissingGolden,
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::Config("gamma must lie in [0,1)".into()));
        }
        if self.eps_min > self.eps_init {
            return Err(RlError::Config("eps_min exceeds eps_init".into()));
        }
        if self.max_len == 0 || self.batch == 0 {
            return Err(RlError::Config("max_len and batch must be positive".into()));
        }
        Ok(())
    }

    /// ε after `episodes` completed episodes.
    pub fn epsilon_after(&self, episodes: usize) -> f64 {
        let mut e = self.eps_init;
        for _ in 0..episodes {
            e = (e * self.eps_decay).max(self.eps_min);
        }
        e
    }
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    reward: f64,
    fitness: f64,
    mae: Option<f64>,
}

/// Deterministic construction MDP over a fixed vocabulary.
pub struct ExprEnv<'a> {
    pub ctx: &'a EvalContext,
    pub vocab: Vec<Token>,
    pub max_len: usize,
    gate: ExprNode,
    mode: RewardMode,
    weights: (f64, f64, f64),
    base_fitness: f64,
    base_mae: Option<f64>,
    cache: HashMap<String, Scored>,
}

impl<'a> ExprEnv<'a> {
    pub fn new(ctx: &'a EvalContext, cfg: &RlConfig) -> Result<Self, RlError> {
        let features: Vec<String> = ctx.schema.names().to_vec();
        let vocab = default_vocab(&features, &cfg.constants, &cfg.unary);
        let base = baseline_rule(ctx, &cfg.gate);
        if cfg.reward_mode == RewardMode::ShapedMae && ctx.golden.is_none() {
            return Err(RlError::MissingGolden);
        }
        Ok(Self {
            ctx,
            vocab,
            max_len: cfg.max_len,
            gate: cfg.gate.clone(),
            mode: cfg.reward_mode,
            weights: cfg.shaped_weights,
            base_fitness: ctx.score(&base),
            base_mae: ctx.mae(&base).ok().flatten(),
            cache: HashMap::new(),
        })
    }

    pub fn reset(&self) -> BuildState {
        PrefixBuilder::new(self.max_len)
    }

    pub fn legal_actions(&self, s: &BuildState) -> Vec<usize> {
        s.legal(&self.vocab)
    }

    pub fn rule_of(&self, s: &BuildState) -> Option<DecisionRule> {
        s.to_expr().ok().map(|price| DecisionRule::new(self.gate.clone(), price, 0.0))
    }

    fn score(&mut self, s: &BuildState) -> Scored {
        let key = s.key();
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        let rule = self.rule_of(s).expect("complete state");
        let fitness = self.ctx.score(&rule);
        let mae = self.ctx.mae(&rule).ok().flatten();
        let reward = match self.mode {
            RewardMode::TerminalFitness => {
                let scale = if self.base_fitness.is_finite() && self.base_fitness.abs() > 1e-9 {
                    self.base_fitness.abs()
                } else {
                    1.0
                };
                (fitness / scale).clamp(-10.0, 10.0)
            }
            RewardMode::ShapedMae => {
                let (w_mae, w_cx, w_valid) = self.weights;
                let base = self.base_mae.unwrap_or(0.0).max(1e-9);
                let m = mae.unwrap_or(base);
                let valid = fitness.is_finite() && m.is_finite();
                let improvement = ((base - m) / base).clamp(-10.0, 10.0);
                let cx = 1.0 - rule.complexity() / (2.0 * self.max_len as f64);
                w_mae * improvement + w_cx * cx + if valid { w_valid } else { 0.0 }
            }
        };
        let out = Scored { reward, fitness, mae };
        self.cache.insert(key, out);
        out
    }

    /// Deterministic successor; the reward is zero except on completion.
    pub fn step(&mut self, s: &BuildState, a: usize) -> Result<(BuildState, f64, bool), RlError> {
        let tok = self.vocab.get(a).ok_or(RlError::Illegal(a))?.clone();
        let mut next = s.clone();
        next.push(tok).map_err(|_| RlError::Illegal(a))?;
        if next.is_complete() {
            let r = self.score(&next).reward;
            Ok((next, r, true))
        } else {
            Ok((next, 0.0, false))
        }
    }

    pub fn features(&self, s: &BuildState) -> [f64; STATE_DIM] {
        state_features(s, &self.vocab)
    }
}

/// Price equal to `ref_price` when present, else the first feature.
pub fn baseline_rule(ctx: &EvalContext, gate: &ExprNode) -> DecisionRule {
    let names = ctx.schema.names();
    let f = if names.iter().any(|n| n == "ref_price") {
        ExprNode::feature("ref_price")
    } else if let Some(n) = names.first() {
        ExprNode::feature(n.clone())
    } else {
        ExprNode::constant(1.0)
    };
    DecisionRule::new(gate.clone(), f, 0.0)
}

/// Fixed-length summary of a partial prefix expression.
pub fn state_features(s: &BuildState, vocab: &[Token]) -> [f64; STATE_DIM] {
    let m = s.max_len.max(1) as f64;
    let n = s.tokens.len();
    let mut x = [0.0; STATE_DIM];
    x[0] = s.open as f64 / m;
    x[1] = n as f64 / m;
    x[2] = s.remaining() as f64 / m;
    let denom = n.max(1) as f64;
    let mut complexity = 0.0;
    let mut distinct: Vec<&str> = Vec::new();
    for t in &s.tokens {
        match t {
            Token::Bin(op) => {
                let k = match op {
                    BinaryOp::Add => 3,
                    BinaryOp::Sub => 4,
                    BinaryOp::Mul => 5,
                    BinaryOp::Div => 6,
                    BinaryOp::Pow => 7,
                };
                x[k] += 1.0 / denom;
                complexity += 2.0;
            }
            Token::Un(_) => {
                x[8] += 1.0 / denom;
                complexity += 2.0;
            }
            Token::Feat(f) => {
                x[9] += 1.0 / denom;
                complexity += 1.0;
                if !distinct.contains(&f.as_str()) {
                    distinct.push(f);
                }
            }
            Token::Const(_) | Token::Param => {
                x[10] += 1.0 / denom;
                complexity += 1.0;
            }
        }
    }
    x[11] = complexity / (2.0 * m);
    x[12] = if n == 0 { 1.0 } else { 0.0 };
    match s.tokens.last() {
        Some(t) if t.arity() == 2 => x[13] = 1.0,
        Some(t) if t.arity() == 1 => x[14] = 1.0,
        Some(_) => x[15] = 1.0,
        None => {}
    }
    // Depth of the next slot: open slots approximate the stack height.
    let mut depth = 0usize;
    let mut stack: Vec<usize> = Vec::new();
    for t in &s.tokens {
        while stack.last() == Some(&0) {
            stack.pop();
        }
        if let Some(top) = stack.last_mut() {
            *top -= 1;
        }
        if t.arity() > 0 {
            stack.push(t.arity());
        }
        depth = depth.max(stack.len());
    }
    x[16] = depth as f64 / m;
    let n_feat = vocab.iter().filter(|t| matches!(t, Token::Feat(_))).count().max(1);
    x[17] = distinct.len() as f64 / n_feat as f64;
    x[18] = 1.0;
    let since_leaf = s.tokens.iter().rev().take_while(|t| !t.is_leaf()).count();
    x[19] = since_leaf as f64 / m;
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub epsilon: f64,
    pub reward: f64,
    pub mae: Option<f64>,
    pub td_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTrace {
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
}

impl RlTrace {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\nepisode,epsilon,reward,mae,td_loss\n", self.seed);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.episode,
                r.epsilon,
                r.reward,
                r.mae.map(|m| m.to_string()).unwrap_or_default(),
                r.td_loss.map(|m| m.to_string()).unwrap_or_default()
            );
        }
        s
    }
}

pub struct RlResult {
    pub greedy: DecisionRule,
    pub greedy_fitness: f64,
    pub archive: Archive,
    pub trace: RlTrace,
    pub q: Mlp,
    pub policy: Option<Mlp>,
}

impl RlResult {
    /// Greedy rollout unless an archived rule scored strictly higher.
    pub fn best(&self) -> (DecisionRule, f64) {
        match &self.archive.best {
            Some(b) if b.fitness > self.greedy_fitness => (b.rule.clone(), b.fitness),
            _ => (self.greedy.clone(), self.greedy_fitness),
        }
    }
}

fn argmax_masked(values: &[f64], legal: &[usize]) -> usize {
    let mut best = legal[0];
    for &a in legal {
        if values[a] > values[best] {
            best = a;
        }
    }
    best
}

fn softmax_masked(z: &[f64], legal: &[usize]) -> Vec<f64> {
    let mx = legal.iter().map(|&a| z[a]).fold(f64::NEG_INFINITY, f64::max);
    let mut p = vec![0.0; z.len()];
    let mut s = 0.0;
    for &a in legal {
        p[a] = (z[a] - mx).exp();
        s += p[a];
    }
    for &a in legal {
        p[a] /= s;
    }
    p
}

/// Greedy rollout under `net`, restricted to legal actions.
pub fn greedy_rollout(env: &mut ExprEnv<'_>, net: &Mlp) -> Option<DecisionRule> {
    let mut s = env.reset();
    while !s.is_complete() {
        let legal = env.legal_actions(&s);
        if legal.is_empty() {
            return None;
        }
        let q = net.forward(&env.features(&s));
        let a = argmax_masked(&q, &legal);
        s = env.step(&s, a).ok()?.0;
    }
    env.rule_of(&s)
}

/// ε-greedy collection, TD(0) updates on uniform batches, soft target sync.
pub fn train(cfg: &RlConfig, ctx: &EvalContext) -> Result<RlResult, RlError> {
    cfg.validate()?;
    let mut env = ExprEnv::new(ctx, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_actions = env.vocab.len();
    let mut layers = vec![STATE_DIM];
    layers.extend(cfg.hidden.iter().copied());
    layers.push(n_actions);
    let mut q = Mlp::new(&layers, &mut rng);
    let mut target = q.clone();
    let mut opt = Adam::new(q.params.len(), cfg.lr_q);
    let mut policy = cfg.policy_head.then(|| Mlp::new(&layers, &mut rng));
    let mut opt_pi = policy.as_ref().map(|p| Adam::new(p.params.len(), cfg.lr_pi));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut archive = Archive::default();
    let mut eps = cfg.eps_init;
    let mut steps = 0usize;
    let mut trace = RlTrace {
        seed: cfg.seed,
        rows: Vec::with_capacity(cfg.episodes),
    };
    let mut grad = vec![0.0; q.params.len()];
    let mut bcache = BatchCache::default();

    for ep in 1..=cfg.episodes {
        let mut s = env.reset();
        let mut reward = 0.0;
        let mut losses = Vec::new();
        while !s.is_complete() {
            let legal = env.legal_actions(&s);
            let x = env.features(&s);
            let a = if rng.random::<f64>() < eps {
                legal[rng.random_range(0..legal.len())]
            } else if let Some(p) = &policy {
                argmax_masked(&p.forward(&x), &legal)
            } else {
                argmax_masked(&q.forward(&x), &legal)
            };
            let key = s.key();
            let (next, r, done) = env.step(&s, a)?;
            let next_legal = if done { Vec::new() } else { env.legal_actions(&next) };
            buffer.push(
                key,
                Transition {
                    state: x.to_vec(),
                    action: a,
                    legal: legal.clone(),
                    reward: r,
                    next_state: env.features(&next).to_vec(),
                    next_legal,
                    terminal: done,
                },
            );
            reward += r;
            s = next;
            steps += 1;

            if buffer.len() >= cfg.batch.min(buffer.capacity()) && !buffer.is_empty() && steps % cfg.update_every.max(1) == 0 {
                let batch = buffer.sample(cfg.batch, &mut rng);
                grad.iter_mut().for_each(|g| *g = 0.0);
                let bn = batch.len() as f64;
                let xs = DMatrix::from_fn(batch.len(), STATE_DIM, |i, j| batch[i].state[j]);
                let xn = DMatrix::from_fn(batch.len(), STATE_DIM, |i, j| batch[i].next_state[j]);
                let qn = target.forward_batch(xn, &mut bcache);
                let out = q.forward_batch(xs, &mut bcache);
                let mut dout = DMatrix::zeros(batch.len(), n_actions);
                let mut loss = 0.0;
                for (i, t) in batch.iter().enumerate() {
                    let y = if t.terminal || t.next_legal.is_empty() {
                        t.reward
                    } else {
                        t.reward + cfg.gamma * t.next_legal.iter().map(|&a| qn[(i, a)]).fold(f64::NEG_INFINITY, f64::max)
                    };
                    let err = out[(i, t.action)] - y;
                    loss += err * err / bn;
                    dout[(i, t.action)] = 2.0 * err / bn;
                }
                q.backward_batch(&bcache, dout, &mut grad);
                opt.step(&mut q.params, &grad);
                losses.push(loss);

                if let (Some(p), Some(o)) = (policy.as_mut(), opt_pi.as_mut()) {
                    let mut g = vec![0.0; p.params.len()];
                    let mut pc = Cache::default();
                    for t in &batch {
                        let legal = &t.legal;
                        let qv = q.forward(&t.state);
                        let z = p.forward_cached(&t.state, &mut pc);
                        let pi = softmax_masked(&z, legal);
                        let eq: f64 = legal.iter().map(|&a| pi[a] * qv[a]).sum();
                        let dout: Vec<f64> = (0..n_actions).map(|a| -pi[a] * (qv[a] - eq) / bn).collect();
                        p.backward(&pc, &dout, &mut g);
                    }
                    o.step(&mut p.params, &g);
                }
            }
            if cfg.sync_every > 0 && steps % cfg.sync_every == 0 {
                target.soft_update_from(&q, cfg.tau);
            }
        }
        let sc = env.score(&s);
        if let Some(rule) = env.rule_of(&s) {
            if sc.fitness > archive.fitness() {
                archive.offer(&rule, sc.fitness, sc.mae, ep);
            }
        }
        eps = (eps * cfg.eps_decay).max(cfg.eps_min);
        trace.rows.push(EpisodeRow {
            episode: ep,
            epsilon: eps,
            reward,
            mae: sc.mae,
            td_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        });
    }

    let greedy = greedy_rollout(&mut env, &q).unwrap_or_else(|| baseline_rule(ctx, &cfg.gate));
    let greedy_fitness = ctx.score(&greedy);
    Ok(RlResult {
        greedy,
        greedy_fitness,
        archive,
        trace,
        q,
        policy,
    })
}
