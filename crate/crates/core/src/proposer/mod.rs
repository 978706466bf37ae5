//! Proposer-guided search: reflective refinement, PUCT tree search and
//! structure/parameter decoupling.

mod bfgs;
mod http;
mod iterate;
mod mcts;
mod memory;
mod prompts;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bfgs::{fit_parameters, minimize, numeric_gradient, BfgsError, BfgsOptions, FitLoss, FitOutcome, RestructureSignal};
pub use http::{HttpProposer, PROPOSER_URL_ENV};
pub use iterate::{iteration_csv, iterate, segment_by_customer, segment_by_k1, segment_losses, IterateConfig, IterateError, IterateResult, IterationRow, SegmentLoss, Segmentation};
pub use mcts::{mcts_search, nrmse_reward, MctsConfig, MctsNode, MctsResult, MctsReward, MctsTree};
pub use memory::{cosine, MemoryBank, MemoryEntry};
pub use prompts::{fill, INIT_PROMPT, REFINE_PROMPT, RESTRUCTURE_PROMPT, SUMMARY_PROMPT};
pub use template::{two_phase, StructureTemplate, TwoPhaseResult, TwoPhaseRound};

use crate::dsl::{parse, DecisionRule, Lexicon, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposerMode {
    Init,
    Refine,
    Summary,
    Restructure,
    Priors,
}

/// Wire request: `{mode, context, legal_actions}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerRequest {
    pub mode: ProposerMode,
    pub context: String,
    #[serde(default)]
    pub legal_actions: Vec<String>,
}

/// Wire response: either `{rule_source}` or `{priors, value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProposerResponse {
    Rule { rule_source: String },
    Priors { priors: BTreeMap<String, f64>, value: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum ProposerError {
    #[error("proposer transport failed: {0}")]
    Transport(String),
    #[error("proposer returned an unexpected response: {0}")]
    Protocol(String),
    #[error("proposer output did not parse after {attempts} attempts: {last}")]
    Unparseable { attempts: usize, last: ParseError },
}

pub trait Proposer {
    /// Rule source for the given context document.
    fn generate(&mut self, req: &ProposerRequest) -> Result<String, ProposerError>;

    /// Prior weights over `legal` (aligned by index) and a value in [0, 1].
    fn value_and_priors(&mut self, state: &str, legal: &[String]) -> Result<(Vec<f64>, f64), ProposerError>;
}

pub const RETRY_BUDGET: usize = 3;

/// Asks for rule text until it parses, at most `attempts` times.
pub fn generate_rule(
    p: &mut dyn Proposer,
    req: &ProposerRequest,
    lex: &Lexicon,
    attempts: usize,
) -> Result<(DecisionRule, String), ProposerError> {
    let mut last = ParseError::Empty;
    for _ in 0..attempts.max(1) {
        let src = p.generate(req)?;
        match parse(&src, lex) {
            Ok(out) => return Ok((out.rule, src)),
            Err(e) => last = e,
        }
    }
    Err(ProposerError::Unparseable {
        attempts: attempts.max(1),
        last,
    })
}

/// Priors renormalized over the legal set; anything unusable becomes uniform.
pub fn normalize_priors(raw: &[f64], n: usize) -> Vec<f64> {
    let ok = raw.len() == n && raw.iter().all(|p| p.is_finite() && *p >= 0.0);
    let s: f64 = if ok { raw.iter().sum() } else { 0.0 };
    if n == 0 {
        Vec::new()
    } else if s > 0.0 {
        raw.iter().map(|p| p / s).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Emits a fixed rule and uniform priors.
#[derive(Debug, Clone)]
pub struct UniformProposer {
    pub rule_source: String,
    pub value: f64,
}

impl Default for UniformProposer {
    fn default() -> Self {
        Self {
            rule_source: "price: ref_price".into(),
            value: 0.5,
        }
    }
}

impl Proposer for UniformProposer {
    fn generate(&mut self, _req: &ProposerRequest) -> Result<String, ProposerError> {
        Ok(self.rule_source.clone())
    }

    fn value_and_priors(&mut self, _state: &str, legal: &[String]) -> Result<(Vec<f64>, f64), ProposerError> {
        Ok((vec![1.0 / legal.len().max(1) as f64; legal.len()], self.value))
    }
}

/// Replays a fixed list of sources, repeating the last one when exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProposer {
    pub script: Vec<String>,
    pub calls: usize,
    pub requests: Vec<ProposerRequest>,
}

impl ScriptedProposer {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            calls: 0,
            requests: Vec::new(),
        }
    }
}

impl Proposer for ScriptedProposer {
    fn generate(&mut self, req: &ProposerRequest) -> Result<String, ProposerError> {
        self.requests.push(req.clone());
        let i = self.calls.min(self.script.len().saturating_sub(1));
        self.calls += 1;
        self.script
            .get(i)
            .cloned()
            .ok_or_else(|| ProposerError::Protocol("empty script".into()))
    }

    fn value_and_priors(&mut self, _state: &str, legal: &[String]) -> Result<(Vec<f64>, f64), ProposerError> {
        Ok((vec![1.0 / legal.len().max(1) as f64; legal.len()], 0.5))
    }
}

/// Cycles through profit-seeking pricing templates of the form
/// `cost + k / elasticity`, then markups on cost.
#[derive(Debug, Clone)]
pub struct TemplateProposer {
    pub templates: Vec<String>,
    pub calls: usize,
}

impl Default for TemplateProposer {
    fn default() -> Self {
        let mut templates: Vec<String> = [1.0, 0.8, 1.2, 0.6, 1.5]
            .iter()
            .map(|k| format!("gate: fixed(1); price: cost + {k} / elasticity"))
            .collect();
        templates.extend(
            [1.2, 1.5, 2.0]
                .iter()
                .map(|m| format!("gate: fixed(1); price: cost * {m}")),
        );
        templates.push("gate: fixed(1); price: ref_price".into());
        Self { templates, calls: 0 }
    }
}

impl Proposer for TemplateProposer {
    fn generate(&mut self, _req: &ProposerRequest) -> Result<String, ProposerError> {
        let t = self.templates[self.calls % self.templates.len()].clone();
        self.calls += 1;
        Ok(t)
    }

    fn value_and_priors(&mut self, _state: &str, legal: &[String]) -> Result<(Vec<f64>, f64), ProposerError> {
        Ok((vec![1.0 / legal.len().max(1) as f64; legal.len()], 0.5))
    }
}
