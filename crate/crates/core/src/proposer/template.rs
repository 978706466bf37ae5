use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bfgs::{fit_parameters, BfgsOptions, FitLoss, FitOutcome};
use super::prompts::{fill, INIT_PROMPT, RESTRUCTURE_PROMPT};
use super::{generate_rule, Proposer, ProposerError, ProposerMode, ProposerRequest, RETRY_BUDGET};
use crate::dsl::{render, DecisionRule, ExprNode, Lexicon, Region};
use crate::fitness::EvalContext;
use crate::search::Archive;

/// `Σ α_j·h_j(x) + Σ β_p·1(x ∈ R_p)` with frozen basis functions and regions.
/// Parameters are ordered α then β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureTemplate {
    pub basis: Vec<ExprNode>,
    pub regions: Vec<Region>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

fn freeze(e: &ExprNode) -> ExprNode {
    match e {
        ExprNode::Const { value, .. } => ExprNode::fixed(*value),
        ExprNode::Feature(f) => ExprNode::Feature(f.clone()),
        ExprNode::Unary(op, a) => ExprNode::unary(*op, freeze(a)),
        ExprNode::Binary(op, a, b) => ExprNode::binary(*op, freeze(a), freeze(b)),
        ExprNode::Indicator(r, a) => ExprNode::indicator(r.clone(), freeze(a)),
    }
}

impl StructureTemplate {
    pub fn parameter_count(&self) -> usize {
        self.basis.len() + self.regions.len()
    }

    /// Always-on gate with the template as price.
    pub fn to_rule(&self, theta: &[f64]) -> DecisionRule {
        let mut terms = Vec::with_capacity(self.parameter_count());
        for (j, h) in self.basis.iter().enumerate() {
            let a = theta.get(j).copied().unwrap_or(1.0);
            terms.push(ExprNode::mul(ExprNode::constant(a), freeze(h)));
        }
        for (p, r) in self.regions.iter().enumerate() {
            let b = theta.get(self.basis.len() + p).copied().unwrap_or(0.0);
            terms.push(ExprNode::indicator(r.clone(), ExprNode::constant(b)));
        }
        let price = terms
            .into_iter()
            .reduce(ExprNode::add)
            .unwrap_or_else(|| ExprNode::fixed(0.0));
        DecisionRule::new(ExprNode::fixed(1.0), price, 0.0)
    }

    pub fn fit(
        &self,
        ctx: &EvalContext,
        kind: FitLoss,
        opts: &BfgsOptions,
    ) -> Result<(DecisionRule, FitOutcome), super::BfgsError> {
        let mut init = vec![1.0; self.basis.len()];
        init.extend(std::iter::repeat_n(0.0, self.regions.len()));
        let opts = BfgsOptions {
            bounds: self.bounds.clone().or_else(|| opts.bounds.clone()),
            ..opts.clone()
        };
        fit_parameters(&self.to_rule(&init), ctx, kind, &opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseRound {
    pub round: usize,
    pub source: String,
    pub loss: f64,
    pub converged: bool,
    pub restructured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseResult {
    pub rule: DecisionRule,
    pub loss: f64,
    pub archive: Archive,
    pub rounds: Vec<TwoPhaseRound>,
}

/// Alternates proposer structure generation with BFGS parameter fitting until
/// the fitted loss reaches `xi` or the round budget runs out.
pub fn two_phase(
    proposer: &mut dyn Proposer,
    ctx: &EvalContext,
    xi: f64,
    rounds: usize,
    opts: &BfgsOptions,
    kind: FitLoss,
) -> Result<TwoPhaseResult, ProposerError> {
    let lex = Lexicon::new(ctx.schema.names().iter().cloned());
    let opts = BfgsOptions { xi, ..opts.clone() };
    let mut vars = BTreeMap::new();
    vars.insert("features", ctx.schema.names().join(", "));
    vars.insert(
        "objective",
        match kind {
            FitLoss::NegFitness => "maximize the fitness",
            FitLoss::Mae => "minimize mean absolute error to the reference prices",
            FitLoss::Rmse => "minimize root mean squared error to the reference prices",
        }
        .to_string(),
    );
    let mut archive = Archive::default();
    let mut best: Option<(DecisionRule, f64)> = None;
    let mut log = Vec::new();
    let mut signal = None;

    for round in 1..=rounds.max(1) {
        let (mode, template) = match &signal {
            None => (ProposerMode::Init, INIT_PROMPT),
            Some(_) => (ProposerMode::Restructure, RESTRUCTURE_PROMPT),
        };
        let req = ProposerRequest {
            mode,
            context: fill(template, &vars),
            legal_actions: Vec::new(),
        };
        let (rule, _) = generate_rule(proposer, &req, &lex, RETRY_BUDGET)?;
        let (fitted, out) = match fit_parameters(&rule, ctx, kind, &opts) {
            Ok(v) => v,
            Err(_) => {
                log.push(TwoPhaseRound {
                    round,
                    source: render(&rule),
                    loss: f64::INFINITY,
                    converged: false,
                    restructured: true,
                });
                continue;
            }
        };
        archive.offer(&fitted, ctx.score(&fitted), ctx.mae(&fitted).ok().flatten(), round);
        if best.as_ref().is_none_or(|(_, l)| out.loss < *l) {
            best = Some((fitted.clone(), out.loss));
        }
        log.push(TwoPhaseRound {
            round,
            source: render(&fitted),
            loss: out.loss,
            converged: out.converged,
            restructured: out.restructure.is_some(),
        });
        match out.restructure {
            None => break,
            Some(s) => {
                vars.insert("loss", s.loss.to_string());
                vars.insert("tree", s.prefix.join(" "));
                vars.insert(
                    "gradient",
                    s.gradient.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", "),
                );
                signal = Some(());
            }
        }
    }

    let (rule, loss) = best.ok_or_else(|| ProposerError::Protocol("no proposal could be fitted".into()))?;
    Ok(TwoPhaseResult {
        rule,
        loss,
        archive,
        rounds: log,
    })
}
