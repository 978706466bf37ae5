use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::memory::{MemoryBank, MemoryEntry};
use super::prompts::{fill, INIT_PROMPT, REFINE_PROMPT};
use super::{generate_rule, Proposer, ProposerError, ProposerMode, ProposerRequest, RETRY_BUDGET};
use crate::dsl::{render, DecisionRule, Lexicon};
use crate::fitness::EvalContext;
use crate::search::Archive;

/// Partition of the context rows into named segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub names: Vec<String>,
    /// Segment index per row.
    pub assignment: Vec<usize>,
}

fn segment_by(ctx: &EvalContext, key: impl Fn(usize) -> String) -> Segmentation {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..ctx.rows.len() {
        let n = index.len();
        index.entry(key(i)).or_insert(n);
    }
    let mut names = vec![String::new(); index.len()];
    for (k, &i) in &index {
        names[i] = k.clone();
    }
    let assignment = (0..ctx.rows.len()).map(|i| index[&key(i)]).collect();
    Segmentation { names, assignment }
}

pub fn segment_by_customer(ctx: &EvalContext) -> Segmentation {
    segment_by(ctx, |i| ctx.rows[i].customer.clone())
}

pub fn segment_by_k1(ctx: &EvalContext) -> Segmentation {
    segment_by(ctx, |i| ctx.rows[i].k1.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLoss {
    pub segment: usize,
    pub loss: f64,
    pub count: usize,
}

/// Mean row loss per segment: distance to golden actions when available,
/// otherwise the negated row contribution.
pub fn segment_losses(ctx: &EvalContext, rule: &DecisionRule, seg: &Segmentation) -> Vec<SegmentLoss> {
    let rows = ctx
        .row_losses(rule)
        .unwrap_or_else(|_| vec![f64::INFINITY; ctx.rows.len()]);
    let mut sum = vec![0.0; seg.names.len()];
    let mut count = vec![0usize; seg.names.len()];
    for (i, l) in rows.iter().enumerate() {
        let s = seg.assignment[i];
        sum[s] += l;
        count[s] += 1;
    }
    (0..seg.names.len())
        .map(|s| SegmentLoss {
            segment: s,
            loss: if count[s] > 0 { sum[s] / count[s] as f64 } else { 0.0 },
            count: count[s],
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-segment feature means and loss quartiles, each scaled by the
/// corresponding global mean magnitude.
fn descriptors(ctx: &EvalContext, seg: &Segmentation, row_losses: &[f64]) -> Vec<Vec<f64>> {
    let d = ctx.schema.len();
    let n = ctx.rows.len().max(1) as f64;
    let mut global = vec![0.0; d];
    for r in &ctx.rows {
        for (g, x) in global.iter_mut().zip(&r.features) {
            *g += x.abs() / n;
        }
    }
    let loss_scale = row_losses.iter().map(|l| l.abs()).filter(|l| l.is_finite()).sum::<f64>() / n + 1e-12;
    (0..seg.names.len())
        .map(|s| {
            let idx: Vec<usize> = (0..ctx.rows.len()).filter(|&i| seg.assignment[i] == s).collect();
            let m = idx.len().max(1) as f64;
            let mut v: Vec<f64> = (0..d)
                .map(|j| idx.iter().map(|&i| ctx.rows[i].features[j]).sum::<f64>() / m / (global[j] + 1e-12))
                .collect();
            let mut ls: Vec<f64> = idx.iter().map(|&i| row_losses[i]).filter(|l| l.is_finite()).collect();
            ls.sort_by(f64::total_cmp);
            v.extend([0.25, 0.5, 0.75].iter().map(|&q| quantile(&ls, q) / loss_scale));
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateConfig {
    /// Segments with loss above this are sent back for refinement.
    pub tau: f64,
    /// Stop once every segment loss is below this; only used with a golden response.
    pub eps: f64,
    pub t_max: usize,
    pub k: usize,
    pub retries: usize,
    pub objective: String,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            eps: 1e-9,
            t_max: 10,
            k: 3,
            retries: RETRY_BUDGET,
            objective: "maximize mean profit per row minus price deviation and complexity penalties".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub round: usize,
    pub max_segment_loss: f64,
    pub archive_best_fitness: f64,
    pub proposal_fitness: f64,
    pub source: String,
}

pub fn iteration_csv(rows: &[IterationRow]) -> String {
    let mut s = String::from("round,max_segment_loss,archive_best_fitness\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.round, r.max_segment_loss, r.archive_best_fitness);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateResult {
    pub rule: DecisionRule,
    pub archive: Archive,
    pub trace: Vec<IterationRow>,
    pub memory: MemoryBank,
    /// `golden-mae` or `negative-fitness`.
    pub loss_source: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct IterateError {
    pub source: ProposerError,
    pub trace: Vec<IterationRow>,
}

fn max_loss(l: &[SegmentLoss]) -> f64 {
    l.iter().map(|s| s.loss).fold(f64::NEG_INFINITY, f64::max)
}

/// Generate, score per segment, refine the failing segments with similar
/// past edits as context, and keep the archive best.
pub fn iterate(
    proposer: &mut dyn Proposer,
    ctx: &EvalContext,
    seg: &Segmentation,
    cfg: &IterateConfig,
) -> Result<IterateResult, IterateError> {
    let lex = Lexicon::new(ctx.schema.names().iter().cloned());
    let features = ctx.schema.names().join(", ");
    let golden = ctx.golden.is_some();
    let stop = |l: &[SegmentLoss]| golden && max_loss(l) < cfg.eps;
    let mut trace = Vec::new();
    let mut archive = Archive::default();
    let mut memory = MemoryBank::default();

    let mut vars = BTreeMap::new();
    vars.insert("features", features.clone());
    vars.insert("objective", cfg.objective.clone());
    let req = ProposerRequest {
        mode: ProposerMode::Init,
        context: fill(INIT_PROMPT, &vars),
        legal_actions: Vec::new(),
    };
    let (mut rule, _) = generate_rule(proposer, &req, &lex, cfg.retries).map_err(|source| IterateError {
        source,
        trace: trace.clone(),
    })?;
    let mut losses = segment_losses(ctx, &rule, seg);
    let f0 = ctx.score(&rule);
    archive.offer(&rule, f0, ctx.mae(&rule).ok().flatten(), 0);
    trace.push(IterationRow {
        round: 0,
        max_segment_loss: max_loss(&losses),
        archive_best_fitness: archive.fitness(),
        proposal_fitness: f0,
        source: render(&rule),
    });

    let mut t = 0;
    while t < cfg.t_max && !stop(&losses) {
        t += 1;
        let rows_before = ctx.row_losses(&rule).unwrap_or_else(|_| vec![f64::INFINITY; ctx.rows.len()]);
        let desc = descriptors(ctx, seg, &rows_before);
        let failing: Vec<&SegmentLoss> = losses.iter().filter(|l| l.loss > cfg.tau).collect();
        let mut seg_text = String::new();
        let mut mem_text = String::new();
        let mut seen = Vec::new();
        for f in &failing {
            let _ = writeln!(seg_text, "{}, {}, {}", seg.names[f.segment], f.loss, f.count);
            for e in memory.topk(&desc[f.segment], cfg.k) {
                let key = (e.segment.clone(), e.round);
                if !seen.contains(&key) {
                    let _ = writeln!(mem_text, "[{}] {} -> {} (loss change {})", e.segment, e.before, e.after, e.delta);
                    seen.push(key);
                }
            }
        }
        if seg_text.is_empty() {
            seg_text.push_str("(none)\n");
        }
        if mem_text.is_empty() {
            mem_text.push_str("(none)\n");
        }
        vars.insert("rule", render(&rule));
        vars.insert("failing_segments", seg_text);
        vars.insert("memories", mem_text);
        let req = ProposerRequest {
            mode: ProposerMode::Refine,
            context: fill(REFINE_PROMPT, &vars),
            legal_actions: Vec::new(),
        };
        let (next, _) = generate_rule(proposer, &req, &lex, cfg.retries).map_err(|source| IterateError {
            source,
            trace: trace.clone(),
        })?;
        let next_losses = segment_losses(ctx, &next, seg);
        for (a, b) in losses.iter().zip(&next_losses) {
            let delta = b.loss - a.loss;
            if delta.is_finite() && delta.abs() > 1e-12 {
                memory.push(MemoryEntry {
                    segment: seg.names[a.segment].clone(),
                    descriptor: desc[a.segment].clone(),
                    before: render(&rule),
                    after: render(&next),
                    delta,
                    round: t,
                });
            }
        }
        let f = ctx.score(&next);
        archive.offer(&next, f, ctx.mae(&next).ok().flatten(), t);
        rule = next;
        losses = next_losses;
        trace.push(IterationRow {
            round: t,
            max_segment_loss: max_loss(&losses),
            archive_best_fitness: archive.fitness(),
            proposal_fitness: f,
            source: render(&rule),
        });
    }

    let best = archive.best.as_ref().map(|b| b.rule.clone()).unwrap_or(rule);
    Ok(IterateResult {
        rule: best,
        archive,
        trace,
        memory,
        loss_source: if golden { "golden-mae" } else { "negative-fitness" }.into(),
    })
}
