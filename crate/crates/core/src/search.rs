//! Bookkeeping shared by the search backends.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsl::{render, DecisionRule};
use crate::fitness::{EvalContext, FitnessError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub rule: DecisionRule,
    pub fitness: f64,
    pub mae: Option<f64>,
    pub iteration: usize,
}

/// Best-so-far rule. A candidate replaces the incumbent only when its fitness
/// strictly improves and, when both carry a golden distance, that distance does
/// not grow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub best: Option<ArchiveEntry>,
    pub accepted: usize,
    /// Every accepted entry in order.
    #[serde(default)]
    pub history: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn offer(&mut self, rule: &DecisionRule, fitness: f64, mae: Option<f64>, iteration: usize) -> bool {
        if !fitness.is_finite() {
            return false;
        }
        let accept = match &self.best {
            None => true,
            Some(b) => {
                fitness > b.fitness
                    && match (mae, b.mae) {
                        (Some(m), Some(bm)) => m <= bm,
                        _ => true,
                    }
            }
        };
        if accept {
            let e = ArchiveEntry {
                rule: rule.clone(),
                fitness,
                mae,
                iteration,
            };
            self.history.push(e.clone());
            self.best = Some(e);
            self.accepted += 1;
        }
        accept
    }

    /// Scores the rule against the context before offering it.
    pub fn offer_scored(&mut self, ctx: &EvalContext, rule: &DecisionRule, iteration: usize) -> Result<bool, FitnessError> {
        let f = ctx.fitness(rule)?;
        let mae = ctx.mae(rule)?;
        Ok(self.offer(rule, f, mae, iteration))
    }

    pub fn fitness(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.fitness)
    }

    pub fn mae(&self) -> Option<f64> {
        self.best.as_ref().and_then(|b| b.mae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    /// Best fitness reported for this step.
    pub best: f64,
    pub mean: f64,
    pub archive_best: f64,
    pub archive_mae: Option<f64>,
    pub best_rule: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rows: Vec<TraceRow>,
}

impl SearchTrace {
    pub fn push(&mut self, generation: usize, best: f64, mean: f64, archive: &Archive, best_rule: &DecisionRule) {
        self.rows.push(TraceRow {
            generation,
            best,
            mean,
            archive_best: archive.fitness(),
            archive_mae: archive.mae(),
            best_rule: render(best_rule),
        });
    }

    pub fn best(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best).collect()
    }

    pub fn archive_mae(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.archive_mae).collect()
    }

    /// `generation,best,mean` followed by the archive columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("generation,best,mean,archive_best,archive_mae\n");
        for r in &self.rows {
            let mae = r.archive_mae.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", r.generation, r.best, r.mean, r.archive_best, mae);
        }
        s
    }
}

pub(crate) fn mean_finite(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NEG_INFINITY
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
