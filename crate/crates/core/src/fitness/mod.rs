//! Demand models, the fitness objective and constraint checks.

mod constraints;
mod demand;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constraints::{check_constraints, Basket, BasketItem, ConstraintConfig, CustomerViolation, ViolationReport};
pub use demand::{DemandCurve, DemandModel, ExponentialElasticityModel, ExponentialParams, RegionalLinearDemand, RegionalPair};

use crate::dsl::{BoundRule, Decision, DecisionRule, EvalError, PriceMode, Schema};
use crate::ingest::MarketDataset;

/// Fixed features every row carries, ahead of the customer features.
pub const BASE_FEATURES: [&str; 8] = [
    "cost",
    "ref_price",
    "hist_price",
    "base_demand",
    "elasticity",
    "scale",
    "aov",
    "forecast",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMode {
    #[default]
    Profit,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitnessConfig {
    pub eta: f64,
    pub lambda: f64,
    /// Overrides the rule's own threshold when set.
    pub tau: Option<f64>,
    pub mode: FitnessMode,
    pub price_mode: PriceMode,
    pub constraints: ConstraintConfig,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            lambda: 0.1,
            tau: None,
            mode: FitnessMode::Profit,
            price_mode: PriceMode::Absolute,
            constraints: ConstraintConfig::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("length mismatch: {actions} actions vs {golden} golden values")]
    LengthMismatch { actions: usize, golden: usize },
    #[error("regression mode needs a golden response")]
    MissingGolden,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub customer: String,
    pub material: String,
    pub k1: String,
    pub cost: f64,
    pub ref_price: f64,
    pub curve: DemandCurve,
    pub features: Vec<f64>,
}

/// Immutable evaluation set: feature rows with their demand curves.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub schema: Schema,
    pub rows: Vec<EvalRow>,
    pub cfg: FitnessConfig,
    pub golden: Option<Vec<f64>>,
    /// Historical average spend per customer, for the spend band.
    pub history: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub decision: Decision,
    pub quantity: f64,
    pub profit: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub mode: FitnessMode,
    pub total: f64,
    pub profit_term: f64,
    pub deviation_penalty: f64,
    pub complexity_penalty: f64,
    pub complexity: f64,
    pub node_count: usize,
    pub depth: usize,
    pub sales_volume: f64,
    pub profit: f64,
    pub units: f64,
    pub stocked: usize,
    pub rows: usize,
    pub mae: Option<f64>,
    pub violations: ViolationReport,
}

pub const REPORT_CSV_HEADER: &str = "mode,total,profit_term,deviation_penalty,complexity_penalty,complexity,node_count,depth,sales_volume,profit,units,stocked,rows,mae,violating_customers";

impl FitnessReport {
    pub fn csv_row(&self) -> String {
        let mode = match self.mode {
            FitnessMode::Profit => "profit",
            FitnessMode::Regression => "regression",
        };
        format!(
            "{mode},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.total,
            self.profit_term,
            self.deviation_penalty,
            self.complexity_penalty,
            self.complexity,
            self.node_count,
            self.depth,
            self.sales_volume,
            self.profit,
            self.units,
            self.stocked,
            self.rows,
            self.mae.map(|m| m.to_string()).unwrap_or_default(),
            self.violations.violating
        )
    }
}

/// Mean absolute difference; unstocked rows are expected to carry 0.
pub fn mae_vs_golden(actions: &[f64], golden: &[f64]) -> Result<f64, FitnessError> {
    if actions.len() != golden.len() {
        return Err(FitnessError::LengthMismatch {
            actions: actions.len(),
            golden: golden.len(),
        });
    }
    if actions.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = actions.iter().zip(golden).map(|(a, g)| (a - g).abs()).sum();
    Ok(s / actions.len() as f64)
}

/// Feature names used for rows built from a dataset.
pub fn dataset_schema(ds: &MarketDataset) -> Schema {
    let mut names: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
    for i in 0..ds.meta.customer_feature_dim() {
        let name = ds
            .meta
            .customer_feature_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("cf{i}"));
        names.push(if names.contains(&name) { format!("cf{i}") } else { name });
    }
    Schema::new(names)
}

/// Average total spend per customer per period of history.
pub fn historical_spend(ds: &MarketDataset) -> BTreeMap<String, f64> {
    let periods = ds.meta.period_count().max(1) as f64;
    let mut out: BTreeMap<String, f64> = ds.customers.iter().map(|c| (c.id.clone(), 0.0)).collect();
    for t in &ds.transactions {
        *out.entry(t.customer_id.clone()).or_default() += t.volume * t.unit_price / periods;
    }
    out
}

impl EvalContext {
    pub fn new(schema: Schema, rows: Vec<EvalRow>, cfg: FitnessConfig) -> Result<Self, FitnessError> {
        if !(cfg.eta >= 0.0 && cfg.lambda >= 0.0) {
            return Err(FitnessError::Config("eta and lambda must be non-negative".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.features.len() != schema.len()) {
            return Err(FitnessError::Config(format!(
                "row ({}, {}) has {} features, schema has {}",
                r.customer,
                r.material,
                r.features.len(),
                schema.len()
            )));
        }
        if cfg.mode == FitnessMode::Regression {
            return Err(FitnessError::MissingGolden);
        }
        Ok(Self {
            schema,
            rows,
            cfg,
            golden: None,
            history: BTreeMap::new(),
        })
    }

    /// Every k-th row, with k chosen so at most `max_rows` remain; 0 keeps everything.
    pub fn subsample(&self, max_rows: usize) -> Self {
        let n = self.rows.len();
        if max_rows == 0 || n <= max_rows {
            return self.clone();
        }
        let k = n.div_ceil(max_rows);
        Self {
            schema: self.schema.clone(),
            rows: self.rows.iter().step_by(k).cloned().collect(),
            cfg: self.cfg.clone(),
            golden: self.golden.as_ref().map(|g| g.iter().step_by(k).copied().collect()),
            history: self.history.clone(),
        }
    }

    /// Regression mode may only be entered once a golden response is attached.
    pub fn with_mode(mut self, mode: FitnessMode) -> Result<Self, FitnessError> {
        if mode == FitnessMode::Regression && self.golden.is_none() {
            return Err(FitnessError::MissingGolden);
        }
        self.cfg.mode = mode;
        Ok(self)
    }

    pub fn with_golden(mut self, golden: Vec<f64>) -> Result<Self, FitnessError> {
        if golden.len() != self.rows.len() {
            return Err(FitnessError::LengthMismatch {
                actions: self.rows.len(),
                golden: golden.len(),
            });
        }
        self.golden = Some(golden);
        Ok(self)
    }

    /// Golden actions keyed by (customer, material); missing pairs count as unstocked.
    pub fn with_golden_map(self, map: &BTreeMap<(String, String), f64>) -> Result<Self, FitnessError> {
        let g = self
            .rows
            .iter()
            .map(|r| map.get(&(r.customer.clone(), r.material.clone())).copied().unwrap_or(0.0))
            .collect();
        self.with_golden(g)
    }

    pub fn with_history(mut self, history: BTreeMap<String, f64>) -> Self {
        self.history = history;
        self
    }

    /// One row per modelled pair present in the dataset, in key order.
    pub fn from_dataset(ds: &MarketDataset, model: &DemandModel, cfg: FitnessConfig) -> Result<Self, FitnessError> {
        let schema = dataset_schema(ds);
        let hist = ds.pair_history();
        let matched = ds.match_costs(&ds.cost_rows, 2).costs;
        let mut rows = Vec::new();
        for ((c, m), curve) in model.curves() {
            let (Some(cust), Some(sku)) = (ds.customer(&c), ds.sku(&m)) else {
                continue;
            };
            let cost = matched.get(&(c.clone(), m.clone())).copied().unwrap_or(sku.unit_cost);
            let hist_price = hist
                .get(&(c.clone(), m.clone()))
                .and_then(|h| h.mean_price())
                .unwrap_or(sku.weighted_price);
            let ref_price = if sku.weighted_price > 0.0 { sku.weighted_price } else { hist_price };
            let base_demand = match curve {
                DemandCurve::Exponential { q0, .. } => q0,
                _ => curve.demand(ref_price),
            };
            let mut features = vec![
                cost,
                ref_price,
                hist_price,
                base_demand,
                curve.elasticity(),
                cust.scale,
                cust.avg_order_value,
                cust.forecast_total,
            ];
            features.extend(cust.features.iter().copied());
            rows.push(EvalRow {
                customer: c,
                material: m,
                k1: sku.primary_category.clone(),
                cost,
                ref_price,
                curve,
                features,
            });
        }
        Ok(Self::new(schema, rows, cfg)?.with_history(historical_spend(ds)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn bind(&self, rule: &DecisionRule) -> Result<BoundRule, FitnessError> {
        let mut b = BoundRule::bind(rule, &self.schema, &self.cfg.price_mode)?;
        if let Some(t) = self.cfg.tau {
            b.threshold = t;
        }
        Ok(b)
    }

    pub fn decisions(&self, rule: &DecisionRule) -> Result<Vec<Decision>, FitnessError> {
        let b = self.bind(rule)?;
        let mut stack = Vec::new();
        Ok(self.rows.iter().map(|r| b.decide(&r.features, &mut stack)).collect())
    }

    fn outcome(&self, r: &EvalRow, decision: Decision) -> RowOutcome {
        match decision.price {
            Some(p) if decision.stock => {
                let q = r.curve.demand(p);
                RowOutcome {
                    decision,
                    quantity: q,
                    profit: (p - r.cost) * q,
                    deviation: self.cfg.eta * (p - r.ref_price).powi(2),
                }
            }
            _ => RowOutcome {
                decision,
                quantity: 0.0,
                profit: 0.0,
                deviation: 0.0,
            },
        }
    }

    pub fn outcomes(&self, rule: &DecisionRule) -> Result<Vec<RowOutcome>, FitnessError> {
        let b = self.bind(rule)?;
        let mut stack = Vec::new();
        Ok(self.rows.iter().map(|r| self.outcome(r, b.decide(&r.features, &mut stack))).collect())
    }

    /// Outcomes for an explicit price table; rows without a price are not stocked.
    pub fn price_outcomes(&self, prices: &BTreeMap<(String, String), f64>) -> Vec<RowOutcome> {
        self.rows
            .iter()
            .map(|r| {
                let price = prices.get(&(r.customer.clone(), r.material.clone())).copied();
                self.outcome(
                    r,
                    Decision {
                        stock: price.is_some(),
                        price,
                    },
                )
            })
            .collect()
    }

    /// Per-row action scalar: the price when stocked, else 0.
    pub fn actions(&self, rule: &DecisionRule) -> Result<Vec<f64>, FitnessError> {
        Ok(self.decisions(rule)?.iter().map(|d| d.action()).collect())
    }

    pub fn mae(&self, rule: &DecisionRule) -> Result<Option<f64>, FitnessError> {
        match &self.golden {
            None => Ok(None),
            Some(g) => Ok(Some(mae_vs_golden(&self.actions(rule)?, g)?)),
        }
    }

    /// Per-row loss: distance to golden when present, otherwise negated row contribution.
    pub fn row_losses(&self, rule: &DecisionRule) -> Result<Vec<f64>, FitnessError> {
        let out = self.outcomes(rule)?;
        Ok(match &self.golden {
            Some(g) => out.iter().zip(g).map(|(o, g)| (o.decision.action() - g).abs()).collect(),
            None => out.iter().map(|o| o.deviation - o.profit).collect(),
        })
    }

    /// Scalar objective; the search backends maximize this.
    pub fn fitness(&self, rule: &DecisionRule) -> Result<f64, FitnessError> {
        match self.cfg.mode {
            FitnessMode::Regression => {
                let mae = self.mae(rule)?.ok_or(FitnessError::MissingGolden)?;
                Ok(-mae - 0.01 * rule.node_count() as f64 - 0.005 * rule.depth() as f64)
            }
            FitnessMode::Profit => {
                let out = self.outcomes(rule)?;
                let n = self.rows.len();
                let mean = if n == 0 {
                    0.0
                } else {
                    out.iter().map(|o| o.profit - o.deviation).sum::<f64>() / n as f64
                };
                Ok(mean - self.cfg.lambda * rule.complexity())
            }
        }
    }

    /// Fitness with `-inf` standing in for rules that fail to bind.
    pub fn score(&self, rule: &DecisionRule) -> f64 {
        self.fitness(rule).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn baskets(&self, outcomes: &[RowOutcome]) -> Vec<Basket> {
        let mut by: BTreeMap<&str, Basket> = BTreeMap::new();
        for c in self.history.keys() {
            by.insert(c, Basket::new(c.clone(), self.history[c]));
        }
        for (r, o) in self.rows.iter().zip(outcomes) {
            let b = by
                .entry(r.customer.as_str())
                .or_insert_with(|| Basket::new(r.customer.clone(), self.history.get(&r.customer).copied().unwrap_or(0.0)));
            if let Some(p) = o.decision.price.filter(|_| o.decision.stock) {
                b.items.push(BasketItem {
                    material: r.material.clone(),
                    k1: r.k1.clone(),
                    spend: p * o.quantity,
                });
            }
        }
        by.into_values().collect()
    }

    pub fn report(&self, rule: &DecisionRule) -> Result<FitnessReport, FitnessError> {
        let out = self.outcomes(rule)?;
        let n = self.rows.len();
        let nf = n.max(1) as f64;
        let profit: f64 = out.iter().map(|o| o.profit).sum();
        let deviation: f64 = out.iter().map(|o| o.deviation).sum();
        let profit_term = if n == 0 { 0.0 } else { profit / nf };
        let deviation_penalty = if n == 0 { 0.0 } else { deviation / nf };
        let complexity_penalty = self.cfg.lambda * rule.complexity();
        let sales_volume = out
            .iter()
            .map(|o| o.decision.price.filter(|_| o.decision.stock).map_or(0.0, |p| p * o.quantity))
            .sum();
        let units = out.iter().map(|o| o.quantity).sum();
        let mae = self.mae(rule)?;
        let total = self.fitness(rule)?;
        let violations = if self.cfg.constraints.enabled {
            check_constraints(&self.baskets(&out), &self.cfg.constraints)
        } else {
            ViolationReport::default()
        };
        Ok(FitnessReport {
            mode: self.cfg.mode,
            total,
            profit_term,
            deviation_penalty,
            complexity_penalty,
            complexity: rule.complexity(),
            node_count: rule.node_count(),
            depth: rule.depth(),
            sales_volume,
            profit,
            units,
            stocked: out.iter().filter(|o| o.decision.stock).count(),
            rows: n,
            mae,
            violations,
        })
    }
}
