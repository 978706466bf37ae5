//! Four-stage allocation: forecast augmentation, fee ratios, category bounds
//! and constrained per-category allocation.

mod allocate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use allocate::{
    allocate_category, run_pipeline, AllocationLine, AllocationPlan, Branch, CategoryAllocation, CategoryRecord,
    CustomerSummary, Locks, MaterialQuote, PipelineConfig, PLAN_CSV_HEADER,
};

use crate::fitness::DemandModel;
use crate::fusion::ZScore;
use crate::ingest::{CustomerRecord, MarketDataset, SkuRecord};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("discount grid: {0}")]
    Grid(String),
    #[error("forecast for ({customer}, {material}) at discount {discount} failed: {reason}")]
    Predictor {
        customer: String,
        material: String,
        discount: f64,
        reason: String,
    },
    #[error("unknown candidate customer `{0}`")]
    UnknownCustomer(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountGrid {
    levels: Vec<f64>,
}

impl DiscountGrid {
    pub fn new(mut levels: Vec<f64>) -> Result<Self, PipelineError> {
        if levels.is_empty() {
            return Err(PipelineError::Grid("no levels".into()));
        }
        if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l <= 1.5)) {
            return Err(PipelineError::Grid(format!("level {l} outside (0, 1.5]")));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

impl Default for DiscountGrid {
    fn default() -> Self {
        Self {
            levels: vec![0.9, 0.95, 1.0],
        }
    }
}

/// Unit sales forecast for one customer–material pair at an effective price.
pub trait Predictor: Sync {
    fn predict(&self, customer: &CustomerRecord, sku: &SkuRecord, features: &[f64], price: f64) -> Result<f64, String>;
}

impl<F> Predictor for F
where
    F: Fn(&CustomerRecord, &SkuRecord, &[f64], f64) -> Result<f64, String> + Sync,
{
    fn predict(&self, customer: &CustomerRecord, sku: &SkuRecord, features: &[f64], price: f64) -> Result<f64, String> {
        self(customer, sku, features, price)
    }
}

/// Reads demand from a fitted curve; unknown pairs forecast zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityPredictor {
    pub model: DemandModel,
}

impl Predictor for ElasticityPredictor {
    fn predict(&self, customer: &CustomerRecord, sku: &SkuRecord, _features: &[f64], price: f64) -> Result<f64, String> {
        Ok(self.model.demand(&customer.id, &sku.code, price).unwrap_or(0.0).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub customer: String,
    pub material: String,
    pub discount: f64,
    pub price: f64,
    pub units: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastTable {
    pub rows: Vec<ForecastRow>,
}

impl ForecastTable {
    /// Forecast at discount 1.0, zero when absent.
    pub fn baseline(&self, customer: &str, material: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.customer == customer && r.material == material && (r.discount - 1.0).abs() < 1e-12)
            .map_or(0.0, |r| r.units)
    }

    pub fn baselines(&self) -> BTreeMap<(String, String), f64> {
        self.rows
            .iter()
            .filter(|r| (r.discount - 1.0).abs() < 1e-12)
            .map(|r| ((r.customer.clone(), r.material.clone()), r.units))
            .collect()
    }
}

/// Candidates × materials × discounts, predicted from z-scored
/// `[customer features; price]` vectors.
pub fn augment_and_forecast(
    ds: &MarketDataset,
    candidates: &BTreeSet<String>,
    grid: &DiscountGrid,
    predictor: &dyn Predictor,
) -> Result<ForecastTable, PipelineError> {
    let mut cells = Vec::new();
    for c in candidates {
        let cust = ds.customer(c).ok_or_else(|| PipelineError::UnknownCustomer(c.clone()))?;
        for sku in &ds.skus {
            for &d in grid.levels() {
                cells.push((cust, sku, d, d * sku.weighted_price));
            }
        }
    }
    let raw: Vec<Vec<f64>> = cells
        .iter()
        .map(|(c, _, _, p)| c.features.iter().copied().chain([*p]).collect())
        .collect();
    let z = ZScore::fit(&raw, usize::MAX);
    let mut rows = Vec::with_capacity(cells.len());
    for ((cust, sku, d, p), x) in cells.into_iter().zip(&raw) {
        let units = predictor
            .predict(cust, sku, &z.apply(x), p)
            .map_err(|reason| PipelineError::Predictor {
                customer: cust.id.clone(),
                material: sku.code.clone(),
                discount: d,
                reason,
            })?;
        rows.push(ForecastRow {
            customer: cust.id.clone(),
            material: sku.code.clone(),
            discount: d,
            price: p,
            units: if units.is_finite() { units.max(0.0) } else { 0.0 },
        });
    }
    Ok(ForecastTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeRatio {
    pub revenue: f64,
    pub share: f64,
    pub ratio: f64,
    /// Per expense type before summation.
    pub by_type: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeeRatioTable {
    /// Keyed by (customer, k1).
    #[serde(with = "crate::pairs")]
    pub entries: BTreeMap<(String, String), FeeRatio>,
    /// Total revenue per period.
    pub monthly_revenue: BTreeMap<String, f64>,
    /// Customers without positive revenue.
    pub excluded: Vec<String>,
}

impl FeeRatioTable {
    pub fn ratio(&self, customer: &str, k1: &str) -> f64 {
        self.entries
            .get(&(customer.to_string(), k1.to_string()))
            .map_or(0.0, |f| f.ratio)
    }

    pub fn share(&self, customer: &str, k1: &str) -> f64 {
        self.entries
            .get(&(customer.to_string(), k1.to_string()))
            .map_or(0.0, |f| f.share)
    }
}

/// `FR_{c,k1,f} = h·E_f / GR_{c,k1}` and `FR_{c,k1} = Σ_f h·FR_{c,k1,f}`.
pub fn fee_ratios(ds: &MarketDataset) -> FeeRatioTable {
    let k1_of: BTreeMap<&str, &str> = ds.skus.iter().map(|s| (s.code.as_str(), s.primary_category.as_str())).collect();
    let mut gr: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for t in &ds.transactions {
        if let Some(k1) = k1_of.get(t.material_code.as_str()) {
            *gr.entry(t.customer_id.clone())
                .or_default()
                .entry(k1.to_string())
                .or_default() += t.volume * t.unit_price;
        }
    }
    let periods = ds.meta.period_count().max(1) as f64;
    let mut table = FeeRatioTable::default();
    for c in &ds.customers {
        let cats = gr.remove(&c.id).unwrap_or_default();
        let total: f64 = cats.values().filter(|v| **v > 0.0).sum();
        if total <= 0.0 {
            table.excluded.push(c.id.clone());
            continue;
        }
        table.monthly_revenue.insert(c.id.clone(), total / periods);
        for (k1, g) in cats.into_iter().filter(|(_, g)| *g > 0.0) {
            let h = g / total;
            let by_type: BTreeMap<String, f64> = ds
                .expenses
                .entries
                .iter()
                .map(|(f, e)| (f.clone(), h * e / g))
                .collect();
            let ratio = by_type.values().map(|fr| h * fr).sum();
            table.entries.insert(
                (c.id.clone(), k1),
                FeeRatio {
                    revenue: g,
                    share: h,
                    ratio,
                    by_type,
                },
            );
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryBounds {
    pub lower: f64,
    pub upper: f64,
    pub locked: f64,
    /// Locked value reaches the unadjusted upper bound.
    pub infeasible: bool,
}

/// `L = max(0, 0.95(h − 0.1)X) − lock`, `U = 1.05(h + 0.1)X − lock`, both floored at 0.
pub fn category_bounds(budget: f64, share: f64, locked: f64) -> CategoryBounds {
    let l = (0.95 * (share - 0.10) * budget).max(0.0);
    let u = 1.05 * (share + 0.10) * budget;
    CategoryBounds {
        lower: (l - locked).max(0.0),
        upper: (u - locked).max(0.0),
        locked,
        infeasible: locked > 0.0 && locked >= u,
    }
}
