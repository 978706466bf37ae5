use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{augment_and_forecast, category_bounds, fee_ratios, CategoryBounds, DiscountGrid, PipelineError, Predictor};
use crate::fitness::{check_constraints, Basket, BasketItem, ConstraintConfig, ViolationReport};
use crate::ingest::MarketDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    CandidateScaled,
    CandidateAccepted,
    Filler,
    Locked,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::CandidateScaled => "candidate-scaled",
            Branch::CandidateAccepted => "candidate-accepted",
            Branch::Filler => "filler",
            Branch::Locked => "locked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Candidate customers have a forecast total above this.
    pub theta: f64,
    pub grid: DiscountGrid,
    /// Margin rate must exceed the fee ratio by this much.
    pub margin_buffer: f64,
    pub top_per_k2: usize,
    pub fill_per_k2: usize,
    /// Half-width of the global band around the average order value.
    pub band: f64,
    /// Search the category budget so the realized total lands in the band.
    pub fit_budget: bool,
    pub constraints: ConstraintConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 0.0,
            grid: DiscountGrid::default(),
            margin_buffer: 0.08,
            top_per_k2: 5,
            fill_per_k2: 2,
            band: 0.05,
            fit_budget: true,
            constraints: ConstraintConfig::default(),
        }
    }
}

/// Policy-locked amounts in currency.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Locks {
    /// Applies to every customer.
    pub all: BTreeMap<String, f64>,
    /// Per (customer, material); overrides `all`.
    #[serde(with = "crate::pairs")]
    pub pairs: BTreeMap<(String, String), f64>,
}

impl Locks {
    pub fn from_dataset(ds: &MarketDataset) -> Self {
        Self {
            all: ds
                .skus
                .iter()
                .filter_map(|s| s.locked_amount.map(|l| (s.code.clone(), l)))
                .collect(),
            pairs: BTreeMap::new(),
        }
    }

    /// Adds `customer,material,amount` rows; `*` as customer locks for everyone.
    pub fn merge_csv(&mut self, text: &str) -> Result<(), csv::Error> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.deserialize::<(String, String, f64)>() {
            let (c, m, a) = rec?;
            if c == "*" {
                self.all.insert(m, a);
            } else {
                self.pairs.insert((c, m), a);
            }
        }
        Ok(())
    }

    pub fn get(&self, customer: &str, material: &str) -> Option<f64> {
        self.pairs
            .get(&(customer.to_string(), material.to_string()))
            .or_else(|| self.all.get(material))
            .copied()
            .filter(|a| *a > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialQuote {
    pub code: String,
    pub k2: String,
    pub price: f64,
    pub cost: f64,
    /// Baseline unit forecast.
    pub forecast: f64,
}

impl MaterialQuote {
    pub fn margin_rate(&self) -> f64 {
        (self.price - self.cost) / self.price
    }

    fn value(&self) -> f64 {
        self.forecast * self.price
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryAllocation {
    /// `(material, branch, units)` with positive units.
    pub lines: Vec<(String, Branch, f64)>,
    pub candidates: Vec<String>,
    pub fillers: Vec<String>,
    pub candidate_value: f64,
    pub value: f64,
    /// The gap to the lower bound could not be covered.
    pub unfilled: bool,
    pub zero_price: Vec<String>,
}

fn by_margin(a: &MaterialQuote, b: &MaterialQuote) -> std::cmp::Ordering {
    b.margin_rate().total_cmp(&a.margin_rate()).then_with(|| a.code.cmp(&b.code))
}

/// Margin-filtered top candidates per k2, then scale, accept or fill against
/// the bounds.
pub fn allocate_category(
    quotes: &[MaterialQuote],
    fee_ratio: f64,
    bounds: &CategoryBounds,
    cfg: &PipelineConfig,
) -> CategoryAllocation {
    let mut out = CategoryAllocation::default();
    let mut priced: Vec<&MaterialQuote> = Vec::new();
    for q in quotes {
        if q.price > 0.0 && q.price.is_finite() {
            priced.push(q);
        } else {
            out.zero_price.push(q.code.clone());
        }
    }
    priced.sort_by(|a, b| by_margin(a, b));

    let mut per_k2: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cand: Vec<&MaterialQuote> = Vec::new();
    for q in &priced {
        if q.margin_rate() > fee_ratio + cfg.margin_buffer {
            let n = per_k2.entry(q.k2.as_str()).or_default();
            if *n < cfg.top_per_k2 {
                *n += 1;
                cand.push(q);
            }
        }
    }
    let x_cand: f64 = cand.iter().map(|q| q.value()).sum();
    out.candidate_value = x_cand;
    out.candidates = cand.iter().map(|q| q.code.clone()).collect();
    let (l, u) = (bounds.lower, bounds.upper);

    if x_cand > u {
        let f = u / x_cand;
        for q in &cand {
            out.lines.push((q.code.clone(), Branch::CandidateScaled, q.forecast * f));
        }
    } else {
        for q in &cand {
            out.lines.push((q.code.clone(), Branch::CandidateAccepted, q.forecast));
        }
        if x_cand < l {
            let gap = l - x_cand;
            let chosen: BTreeSet<&str> = out.candidates.iter().map(String::as_str).collect();
            let mut per_k2: BTreeMap<&str, usize> = BTreeMap::new();
            let mut fill: Vec<&MaterialQuote> = Vec::new();
            let mut coverage = 0.0;
            for q in priced.iter().filter(|q| !chosen.contains(q.code.as_str()) && q.value() > 0.0) {
                if coverage >= gap {
                    break;
                }
                let n = per_k2.entry(q.k2.as_str()).or_default();
                if *n < cfg.fill_per_k2 {
                    *n += 1;
                    coverage += q.value();
                    fill.push(q);
                }
            }
            if !fill.is_empty() {
                let even = gap / fill.len() as f64;
                let mut v: Vec<f64> = fill.iter().map(|q| q.value().min(even)).collect();
                let mut residual = gap - v.iter().sum::<f64>();
                for (i, q) in fill.iter().enumerate() {
                    if residual <= 0.0 {
                        break;
                    }
                    let add = (q.value() - v[i]).min(residual).max(0.0);
                    v[i] += add;
                    residual -= add;
                }
                for (q, v) in fill.iter().zip(v) {
                    out.lines.push((q.code.clone(), Branch::Filler, v / q.price));
                }
            }
            out.fillers = fill.iter().map(|q| q.code.clone()).collect();
        }
    }
    out.lines.retain(|(_, _, x)| *x > 0.0);
    let price: BTreeMap<&str, f64> = quotes.iter().map(|q| (q.code.as_str(), q.price)).collect();
    out.value = out.lines.iter().map(|(m, _, x)| x * price[m.as_str()]).sum();
    out.unfilled = out.value < l - 1e-9 * l.max(1.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationLine {
    pub customer: String,
    pub material: String,
    pub k1: String,
    pub k2: String,
    pub branch: Branch,
    pub units: f64,
    pub price: f64,
    pub cost: f64,
    /// `units · price`.
    pub amount: f64,
    /// `units · (price − cost)`.
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub k1: String,
    pub share: f64,
    pub fee_ratio: f64,
    pub bounds: CategoryBounds,
    pub candidate_value: f64,
    /// Allocated value excluding locked lines.
    pub value: f64,
    pub candidates: Vec<String>,
    pub fillers: Vec<String>,
    pub unfilled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerSummary {
    pub customer: String,
    /// Historical average order value `A_c`.
    pub target: f64,
    /// Budget the category bounds were scaled against.
    pub budget: f64,
    pub total: f64,
    pub profit: f64,
    pub categories: Vec<CategoryRecord>,
    /// No budget brings the total into the band.
    pub band_infeasible: bool,
}

impl CustomerSummary {
    pub fn infeasible(&self) -> bool {
        self.band_infeasible || self.categories.iter().any(|c| c.unfilled || c.bounds.infeasible)
    }

    pub fn in_band(&self, band: f64) -> bool {
        let tol = 1e-9 * self.target.abs().max(1.0);
        self.total >= (1.0 - band) * self.target - tol && self.total <= (1.0 + band) * self.target + tol
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub lines: Vec<AllocationLine>,
    pub customers: Vec<CustomerSummary>,
    pub violations: ViolationReport,
    pub zero_price: Vec<String>,
    pub fee_excluded: Vec<String>,
}

pub const PLAN_CSV_HEADER: &str = "customer,material,branch,amount,profit";

impl AllocationPlan {
    pub fn total_amount(&self) -> f64 {
        self.lines.iter().map(|l| l.amount).sum()
    }

    pub fn total_profit(&self) -> f64 {
        self.lines.iter().map(|l| l.profit).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{PLAN_CSV_HEADER}\n");
        for l in &self.lines {
            let _ = writeln!(s, "{},{},{},{},{}", l.customer, l.material, l.branch.label(), l.amount, l.profit);
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "total_amount": self.total_amount(),
            "total_profit": self.total_profit(),
            "customers": self.customers.iter().map(|c| serde_json::json!({
                "customer": c.customer,
                "target": c.target,
                "budget": c.budget,
                "total": c.total,
                "profit": c.profit,
                "infeasible": c.infeasible(),
                "band_infeasible": c.band_infeasible,
                "unfilled": c.categories.iter().filter(|k| k.unfilled).map(|k| k.k1.clone()).collect::<Vec<_>>(),
                "lock_infeasible": c.categories.iter().filter(|k| k.bounds.infeasible).map(|k| k.k1.clone()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "violations": self.violations,
            "zero_price": self.zero_price,
            "fee_excluded": self.fee_excluded,
        })
    }
}

struct CategoryInput<'a> {
    k1: &'a str,
    share: f64,
    fee_ratio: f64,
    locked: f64,
    quotes: Vec<MaterialQuote>,
}

fn run_categories(
    cats: &[CategoryInput],
    budget: f64,
    cfg: &PipelineConfig,
) -> (f64, Vec<(CategoryRecord, CategoryAllocation)>) {
    let mut total = 0.0;
    let out = cats
        .iter()
        .map(|c| {
            let b = category_bounds(budget, c.share, c.locked);
            let a = allocate_category(&c.quotes, c.fee_ratio, &b, cfg);
            total += a.value + c.locked;
            (
                CategoryRecord {
                    k1: c.k1.to_string(),
                    share: c.share,
                    fee_ratio: c.fee_ratio,
                    bounds: b,
                    candidate_value: a.candidate_value,
                    value: a.value,
                    candidates: a.candidates.clone(),
                    fillers: a.fillers.clone(),
                    unfilled: a.unfilled,
                },
                a,
            )
        })
        .collect();
    (total, out)
}

/// Budget whose realized total reaches `target`; the total is nondecreasing
/// and continuous in the budget.
fn fit_budget(cats: &[CategoryInput], target: f64, cfg: &PipelineConfig) -> (f64, bool) {
    let total = |x: f64| run_categories(cats, x, cfg).0;
    let (lo_band, hi_band) = ((1.0 - cfg.band) * target, (1.0 + cfg.band) * target);
    let t0 = total(target);
    if !cfg.fit_budget || (t0 >= lo_band && t0 <= hi_band) {
        return (target, false);
    }
    let (mut lo, mut hi) = if t0 > hi_band {
        (0.0, target)
    } else {
        let mut hi = target.max(1e-9);
        let mut reached = false;
        for _ in 0..64 {
            hi *= 2.0;
            if total(hi) >= target {
                reached = true;
                break;
            }
        }
        if !reached {
            return (hi, total(hi) < lo_band);
        }
        (target, hi)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let tl = total(lo);
    if tl >= lo_band && tl <= hi_band {
        (lo, false)
    } else {
        let th = total(hi);
        (hi, !(th >= lo_band && th <= hi_band))
    }
}

/// Forecast, fee ratios and per-customer category allocation composed in order.
pub fn run_pipeline(
    ds: &MarketDataset,
    predictor: &dyn Predictor,
    locks: &Locks,
    cfg: &PipelineConfig,
) -> Result<AllocationPlan, PipelineError> {
    let candidates = ds.filter_candidates(cfg.theta);
    if candidates.is_empty() {
        return Ok(AllocationPlan::default());
    }
    let forecasts = augment_and_forecast(ds, &candidates, &cfg.grid, predictor)?;
    let base = forecasts.baselines();
    let fees = fee_ratios(ds);
    let categories = ds.primary_categories();

    let results: Vec<(Vec<AllocationLine>, CustomerSummary, Vec<String>)> = candidates
        .par_iter()
        .map(|cid| {
            let cust = ds.customer(cid).expect("candidate customer");
            let mut locked_lines = Vec::new();
            let cats: Vec<CategoryInput> = categories
                .iter()
                .map(|k1| {
                    let mut locked = 0.0;
                    let mut quotes = Vec::new();
                    for s in ds.skus.iter().filter(|s| &s.primary_category == k1) {
                        if let Some(a) = locks.get(cid, &s.code) {
                            locked += a;
                            let units = if s.weighted_price > 0.0 { a / s.weighted_price } else { 0.0 };
                            locked_lines.push(AllocationLine {
                                customer: cid.clone(),
                                material: s.code.clone(),
                                k1: k1.clone(),
                                k2: s.secondary_category.clone(),
                                branch: Branch::Locked,
                                units,
                                price: s.weighted_price,
                                cost: s.unit_cost,
                                amount: a,
                                profit: units * (s.weighted_price - s.unit_cost),
                            });
                            continue;
                        }
                        quotes.push(MaterialQuote {
                            code: s.code.clone(),
                            k2: s.secondary_category.clone(),
                            price: s.weighted_price,
                            cost: s.unit_cost,
                            forecast: base.get(&(cid.clone(), s.code.clone())).copied().unwrap_or(0.0),
                        });
                    }
                    CategoryInput {
                        k1,
                        share: fees.share(cid, k1),
                        fee_ratio: fees.ratio(cid, k1),
                        locked,
                        quotes,
                    }
                })
                .collect();

            let target = cust.avg_order_value;
            let (budget, band_infeasible) = fit_budget(&cats, target, cfg);
            let (_, allocs) = run_categories(&cats, budget, cfg);

            let mut lines = locked_lines;
            let mut zero_price = Vec::new();
            let mut records = Vec::new();
            for (c, (rec, a)) in cats.iter().zip(allocs) {
                let q: BTreeMap<&str, &MaterialQuote> = c.quotes.iter().map(|q| (q.code.as_str(), q)).collect();
                for (m, branch, units) in a.lines {
                    let qt = q[m.as_str()];
                    lines.push(AllocationLine {
                        customer: cid.clone(),
                        material: m.clone(),
                        k1: c.k1.to_string(),
                        k2: qt.k2.clone(),
                        branch,
                        units,
                        price: qt.price,
                        cost: qt.cost,
                        amount: units * qt.price,
                        profit: units * (qt.price - qt.cost),
                    });
                }
                zero_price.extend(a.zero_price);
                records.push(rec);
            }
            let mut seen = BTreeSet::new();
            lines.retain(|l| seen.insert(l.material.clone()));
            let summary = CustomerSummary {
                customer: cid.clone(),
                target,
                budget,
                total: lines.iter().map(|l| l.amount).sum(),
                profit: lines.iter().map(|l| l.profit).sum(),
                categories: records,
                band_infeasible,
            };
            (lines, summary, zero_price)
        })
        .collect();

    let mut plan = AllocationPlan {
        fee_excluded: fees.excluded.clone(),
        ..AllocationPlan::default()
    };
    let mut zero: BTreeSet<String> = BTreeSet::new();
    for (lines, summary, zp) in results {
        plan.lines.extend(lines);
        plan.customers.push(summary);
        zero.extend(zp);
    }
    plan.zero_price = zero.into_iter().collect();
    let baskets: Vec<Basket> = plan
        .customers
        .iter()
        .map(|c| Basket {
            customer: c.customer.clone(),
            history: c.target,
            items: plan
                .lines
                .iter()
                .filter(|l| l.customer == c.customer)
                .map(|l| BasketItem {
                    material: l.material.clone(),
                    k1: l.k1.clone(),
                    spend: l.amount,
                })
                .collect(),
        })
        .collect();
    plan.violations = check_constraints(&baskets, &cfg.constraints);
    Ok(plan)
}
