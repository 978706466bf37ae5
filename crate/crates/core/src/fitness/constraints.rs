use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    pub enabled: bool,
    pub max_skus_per_k1: usize,
    pub min_categories: usize,
    /// Relative half-width of the spend band around the historical average.
    pub spend_band: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_skus_per_k1: 5,
            min_categories: 2,
            spend_band: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketItem {
    pub material: String,
    pub k1: String,
    /// Spend in currency.
    pub spend: f64,
}

/// What one customer receives under a plan or rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basket {
    pub customer: String,
    /// Historical average spend.
    pub history: f64,
    pub items: Vec<BasketItem>,
}

impl Basket {
    pub fn new(customer: String, history: f64) -> Self {
        Self {
            customer,
            history,
            items: Vec::new(),
        }
    }

    pub fn spend(&self) -> f64 {
        self.items.iter().map(|i| i.spend).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerViolation {
    pub customer: String,
    pub too_many_per_k1: bool,
    pub too_few_categories: bool,
    pub spend_out_of_band: bool,
    pub spend: f64,
    pub history: f64,
    pub categories: usize,
    pub max_per_k1: usize,
}

impl CustomerViolation {
    pub fn any(&self) -> bool {
        self.too_many_per_k1 || self.too_few_categories || self.spend_out_of_band
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub customers: Vec<CustomerViolation>,
    pub violating: usize,
    pub per_k1: usize,
    pub categories: usize,
    pub spend: usize,
}

/// Per-customer hard-constraint flags; the spend band is closed.
pub fn check_constraints(baskets: &[Basket], cfg: &ConstraintConfig) -> ViolationReport {
    let mut report = ViolationReport::default();
    for b in baskets {
        let mut per_k1: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for i in b.items.iter().filter(|i| i.spend > 0.0) {
            per_k1.entry(&i.k1).or_default().insert(&i.material);
        }
        let max_per_k1 = per_k1.values().map(|s| s.len()).max().unwrap_or(0);
        let spend = b.spend();
        let lo = (1.0 - cfg.spend_band) * b.history;
        let hi = (1.0 + cfg.spend_band) * b.history;
        let tol = 1e-9 * b.history.abs().max(1.0);
        let v = CustomerViolation {
            customer: b.customer.clone(),
            too_many_per_k1: max_per_k1 > cfg.max_skus_per_k1,
            too_few_categories: per_k1.len() < cfg.min_categories,
            spend_out_of_band: spend < lo - tol || spend > hi + tol,
            spend,
            history: b.history,
            categories: per_k1.len(),
            max_per_k1,
        };
        report.per_k1 += v.too_many_per_k1 as usize;
        report.categories += v.too_few_categories as usize;
        report.spend += v.spend_out_of_band as usize;
        report.violating += v.any() as usize;
        report.customers.push(v);
    }
    report
}
