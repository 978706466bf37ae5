//! Synthetic markets with a hidden demand truth, pricing oracles, plan
//! deployment and two comparison baselines.

mod baselines;
mod deploy;
mod oracle;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use baselines::{
    baseline_clustering, baseline_lowrank, cluster_parameters, fit_lowrank, optimize_revenue, perturbation,
    BaselineOutcome, ClusteringConfig, LowRankConfig, LowRankHistory, LowRankModel,
};
pub use deploy::{deploy_plan, deploy_prices, deploy_rule, Realized};
pub use oracle::{
    analytic_optimal_price, golden_response, published_closed_form_price, utility_b2, GoldenEntry, GoldenResponse,
};

use crate::fitness::{DemandCurve, DemandModel, ExponentialElasticityModel, ExponentialParams, RegionalLinearDemand, RegionalPair};
use crate::ingest::{CustomerRecord, DatasetMeta, ExpenseLedger, GeoPoint, MarketDataset, SkuRecord, StoreProfile, Transaction};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("world config: {0}")]
    Config(String),
    #[error("oracle undefined: {0}")]
    Oracle(String),
    #[error("insufficient history: {0}")]
    History(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemandFamily {
    #[default]
    Exponential,
    RegionalLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub customers: usize,
    pub skus: usize,
    pub customer_features: usize,
    pub k1_count: usize,
    pub k2_per_k1: usize,
    pub stores: usize,
    pub store_features: usize,
    pub regions: usize,
    pub periods: usize,
    /// Probability that a customer trades a given material.
    pub density: f64,
    pub family: DemandFamily,
    pub cost_range: (f64, f64),
    /// Exponential price sensitivity per unit price.
    pub beta_range: (f64, f64),
    /// Regional intercept coefficient `α_i`.
    pub alpha_range: (f64, f64),
    /// Regional slope `β_i`.
    pub slope_range: (f64, f64),
    pub mu_g: f64,
    pub sigma_g: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Volume weight of the downstream utility.
    pub theta: f64,
    /// Relative half-width of historical price perturbations.
    pub price_jitter: f64,
    /// Relative standard deviation of multiplicative volume noise.
    pub noise: f64,
    /// Total expense as a fraction of mean customer revenue.
    pub expense_ratio: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            customers: 40,
            skus: 12,
            customer_features: 2,
            k1_count: 3,
            k2_per_k1: 2,
            stores: 6,
            store_features: 3,
            regions: 4,
            periods: 6,
            density: 0.7,
            family: DemandFamily::Exponential,
            cost_range: (2.0, 10.0),
            beta_range: (0.1, 0.4),
            alpha_range: (1.0, 3.0),
            slope_range: (0.5, 1.5),
            mu_g: 10.0,
            sigma_g: 1.0,
            gamma: 0.5,
            eta: 0.0,
            theta: 0.0,
            price_jitter: 0.15,
            noise: 0.05,
            expense_ratio: 0.05,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if self.customers == 0 || self.skus == 0 || self.k1_count == 0 || self.k2_per_k1 == 0 || self.periods == 0 {
            return bad("counts must be positive");
        }
        if self.regions == 0 {
            return bad("regions must be positive");
        }
        if !(self.sigma_g >= 0.0) {
            return bad("sigma_g must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.density) || !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.price_jitter) {
            return bad("density, noise or price_jitter out of range");
        }
        for (name, (lo, hi)) in [
            ("cost_range", self.cost_range),
            ("beta_range", self.beta_range),
            ("alpha_range", self.alpha_range),
            ("slope_range", self.slope_range),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(SimError::Config(format!("{name} must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }
}

/// What the generator knows and the searches must not see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub family: DemandFamily,
    pub model: DemandModel,
    /// Unit cost per material, also the wholesale price `p_b1`.
    pub costs: BTreeMap<String, f64>,
    pub theta: f64,
    pub noise: f64,
    pub seed: u64,
}

impl WorldTruth {
    pub fn curve(&self, customer: &str, material: &str) -> Option<DemandCurve> {
        self.model.curve(customer, material)
    }

    pub fn cost(&self, material: &str) -> f64 {
        self.costs.get(material).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub dataset: MarketDataset,
    pub truth: WorldTruth,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a market and its demand truth; deterministic under the seed.
pub fn generate_world(cfg: &WorldConfig) -> Result<World, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut skus = Vec::with_capacity(cfg.skus);
    let mut costs = BTreeMap::new();
    for i in 0..cfg.skus {
        let k1 = i % cfg.k1_count;
        let k2 = (i / cfg.k1_count) % cfg.k2_per_k1;
        let code = format!("M{:04}", i + 1);
        let cost = uniform(&mut rng, cfg.cost_range);
        costs.insert(code.clone(), cost);
        skus.push(SkuRecord {
            code,
            primary_category: format!("K{}", k1 + 1),
            secondary_category: format!("K{}-{}", k1 + 1, k2 + 1),
            unit_cost: cost,
            weighted_price: 0.0,
            embedding: Vec::new(),
            locked_amount: None,
        });
    }
    let g: Vec<f64> = (0..cfg.regions)
        .map(|_| cfg.mu_g + cfg.sigma_g * std_normal.sample(&mut rng))
        .collect();

    let mut customers = Vec::with_capacity(cfg.customers);
    for k in 0..cfg.customers {
        customers.push(CustomerRecord {
            id: format!("C{:04}", k + 1),
            name: format!("Customer {}", k + 1),
            location: GeoPoint::new(rng.random_range(30.0..31.0), rng.random_range(120.0..121.0)),
            scale: rng.random_range(0.5..2.0),
            avg_order_value: 0.0,
            forecast_total: 0.0,
            features: (0..cfg.customer_features).map(|_| std_normal.sample(&mut rng)).collect(),
            tags: Vec::new(),
        });
    }

    // Per-material parameters, then per-pair curves.
    let sku_params: Vec<(f64, f64, f64)> = skus
        .iter()
        .map(|s| match cfg.family {
            DemandFamily::Exponential => {
                let beta = uniform(&mut rng, cfg.beta_range);
                let ref_price = s.unit_cost + rng.random_range(0.5..1.5) / beta;
                (beta, ref_price, rng.random_range(5.0..20.0))
            }
            DemandFamily::RegionalLinear => {
                let alpha = uniform(&mut rng, cfg.alpha_range);
                let slope = uniform(&mut rng, cfg.slope_range);
                (alpha, slope, 0.0)
            }
        })
        .collect();
    if cfg.family == DemandFamily::RegionalLinear {
        for (s, &(alpha, slope, _)) in skus.iter_mut().zip(&sku_params) {
            let c = rng.random_range(0.2..0.5) * alpha * cfg.mu_g / slope;
            s.unit_cost = c;
            costs.insert(s.code.clone(), c);
        }
    }

    let mut exp_pairs = BTreeMap::new();
    let mut reg_pairs = BTreeMap::new();
    let mut ref_prices = BTreeMap::new();
    for (ci, c) in customers.iter().enumerate() {
        for (s, &(a, b, base)) in skus.iter().zip(&sku_params) {
            if rng.random::<f64>() >= cfg.density {
                continue;
            }
            let key = (c.id.clone(), s.code.clone());
            match cfg.family {
                DemandFamily::Exponential => {
                    let q0 = base * c.scale * rng.random_range(0.8..1.2);
                    exp_pairs.insert(key.clone(), ExponentialParams { q0, p0: b, beta: a });
                    ref_prices.insert(key, b);
                }
                DemandFamily::RegionalLinear => {
                    let gj = g[ci % cfg.regions];
                    let alpha = a * rng.random_range(0.9..1.1);
                    let cost = s.unit_cost;
                    let mid = 0.5 * (alpha * gj / b + cost) * rng.random_range(0.9..1.1);
                    reg_pairs.insert(
                        key.clone(),
                        RegionalPair {
                            alpha,
                            beta: b,
                            g: gj,
                            s: c.scale,
                            a: rng.random_range(0.5..1.0),
                            p_anchor: mid,
                        },
                    );
                    ref_prices.insert(key, mid);
                }
            }
        }
    }
    let model = match cfg.family {
        DemandFamily::Exponential => DemandModel::Exponential(ExponentialElasticityModel { pairs: exp_pairs }),
        DemandFamily::RegionalLinear => DemandModel::Regional(RegionalLinearDemand {
            pairs: reg_pairs,
            gamma: cfg.gamma,
            eta: cfg.eta,
        }),
    };

    let mut transactions = Vec::new();
    for ((c, m), p_ref) in &ref_prices {
        let curve = model.curve(c, m).expect("modelled pair");
        for t in 0..cfg.periods {
            let p = (p_ref * (1.0 + rng.random_range(-1.0..=1.0) * cfg.price_jitter)).max(0.01);
            let eps = if cfg.noise > 0.0 { cfg.noise * std_normal.sample(&mut rng) } else { 0.0 };
            let volume = (curve.demand(p) * (1.0 + eps)).max(0.0);
            transactions.push(Transaction {
                customer_id: c.clone(),
                material_code: m.clone(),
                volume,
                unit_price: p,
                period: t as i64,
            });
        }
    }

    let stores = (0..cfg.stores)
        .map(|j| StoreProfile {
            id: format!("S{:03}", j + 1),
            location: GeoPoint::new(rng.random_range(30.0..31.0), rng.random_range(120.0..121.0)),
            demographics: (0..cfg.store_features).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();

    let mut ds = MarketDataset {
        meta: DatasetMeta {
            customer_feature_names: (1..=cfg.customer_features).map(|i| format!("f{i}")).collect(),
            sku_embedding_dim: 0,
            currency: "CNY".into(),
            period_start: 0,
            period_end: cfg.periods as i64 - 1,
        },
        customers,
        skus,
        transactions,
        stores,
        expenses: ExpenseLedger::default(),
        cost_rows: Vec::new(),
    };
    ds.refresh_weighted_prices();
    let spend = crate::fitness::historical_spend(&ds);
    for c in ds.customers.iter_mut() {
        let a = spend.get(&c.id).copied().unwrap_or(0.0);
        c.avg_order_value = a;
        c.forecast_total = a * cfg.periods as f64 * rng.random_range(0.9..1.1);
    }
    let mean_revenue = spend.values().sum::<f64>() * cfg.periods as f64 / cfg.customers as f64;
    let e = cfg.expense_ratio * mean_revenue;
    ds.expenses.entries.insert("logistics".into(), 0.6 * e);
    ds.expenses.entries.insert("marketing".into(), 0.4 * e);

    Ok(World {
        dataset: ds,
        truth: WorldTruth {
            family: cfg.family,
            model,
            costs,
            theta: cfg.theta,
            noise: cfg.noise,
            seed: cfg.seed,
        },
    })
}
