use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::MarketDataset;

/// Demand response of one (customer, material) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DemandCurve {
    /// `q = q0·exp(−β(p − p0))`.
    Exponential { q0: f64, p0: f64, beta: f64 },
    /// `q = max(0, scale·(intercept − slope·p))`.
    Linear { scale: f64, intercept: f64, slope: f64 },
}

impl DemandCurve {
    pub fn demand(&self, p: f64) -> f64 {
        match *self {
            DemandCurve::Exponential { q0, p0, beta } => q0 * (-beta * (p - p0)).min(700.0).exp(),
            DemandCurve::Linear { scale, intercept, slope } => (scale * (intercept - slope * p)).max(0.0),
        }
    }

    /// Price maximizing `(p − c)·q(p)` where a closed form exists.
    pub fn profit_optimal_price(&self, cost: f64) -> f64 {
        match *self {
            DemandCurve::Exponential { beta, .. } if beta > 0.0 => cost + 1.0 / beta,
            DemandCurve::Exponential { .. } => f64::INFINITY,
            DemandCurve::Linear { intercept, slope, .. } => (intercept / slope + cost) / 2.0,
        }
    }

    pub fn elasticity(&self) -> f64 {
        match *self {
            DemandCurve::Exponential { beta, .. } => beta,
            DemandCurve::Linear { slope, .. } => slope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialParams {
    pub q0: f64,
    pub p0: f64,
    pub beta: f64,
}

/// Per-pair exponential elasticity model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentialElasticityModel {
    #[serde(with = "crate::pairs")]
    pub pairs: BTreeMap<(String, String), ExponentialParams>,
}

fn log_linear_fit(obs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = obs.iter().filter(|o| o.1 > 0.0).map(|&(p, v)| (p, v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mp = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mp).powi(2)).sum();
    if sxx <= 1e-12 * (1.0 + mp * mp) {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mp) * (p.1 - ml)).sum();
    let slope = sxy / sxx;
    Some((ml - slope * mp, slope))
}

impl ExponentialElasticityModel {
    pub fn demand(&self, customer: &str, material: &str, p: f64) -> Option<f64> {
        self.pairs
            .get(&(customer.to_string(), material.to_string()))
            .map(|e| DemandCurve::Exponential { q0: e.q0, p0: e.p0, beta: e.beta }.demand(p))
    }

    /// Log-linear fit of volume on price per pair; pairs without price variation
    /// fall back to the material's pooled slope, then to `default_beta`.
    pub fn estimate(ds: &MarketDataset, default_beta: f64) -> Self {
        let hist = ds.pair_history();
        let mut pooled: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        let mut fits = BTreeMap::new();
        for ((c, m), h) in &hist {
            if let Some((a, slope)) = log_linear_fit(&h.observations) {
                let e = pooled.entry(m.as_str()).or_default();
                e.0 += -slope;
                e.1 += 1.0;
                fits.insert((c.clone(), m.clone()), (a, slope));
            }
        }
        let mut pairs = BTreeMap::new();
        for ((c, m), h) in &hist {
            let n = h.observations.len().max(1) as f64;
            let p0 = h.observations.iter().map(|o| o.0).sum::<f64>() / n;
            let params = match fits.get(&(c.clone(), m.clone())) {
                Some(&(a, slope)) => {
                    let beta = (-slope).max(0.0);
                    let q0 = if slope <= 0.0 {
                        (a + slope * p0).exp()
                    } else {
                        h.volume / n
                    };
                    ExponentialParams { q0, p0, beta }
                }
                None => {
                    let beta = pooled
                        .get(m.as_str())
                        .filter(|e| e.1 > 0.0)
                        .map(|e| (e.0 / e.1).max(0.0))
                        .unwrap_or(default_beta);
                    ExponentialParams { q0: h.volume / n, p0, beta }
                }
            };
            pairs.insert((c.clone(), m.clone()), params);
        }
        Self { pairs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionalPair {
    pub alpha: f64,
    pub beta: f64,
    /// Regional indicator `G_j` of the customer's region.
    pub g: f64,
    /// Scale `s_i`.
    pub s: f64,
    /// Display level `a_i`.
    pub a: f64,
    pub p_anchor: f64,
}

/// Regional linear demand with display elasticity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionalLinearDemand {
    #[serde(with = "crate::pairs")]
    pub pairs: BTreeMap<(String, String), RegionalPair>,
    pub gamma: f64,
    /// Conflict coefficient; zero disables the conflict variant.
    pub eta: f64,
}

impl RegionalLinearDemand {
    pub fn curve(&self, r: &RegionalPair) -> DemandCurve {
        DemandCurve::Linear {
            scale: r.s * r.a.powf(self.gamma),
            intercept: r.alpha * r.g + self.eta * r.p_anchor,
            slope: r.beta + self.eta,
        }
    }

    pub fn demand(&self, customer: &str, material: &str, p: f64) -> Option<f64> {
        self.pairs
            .get(&(customer.to_string(), material.to_string()))
            .map(|r| self.curve(r).demand(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DemandModel {
    Exponential(ExponentialElasticityModel),
    Regional(RegionalLinearDemand),
}

impl DemandModel {
    pub fn demand(&self, customer: &str, material: &str, p: f64) -> Option<f64> {
        match self {
            DemandModel::Exponential(m) => m.demand(customer, material, p),
            DemandModel::Regional(m) => m.demand(customer, material, p),
        }
    }

    /// Every modelled pair with its curve, in key order.
    pub fn curves(&self) -> Vec<((String, String), DemandCurve)> {
        match self {
            DemandModel::Exponential(m) => m
                .pairs
                .iter()
                .map(|(k, e)| (k.clone(), DemandCurve::Exponential { q0: e.q0, p0: e.p0, beta: e.beta }))
                .collect(),
            DemandModel::Regional(m) => m.pairs.iter().map(|(k, r)| (k.clone(), m.curve(r))).collect(),
        }
    }

    pub fn curve(&self, customer: &str, material: &str) -> Option<DemandCurve> {
        let key = (customer.to_string(), material.to_string());
        match self {
            DemandModel::Exponential(m) => m
                .pairs
                .get(&key)
                .map(|e| DemandCurve::Exponential { q0: e.q0, p0: e.p0, beta: e.beta }),
            DemandModel::Regional(m) => m.pairs.get(&key).map(|r| m.curve(r)),
        }
    }
}
