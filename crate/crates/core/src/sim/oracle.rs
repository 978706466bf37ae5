use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SimError, World};
use crate::dsl::PRICE_FLOOR;
use crate::fitness::DemandCurve;

fn check(beta: f64, theta: f64) -> Result<(), SimError> {
    if !(theta < 1.0) {
        return Err(SimError::Oracle(format!("theta = {theta} leaves the markup weight at zero")));
    }
    if !(beta > 0.0) {
        return Err(SimError::Oracle(format!("beta = {beta} must be positive")));
    }
    Ok(())
}

/// Maximizer of `θq + (1−θ)(p − p_b1)q` under `q ∝ αG − βp`:
/// `αG/(2β) + p_b1/2 − θ/(2(1−θ))`.
pub fn analytic_optimal_price(alpha: f64, g: f64, beta: f64, p_b1: f64, theta: f64) -> Result<f64, SimError> {
    check(beta, theta)?;
    Ok(alpha * g / (2.0 * beta) + p_b1 / 2.0 - theta / (2.0 * (1.0 - theta)))
}

/// The commonly quoted closed form `αG/(2β) + p_b1/2 + θ/(2(1−θ)β)`; agrees
/// with [`analytic_optimal_price`] only at θ = 0 or, up to sign, at β = 1.
pub fn published_closed_form_price(alpha: f64, g: f64, beta: f64, p_b1: f64, theta: f64) -> Result<f64, SimError> {
    check(beta, theta)?;
    Ok(alpha * g / (2.0 * beta) + p_b1 / 2.0 + theta / (2.0 * (1.0 - theta) * beta))
}

/// `θq + (1−θ)(p − p_b1)q`.
pub fn utility_b2(curve: &DemandCurve, p: f64, p_b1: f64, theta: f64) -> f64 {
    let q = curve.demand(p);
    theta * q + (1.0 - theta) * (p - p_b1) * q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub stock: bool,
    pub price: f64,
    pub units: f64,
}

impl GoldenEntry {
    pub fn action(&self) -> f64 {
        if self.stock {
            self.price
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldenResponse {
    #[serde(with = "crate::pairs")]
    pub entries: BTreeMap<(String, String), GoldenEntry>,
}

impl GoldenResponse {
    pub fn actions(&self) -> BTreeMap<(String, String), f64> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.action())).collect()
    }
}

const GRID_POINTS: usize = 200;

fn grid_argmax(curve: &DemandCurve, p_bar: f64, cost: f64, theta: f64) -> f64 {
    let (lo, hi) = ((0.5 * p_bar).ln(), (2.0 * p_bar).ln());
    let mut best = (f64::NEG_INFINITY, p_bar);
    for i in 0..GRID_POINTS {
        let p = (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp();
        let u = utility_b2(curve, p, cost, theta);
        if u > best.0 {
            best = (u, p);
        }
    }
    best.1
}

/// Ideal decision per pair: the analytic optimum for linear demand, a
/// 200-point log grid over `[0.5p̄, 2p̄]` for exponential demand.
pub fn golden_response(world: &World) -> Result<GoldenResponse, SimError> {
    let truth = &world.truth;
    let curves = truth.model.curves();
    let entries: Result<Vec<_>, SimError> = curves
        .par_iter()
        .map(|(key, curve)| {
            let cost = truth.cost(&key.1);
            let price = match *curve {
                DemandCurve::Linear { intercept, slope, .. } => {
                    analytic_optimal_price(intercept, 1.0, slope, cost, truth.theta)?
                }
                DemandCurve::Exponential { p0, .. } => grid_argmax(curve, p0, cost, truth.theta),
            };
            let price = price.max(PRICE_FLOOR);
            let stock = utility_b2(curve, price, cost, truth.theta) > 0.0;
            Ok((
                key.clone(),
                GoldenEntry {
                    stock,
                    price,
                    units: if stock { curve.demand(price) } else { 0.0 },
                },
            ))
        })
        .collect();
    Ok(GoldenResponse {
        entries: entries?.into_iter().collect(),
    })
}
