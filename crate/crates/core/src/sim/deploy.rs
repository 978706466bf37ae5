use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WorldTruth;
use crate::dsl::DecisionRule;
use crate::fitness::{EvalContext, FitnessError};
use crate::pipeline::AllocationPlan;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub volume: f64,
    pub revenue: f64,
    pub profit: f64,
    pub pairs: usize,
}

impl Realized {
    fn add(mut self, o: Realized) -> Realized {
        self.volume += o.volume;
        self.revenue += o.revenue;
        self.profit += o.profit;
        self.pairs += o.pairs;
        self
    }
}

/// Multiplicative noise factor for the `i`-th pair; independent of thread order.
fn noise_factor(truth: &WorldTruth, seed: u64, i: usize) -> f64 {
    if truth.noise <= 0.0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
    (1.0 + truth.noise * z).max(0.0)
}

/// Realized orders when each pair is offered at the given price.
pub fn deploy_prices(prices: &BTreeMap<(String, String), f64>, truth: &WorldTruth, seed: u64) -> Realized {
    let items: Vec<(&(String, String), &f64)> = prices.iter().collect();
    let parts: Vec<Realized> = items
        .par_iter()
        .enumerate()
        .map(|(i, ((c, m), &p))| {
            let Some(curve) = truth.curve(c, m) else {
                return Realized::default();
            };
            let q = curve.demand(p) * noise_factor(truth, seed, i);
            Realized {
                volume: q,
                revenue: q * p,
                profit: q * (p - truth.cost(m)),
                pairs: 1,
            }
        })
        .collect();
    parts.into_iter().fold(Realized::default(), Realized::add)
}

/// Offers every pair the rule stocks at the rule's price.
pub fn deploy_rule(rule: &DecisionRule, ctx: &EvalContext, truth: &WorldTruth, seed: u64) -> Result<Realized, FitnessError> {
    let decisions = ctx.decisions(rule)?;
    let prices = ctx
        .rows
        .iter()
        .zip(decisions)
        .filter_map(|(r, d)| d.price.filter(|_| d.stock).map(|p| ((r.customer.clone(), r.material.clone()), p)))
        .collect();
    Ok(deploy_prices(&prices, truth, seed))
}

/// Each plan line sells the smaller of its allocated units and realized demand.
pub fn deploy_plan(plan: &AllocationPlan, truth: &WorldTruth, seed: u64) -> Realized {
    let parts: Vec<Realized> = plan
        .lines
        .par_iter()
        .enumerate()
        .map(|(i, l)| {
            let demand = truth
                .curve(&l.customer, &l.material)
                .map_or(0.0, |c| c.demand(l.price) * noise_factor(truth, seed, i));
            let q = l.units.min(demand).max(0.0);
            Realized {
                volume: q,
                revenue: q * l.price,
                profit: q * (l.price - truth.cost(&l.material)),
                pairs: 1,
            }
        })
        .collect();
    parts.into_iter().fold(Realized::default(), Realized::add)
}
