use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{GeoPoint, MarketDataset};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in the units of `r`.
pub fn haversine(a: GeoPoint, b: GeoPoint, r: f64) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().min(1.0).asin()
}

/// Store–customer prior similarity in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffinityPrior {
    /// Keyed by (store, customer).
    #[serde(with = "crate::pairs")]
    pub scores: BTreeMap<(String, String), f64>,
}

impl AffinityPrior {
    pub fn insert(&mut self, store: &str, customer: &str, score: f64) {
        self.scores.insert((store.into(), customer.into()), score);
    }

    pub fn get(&self, store: &str, customer: &str) -> f64 {
        self.scores
            .get(&(store.to_string(), customer.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    /// Reads `store,customer,score` rows with a header.
    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut out = Self::default();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.deserialize::<(String, String, f64)>() {
            let (s, c, v) = rec?;
            out.scores.insert((s, c), v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// `g_k` per customer id.
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// `w_jk` keyed by (store, customer).
    #[serde(with = "crate::pairs")]
    pub weights: BTreeMap<(String, String), f64>,
    /// Stores bound to a single customer by a prior above the threshold.
    pub exclusive: BTreeMap<String, String>,
}

/// Smallest coefficient at which the median customer has a store within `α·s_k`.
pub fn calibrate_alpha(ds: &MarketDataset) -> f64 {
    let mut need: Vec<f64> = ds
        .customers
        .iter()
        .filter(|c| c.scale > 0.0)
        .filter_map(|c| {
            ds.stores
                .iter()
                .map(|s| haversine(c.location, s.location, EARTH_RADIUS_KM) / c.scale)
                .min_by(f64::total_cmp)
        })
        .collect();
    if need.is_empty() {
        return 1.0;
    }
    need.sort_by(f64::total_cmp);
    need[(need.len() - 1) / 2].max(f64::MIN_POSITIVE)
}

/// Distance-weighted store demographics per customer.
pub fn aggregate_demographics(ds: &MarketDataset, priors: &AffinityPrior, alpha: f64, theta: f64) -> Aggregation {
    let dim = ds.stores.first().map_or(0, |s| s.demographics.len());
    let mut agg = Aggregation::default();
    for c in &ds.customers {
        agg.vectors.insert(c.id.clone(), vec![0.0; dim]);
    }
    for store in &ds.stores {
        let bound = ds
            .customers
            .iter()
            .map(|c| (priors.get(&store.id, &c.id), c))
            .filter(|(p, _)| *p > theta)
            .fold(None::<(f64, &str)>, |best, (p, c)| match best {
                Some((bp, _)) if bp >= p => best,
                _ => Some((p, &c.id)),
            });
        let mut w: Vec<(String, f64)> = Vec::new();
        if let Some((_, cid)) = bound {
            agg.exclusive.insert(store.id.clone(), cid.to_string());
            w.push((cid.to_string(), 1.0));
        } else {
            let raw: Vec<(String, f64)> = ds
                .customers
                .iter()
                .filter_map(|c| {
                    let d = haversine(c.location, store.location, EARTH_RADIUS_KM);
                    (d <= alpha * c.scale).then(|| (c.id.clone(), c.scale / (d * d).max(1e-12)))
                })
                .collect();
            let total: f64 = raw.iter().map(|(_, v)| v).sum();
            if total > 0.0 {
                w = raw.into_iter().map(|(id, v)| (id, v / total)).collect();
            }
        }
        for (cid, wt) in w {
            if let Some(g) = agg.vectors.get_mut(&cid) {
                for (gi, qi) in g.iter_mut().zip(&store.demographics) {
                    *gi += wt * qi;
                }
            }
            agg.weights.insert((store.id.clone(), cid), wt);
        }
    }
    agg
}
