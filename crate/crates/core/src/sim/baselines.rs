use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::dsl::PRICE_FLOOR;
use crate::fitness::ExponentialElasticityModel;
use crate::ingest::MarketDataset;

/// Price/demand observations over `n` items, one row per observation;
/// `group[r]` names the unit whose per-item means are removed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LowRankHistory {
    pub prices: Vec<Vec<f64>>,
    pub demand: Vec<Vec<f64>>,
    /// Whether the item was observed in the row.
    pub observed: Vec<Vec<bool>>,
    pub group: Vec<usize>,
}

impl LowRankHistory {
    pub fn items(&self) -> usize {
        self.prices.first().map_or(0, Vec::len)
    }

    /// Per (group, item) mean price and demand over observed rows.
    pub fn means(&self) -> BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<bool>)> {
        let n = self.items();
        let mut acc: BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<usize>)> = BTreeMap::new();
        for r in 0..self.prices.len() {
            let e = acc
                .entry(self.group[r])
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n], vec![0; n]));
            for i in 0..n {
                if self.observed[r][i] {
                    e.0[i] += self.prices[r][i];
                    e.1[i] += self.demand[r][i];
                    e.2[i] += 1;
                }
            }
        }
        acc.into_iter()
            .map(|(g, (p, q, k))| {
                let p = p.iter().zip(&k).map(|(p, &k)| if k > 0 { p / k as f64 } else { 0.0 }).collect();
                let q = q.iter().zip(&k).map(|(q, &k)| if k > 0 { q / k as f64 } else { 0.0 }).collect();
                (g, (p, q, k.iter().map(|&k| k > 0).collect()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    /// Orthonormal basis of the sensitivity subspace, `n × d`.
    pub u: DMatrix<f64>,
    /// Projected sensitivity `UᵀSU`, `d × d`.
    pub v: DMatrix<f64>,
    pub rank: usize,
}

impl LowRankModel {
    /// `∂q/∂p ≈ −UVUᵀ`.
    pub fn response(&self) -> DMatrix<f64> {
        -(&self.u * &self.v * self.u.transpose())
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&x| x > 1e-9 * top.max(1e-300)).count()
}

/// Least-squares demand response on within-group deviations, then the top-`d`
/// eigenvectors (by magnitude) of the symmetrized sensitivity.
pub fn fit_lowrank(h: &LowRankHistory, d: usize) -> Result<LowRankModel, SimError> {
    let n = h.items();
    if d == 0 || d > n {
        return Err(SimError::Config(format!("rank {d} must lie in 1..={n}")));
    }
    let means = h.means();
    let rows = h.prices.len();
    let mut dp = DMatrix::zeros(rows, n);
    let mut dq = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let (pm, qm, _) = &means[&h.group[r]];
        for i in 0..n {
            if h.observed[r][i] {
                dp[(r, i)] = h.prices[r][i] - pm[i];
                dq[(r, i)] = h.demand[r][i] - qm[i];
            }
        }
    }
    let rank = numeric_rank(&dp);
    if rank < d {
        return Err(SimError::History(format!(
            "price deviations span {rank} independent directions, rank {d} needs at least {d}"
        )));
    }
    let pinv = dp
        .clone()
        .pseudo_inverse(1e-10)
        .map_err(|e| SimError::History(e.to_string()))?;
    let bt = pinv * dq;
    let s = -(&bt + bt.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()).then(a.cmp(&b)));
    let u = DMatrix::from_fn(n, d, |r, c| eig.eigenvectors[(r, order[c])]);
    let v = u.transpose() * &s * &u;
    Ok(LowRankModel { u, v, rank: d })
}

/// Gradient ascent on `pᵀq(p)` over `p = p̄ + U_obs x` with `q = q̄ − (UVUᵀ)(p − p̄)`,
/// prices clamped to `[lo·p̄, hi·p̄]`. Returns prices for observed items.
pub fn optimize_revenue(
    model: &LowRankModel,
    p_bar: &[f64],
    q_bar: &[f64],
    observed: &[bool],
    rounds: usize,
    band: (f64, f64),
) -> Vec<f64> {
    let idx: Vec<usize> = (0..p_bar.len()).filter(|&i| observed[i]).collect();
    let m = idx.len();
    if m == 0 {
        return Vec::new();
    }
    let d = model.rank;
    let uo = DMatrix::from_fn(m, d, |r, c| model.u[(idx[r], c)]);
    let full = model.response();
    let b = DMatrix::from_fn(m, m, |r, c| full[(idx[r], idx[c])]);
    let pb = DVector::from_iterator(m, idx.iter().map(|&i| p_bar[i]));
    let qb = DVector::from_iterator(m, idx.iter().map(|&i| q_bar[i]));
    let clamp = |p: DVector<f64>| {
        DVector::from_iterator(
            m,
            p.iter()
                .zip(pb.iter())
                .map(|(&p, &b)| p.clamp((band.0 * b).max(PRICE_FLOOR), (band.1 * b).max(PRICE_FLOOR))),
        )
    };
    let revenue = |p: &DVector<f64>| {
        let q = &qb + &b * (p - &pb);
        p.dot(&q)
    };
    let mut x = DVector::zeros(d);
    let mut p = clamp(&pb + &uo * &x);
    let mut r = revenue(&p);
    let mut step = 1.0 / (pb.norm() + qb.norm() + 1.0);
    for _ in 0..rounds {
        let q = &qb + &b * (&p - &pb);
        let grad_p = &q + b.transpose() * &p;
        let gx = uo.transpose() * grad_p;
        if gx.norm() < 1e-12 {
            break;
        }
        let mut moved = false;
        for _ in 0..40 {
            let xn = &x + &gx * step;
            let pn = clamp(&pb + &uo * &xn);
            let rn = revenue(&pn);
            if rn > r {
                x = xn;
                p = pn;
                r = rn;
                step *= 2.0;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    p.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowRankConfig {
    pub rank: usize,
    pub rounds: usize,
    /// Prices stay within these multiples of the historical mean.
    pub band: (f64, f64),
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            rounds: 200,
            band: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    #[serde(with = "crate::pairs")]
    pub prices: BTreeMap<(String, String), f64>,
    /// Cluster per material, in SKU order, for the clustering baseline.
    pub clusters: Vec<usize>,
}

/// Observation rows are (customer, period); items are materials.
fn history_matrix(ds: &MarketDataset) -> (LowRankHistory, Vec<String>, Vec<String>) {
    let materials: Vec<String> = ds.skus.iter().map(|s| s.code.clone()).collect();
    let customers: Vec<String> = ds.customers.iter().map(|c| c.id.clone()).collect();
    let mi: BTreeMap<&str, usize> = materials.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let ci: BTreeMap<&str, usize> = customers.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let n = materials.len();
    let mut rows: BTreeMap<(usize, i64), (Vec<f64>, Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for t in &ds.transactions {
        let (Some(&c), Some(&m)) = (ci.get(t.customer_id.as_str()), mi.get(t.material_code.as_str())) else {
            continue;
        };
        let e = rows
            .entry((c, t.period))
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n], vec![false; n]));
        e.0[m] = t.unit_price;
        e.1[m] += t.volume;
        e.2[m] = true;
    }
    let mut h = LowRankHistory::default();
    for ((c, _), (p, q, o)) in rows {
        h.prices.push(p);
        h.demand.push(q);
        h.observed.push(o);
        h.group.push(c);
    }
    (h, customers, materials)
}

/// Revenue-seeking prices in a rank-`d` projection of the estimated
/// cross-price sensitivity.
pub fn baseline_lowrank(ds: &MarketDataset, cfg: &LowRankConfig) -> Result<BaselineOutcome, SimError> {
    let (h, customers, materials) = history_matrix(ds);
    let model = fit_lowrank(&h, cfg.rank)?;
    let mut out = BaselineOutcome::default();
    for (g, (pm, qm, obs)) in h.means() {
        let prices = optimize_revenue(&model, &pm, &qm, &obs, cfg.rounds, cfg.band);
        let items = (0..materials.len()).filter(|&i| obs[i]);
        for (i, p) in items.zip(prices) {
            out.prices.insert((customers[g].clone(), materials[i].clone()), p);
        }
    }
    Ok(out)
}

/// `Δ0·t^{−1/4}`.
pub fn perturbation(delta0: f64, t: usize) -> f64 {
    delta0 * (t.max(1) as f64).powf(-0.25)
}

/// Leader clustering: each point joins the first cluster whose leader lies
/// within `radius` (Euclidean), otherwise starts a new one.
pub fn cluster_parameters(params: &[Vec<f64>], radius: f64) -> Vec<usize> {
    let mut leaders: Vec<usize> = Vec::new();
    params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dist = |j: usize| p.iter().zip(&params[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            match leaders.iter().position(|&l| dist(l) <= radius) {
                Some(k) => k,
                None => {
                    leaders.push(i);
                    leaders.len() - 1
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub delta0: f64,
    pub radius: f64,
    /// Round index `T̃` at which prices are read off.
    pub round: usize,
    pub default_beta: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            delta0: 0.5,
            radius: 0.5,
            round: 16,
            default_beta: 0.2,
        }
    }
}

/// Materials grouped by estimated elasticity at their reference price; each
/// pair is priced at the cluster's profit-optimal markup plus the exploration
/// perturbation for the configured round.
pub fn baseline_clustering(ds: &MarketDataset, cfg: &ClusteringConfig) -> Result<BaselineOutcome, SimError> {
    if !(cfg.delta0 > 0.0) {
        return Err(SimError::Config("delta0 must be positive".into()));
    }
    let est = ExponentialElasticityModel::estimate(ds, cfg.default_beta);
    let mut per_sku: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for ((_, m), e) in &est.pairs {
        let a = per_sku.entry(m.as_str()).or_default();
        a.0 += e.beta;
        a.1 += 1.0;
    }
    let beta: Vec<f64> = ds
        .skus
        .iter()
        .map(|s| per_sku.get(s.code.as_str()).map_or(cfg.default_beta, |a| a.0 / a.1))
        .collect();
    let params: Vec<Vec<f64>> = ds
        .skus
        .iter()
        .zip(&beta)
        .map(|(s, b)| vec![b * s.weighted_price])
        .collect();
    let clusters = cluster_parameters(&params, cfg.radius);
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let mut cb = vec![(0.0, 0.0); k];
    for (c, b) in clusters.iter().zip(&beta) {
        cb[*c].0 += b;
        cb[*c].1 += 1.0;
    }
    let sign = if cfg.round % 2 == 0 { 1.0 } else { -1.0 };
    let delta = sign * perturbation(cfg.delta0, cfg.round);
    let mut out = BaselineOutcome {
        clusters: clusters.clone(),
        ..BaselineOutcome::default()
    };
    let index: BTreeMap<&str, usize> = ds.skus.iter().enumerate().map(|(i, s)| (s.code.as_str(), i)).collect();
    for (c, m) in est.pairs.keys() {
        let i = index[m.as_str()];
        let b = cb[clusters[i]].0 / cb[clusters[i]].1;
        let p = if b > 0.0 {
            ds.skus[i].unit_cost + 1.0 / b
        } else {
            ds.skus[i].weighted_price
        };
        out.prices.insert((c.clone(), m.clone()), (p + delta).max(PRICE_FLOOR));
    }
    Ok(out)
}
