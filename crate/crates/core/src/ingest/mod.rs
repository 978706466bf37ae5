//! Market data loading, validation and preprocessing.

mod bundle;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

pub use bundle::{load_csv_bundle, save_csv_bundle};
pub use types::*;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch in {file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("malformed cell in {file} row {row} column `{column}`: {value:?} ({reason})")]
    Malformed {
        file: String,
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("dangling reference: {kind} `{id}` does not exist")]
    Dangling { kind: &'static str, id: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("undefined weighted price for material `{0}`: zero total volume")]
    UndefinedPrice(String),
    #[error("csv error in {file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    CsvBundle,
    Json,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<MarketDataset, IngestError> {
    let ds = match format {
        DatasetFormat::CsvBundle => load_csv_bundle(path)?,
        DatasetFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)?
        }
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &MarketDataset, path: &Path, format: DatasetFormat) -> Result<(), IngestError> {
    match format {
        DatasetFormat::CsvBundle => save_csv_bundle(ds, path),
        DatasetFormat::Json => {
            let text = serde_json::to_string_pretty(ds)?;
            std::fs::write(path, text).map_err(|source| IngestError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    }
}

/// Picks the format from the path: directories are CSV bundles, files are JSON.
pub fn detect_format(path: &Path) -> DatasetFormat {
    if path.is_dir() {
        DatasetFormat::CsvBundle
    } else {
        DatasetFormat::Json
    }
}

fn check_real(v: f64, what: impl Fn() -> String, nonneg: bool) -> Result<(), IngestError> {
    if !v.is_finite() || (nonneg && v < 0.0) {
        return Err(IngestError::Invalid(format!("{} = {v}", what())));
    }
    Ok(())
}

impl MarketDataset {
    pub fn validate(&self) -> Result<(), IngestError> {
        let dim = self.meta.customer_feature_dim();
        let mut ids = BTreeSet::new();
        for c in &self.customers {
            if !ids.insert(c.id.as_str()) {
                return Err(IngestError::Invalid(format!("duplicate customer id `{}`", c.id)));
            }
            if !c.location.is_valid() {
                return Err(IngestError::Invalid(format!("customer `{}` has invalid coordinates", c.id)));
            }
            check_real(c.scale, || format!("customer `{}` scale", c.id), true)?;
            check_real(c.avg_order_value, || format!("customer `{}` avg_order_value", c.id), true)?;
            check_real(c.forecast_total, || format!("customer `{}` forecast_total", c.id), true)?;
            if c.features.len() != dim {
                return Err(IngestError::Invalid(format!(
                    "customer `{}` has {} features, expected {dim}",
                    c.id,
                    c.features.len()
                )));
            }
            for &f in &c.features {
                check_real(f, || format!("customer `{}` feature", c.id), false)?;
            }
        }
        let mut codes = BTreeSet::new();
        let mut k2_parent: HashMap<&str, &str> = HashMap::new();
        for s in &self.skus {
            if !codes.insert(s.code.as_str()) {
                return Err(IngestError::Invalid(format!("duplicate material code `{}`", s.code)));
            }
            check_real(s.unit_cost, || format!("material `{}` unit_cost", s.code), true)?;
            check_real(s.weighted_price, || format!("material `{}` weighted_price", s.code), true)?;
            if let Some(l) = s.locked_amount {
                check_real(l, || format!("material `{}` locked_amount", s.code), true)?;
            }
            if s.embedding.len() != self.meta.sku_embedding_dim {
                return Err(IngestError::Invalid(format!(
                    "material `{}` has embedding length {}, expected {}",
                    s.code,
                    s.embedding.len(),
                    self.meta.sku_embedding_dim
                )));
            }
            match k2_parent.get(s.secondary_category.as_str()) {
                Some(&k1) if k1 != s.primary_category => {
                    return Err(IngestError::Invalid(format!(
                        "secondary category `{}` appears under `{k1}` and `{}`",
                        s.secondary_category, s.primary_category
                    )));
                }
                _ => {
                    k2_parent.insert(&s.secondary_category, &s.primary_category);
                }
            }
        }
        if self.meta.period_start > self.meta.period_end {
            return Err(IngestError::Invalid("period_start exceeds period_end".into()));
        }
        for t in &self.transactions {
            if !ids.contains(t.customer_id.as_str()) {
                return Err(IngestError::Dangling {
                    kind: "customer",
                    id: t.customer_id.clone(),
                });
            }
            if !codes.contains(t.material_code.as_str()) {
                return Err(IngestError::Dangling {
                    kind: "material",
                    id: t.material_code.clone(),
                });
            }
            check_real(t.volume, || format!("transaction volume for `{}`", t.material_code), true)?;
            if !(t.unit_price.is_finite() && t.unit_price > 0.0) {
                return Err(IngestError::Invalid(format!(
                    "transaction unit_price for `{}` must be positive, got {}",
                    t.material_code, t.unit_price
                )));
            }
            if t.period < self.meta.period_start || t.period > self.meta.period_end {
                return Err(IngestError::Invalid(format!(
                    "transaction period {} outside [{}, {}]",
                    t.period, self.meta.period_start, self.meta.period_end
                )));
            }
        }
        let store_dim = self.stores.first().map(|s| s.demographics.len());
        for s in &self.stores {
            if !s.location.is_valid() {
                return Err(IngestError::Invalid(format!("store `{}` has invalid coordinates", s.id)));
            }
            if Some(s.demographics.len()) != store_dim {
                return Err(IngestError::Invalid(format!("store `{}` demographic length differs", s.id)));
            }
        }
        for (k, &v) in &self.expenses.entries {
            check_real(v, || format!("expense `{k}`"), true)?;
        }
        for r in &self.cost_rows {
            check_real(r.unit_cost, || format!("cost row for `{}`", r.client_name), true)?;
        }
        Ok(())
    }

    pub fn customer_index(&self) -> HashMap<&str, usize> {
        self.customers.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect()
    }

    pub fn sku_index(&self) -> HashMap<&str, usize> {
        self.skus.iter().enumerate().map(|(i, s)| (s.code.as_str(), i)).collect()
    }

    pub fn customer(&self, id: &str) -> Option<&CustomerRecord> {
        self.customers.iter().find(|c| c.id == id)
    }

    pub fn sku(&self, code: &str) -> Option<&SkuRecord> {
        self.skus.iter().find(|s| s.code == code)
    }

    /// Customers whose forecast total strictly exceeds `theta`.
    pub fn filter_candidates(&self, theta: f64) -> BTreeSet<String> {
        self.customers
            .iter()
            .filter(|c| c.forecast_total > theta)
            .map(|c| c.id.clone())
            .collect()
    }

    /// Sales-volume weighted unit price of one material.
    pub fn weighted_unit_price(&self, material: &str) -> Result<f64, IngestError> {
        let (mut sp, mut s) = (0.0, 0.0);
        for t in self.transactions.iter().filter(|t| t.material_code == material) {
            sp += t.volume * t.unit_price;
            s += t.volume;
        }
        if s > 0.0 {
            Ok(sp / s)
        } else {
            Err(IngestError::UndefinedPrice(material.to_string()))
        }
    }

    /// Fills `weighted_price` from history for every material with positive volume.
    pub fn refresh_weighted_prices(&mut self) {
        let mut acc: HashMap<&str, (f64, f64)> = HashMap::new();
        for t in &self.transactions {
            let e = acc.entry(t.material_code.as_str()).or_default();
            e.0 += t.volume * t.unit_price;
            e.1 += t.volume;
        }
        let prices: Vec<Option<f64>> = self
            .skus
            .iter()
            .map(|s| acc.get(s.code.as_str()).filter(|e| e.1 > 0.0).map(|e| e.0 / e.1))
            .collect();
        for (s, p) in self.skus.iter_mut().zip(prices) {
            if let Some(p) = p {
                s.weighted_price = p;
            }
        }
    }

    /// Binds each cost row to the nearest customer name by Levenshtein distance.
    pub fn match_costs(&self, rows: &[CostRow], max_distance: usize) -> CostMatch {
        let mut out = CostMatch::default();
        for (i, r) in rows.iter().enumerate() {
            let mut best: Option<(&str, usize)> = None;
            for c in &self.customers {
                let d = strsim::levenshtein(&r.client_name, &c.name);
                let better = match best {
                    None => true,
                    Some((id, bd)) => d < bd || (d == bd && c.id.as_str() < id),
                };
                if better {
                    best = Some((c.id.as_str(), d));
                }
            }
            match best {
                Some((id, d)) if d <= max_distance => {
                    out.matched_rows += 1;
                    out.costs
                        .entry((id.to_string(), r.material_code.clone()))
                        .or_insert(r.unit_cost);
                }
                _ => out.unmatched.push(UnmatchedCost {
                    row: i,
                    client_name: r.client_name.clone(),
                    material_code: r.material_code.clone(),
                    nearest: best.map(|(id, d)| (id.to_string(), d)),
                }),
            }
        }
        out
    }

    /// Inner join of transactions with customers and materials.
    pub fn join_base(&self) -> Vec<JoinedRow> {
        let cidx = self.customer_index();
        let sidx = self.sku_index();
        self.transactions
            .iter()
            .filter(|t| cidx.contains_key(t.customer_id.as_str()))
            .filter_map(|t| {
                let s = &self.skus[*sidx.get(t.material_code.as_str())?];
                Some(JoinedRow {
                    customer_id: t.customer_id.clone(),
                    material_code: t.material_code.clone(),
                    primary_category: s.primary_category.clone(),
                    secondary_category: s.secondary_category.clone(),
                    period: t.period,
                    volume: t.volume,
                    unit_price: t.unit_price,
                    unit_cost: s.unit_cost,
                    weighted_price: s.weighted_price,
                })
            })
            .collect()
    }

    /// Distinct primary categories in material order of first appearance, sorted.
    pub fn primary_categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.skus.iter().map(|s| s.primary_category.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Per (customer, material) history aggregated over periods: (total volume, total revenue, periods seen).
    pub fn pair_history(&self) -> BTreeMap<(String, String), PairHistory> {
        let mut out: BTreeMap<(String, String), PairHistory> = BTreeMap::new();
        for t in &self.transactions {
            let e = out
                .entry((t.customer_id.clone(), t.material_code.clone()))
                .or_default();
            e.volume += t.volume;
            e.revenue += t.volume * t.unit_price;
            e.observations.push((t.unit_price, t.volume));
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairHistory {
    pub volume: f64,
    pub revenue: f64,
    /// (price, volume) per transaction in file order.
    pub observations: Vec<(f64, f64)>,
}

impl PairHistory {
    pub fn mean_price(&self) -> Option<f64> {
        if self.volume > 0.0 {
            Some(self.revenue / self.volume)
        } else if !self.observations.is_empty() {
            Some(self.observations.iter().map(|o| o.0).sum::<f64>() / self.observations.len() as f64)
        } else {
            None
        }
    }
}
