use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerRecord {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    /// Business scale `s_k` in revenue units.
    pub scale: f64,
    /// Monthly average order value `A_c`.
    pub avg_order_value: f64,
    /// Forecast total `ŝ_c` in units.
    pub forecast_total: f64,
    pub features: Vec<f64>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkuRecord {
    pub code: String,
    pub primary_category: String,
    pub secondary_category: String,
    pub unit_cost: f64,
    pub weighted_price: f64,
    pub embedding: Vec<f64>,
    /// Policy-locked amount in currency, applied to every candidate customer.
    pub locked_amount: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub customer_id: String,
    pub material_code: String,
    pub volume: f64,
    pub unit_price: f64,
    pub period: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreProfile {
    pub id: String,
    pub location: GeoPoint,
    pub demographics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub client_name: String,
    pub material_code: String,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpenseLedger {
    pub entries: BTreeMap<String, f64>,
}

impl ExpenseLedger {
    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub customer_feature_names: Vec<String>,
    pub sku_embedding_dim: usize,
    pub currency: String,
    pub period_start: i64,
    pub period_end: i64,
}

impl DatasetMeta {
    pub fn customer_feature_dim(&self) -> usize {
        self.customer_feature_names.len()
    }

    pub fn period_count(&self) -> usize {
        (self.period_end - self.period_start + 1).max(0) as usize
    }
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            customer_feature_names: Vec::new(),
            sku_embedding_dim: 0,
            currency: "CNY".to_string(),
            period_start: 0,
            period_end: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDataset {
    pub meta: DatasetMeta,
    pub customers: Vec<CustomerRecord>,
    pub skus: Vec<SkuRecord>,
    pub transactions: Vec<Transaction>,
    #[serde(default)]
    pub stores: Vec<StoreProfile>,
    #[serde(default)]
    pub expenses: ExpenseLedger,
    #[serde(default)]
    pub cost_rows: Vec<CostRow>,
}

/// One inner-joined observation of the base table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedRow {
    pub customer_id: String,
    pub material_code: String,
    pub primary_category: String,
    pub secondary_category: String,
    pub period: i64,
    pub volume: f64,
    pub unit_price: f64,
    pub unit_cost: f64,
    pub weighted_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmatchedCost {
    pub row: usize,
    pub client_name: String,
    pub material_code: String,
    pub nearest: Option<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostMatch {
    #[serde(with = "crate::pairs")]
    pub costs: BTreeMap<(String, String), f64>,
    pub matched_rows: usize,
    pub unmatched: Vec<UnmatchedCost>,
}
