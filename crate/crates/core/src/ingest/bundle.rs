use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::*;

struct Table {
    file: String,
    headers: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(dir: &Path, file: &str, required: bool) -> Result<Option<Table>, IngestError> {
        let path = dir.join(file);
        if !path.exists() {
            if required {
                return Err(IngestError::Io {
                    path,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                });
            }
            return Ok(None);
        }
        let csv_err = |source| IngestError::Csv {
            file: file.to_string(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&path)
            .map_err(csv_err)?;
        let headers = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let rows = rdr.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
        Ok(Some(Table {
            file: file.to_string(),
            headers,
            rows,
        }))
    }

    fn col(&self, name: &str) -> Result<usize, IngestError> {
        self.headers.get(name).copied().ok_or_else(|| IngestError::MissingColumn {
            file: self.file.clone(),
            column: name.to_string(),
        })
    }

    fn opt_col(&self, name: &str) -> Option<usize> {
        self.headers.get(name).copied()
    }

    fn malformed(&self, row: usize, column: &str, value: &str, reason: &str) -> IngestError {
        IngestError::Malformed {
            file: self.file.clone(),
            row: row + 1,
            column: column.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        }
    }

    fn text(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("").trim()
    }

    fn real(&self, row: usize, column: &str) -> Result<f64, IngestError> {
        let c = self.col(column)?;
        self.parse_real(row, column, self.text(row, c))
    }

    fn opt_real(&self, row: usize, column: &str) -> Result<Option<f64>, IngestError> {
        match self.opt_col(column) {
            None => Ok(None),
            Some(c) => {
                let v = self.text(row, c);
                if v.is_empty() {
                    Ok(None)
                } else {
                    self.parse_real(row, column, v).map(Some)
                }
            }
        }
    }

    fn parse_real(&self, row: usize, column: &str, v: &str) -> Result<f64, IngestError> {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.malformed(row, column, v, "not a finite decimal")),
        }
    }

    fn vector(&self, row: usize, column: &str) -> Result<Vec<f64>, IngestError> {
        let c = self.col(column)?;
        let v = self.text(row, c);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(';')
            .map(|p| self.parse_real(row, column, p.trim()))
            .collect()
    }
}

fn list(v: &str) -> Vec<String> {
    if v.is_empty() {
        Vec::new()
    } else {
        v.split(';').map(|s| s.trim().to_string()).collect()
    }
}

fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn load_csv_bundle(dir: &Path) -> Result<MarketDataset, IngestError> {
    let customers_t = Table::read(dir, "customers.csv", true)?.unwrap();
    let skus_t = Table::read(dir, "skus.csv", true)?.unwrap();
    let tx_t = Table::read(dir, "transactions.csv", true)?.unwrap();
    let meta_kv: BTreeMap<String, String> = match Table::read(dir, "meta.csv", false)? {
        None => BTreeMap::new(),
        Some(t) => {
            let (k, v) = (t.col("key")?, t.col("value")?);
            (0..t.rows.len())
                .map(|r| (t.text(r, k).to_string(), t.text(r, v).to_string()))
                .collect()
        }
    };

    let mut customers = Vec::with_capacity(customers_t.rows.len());
    let t = &customers_t;
    let (id_c, name_c, tags_c) = (t.col("id")?, t.col("name")?, t.col("tags")?);
    for r in 0..t.rows.len() {
        customers.push(CustomerRecord {
            id: t.text(r, id_c).to_string(),
            name: t.text(r, name_c).to_string(),
            location: GeoPoint::new(t.real(r, "lat")?, t.real(r, "lon")?),
            scale: t.real(r, "scale")?,
            avg_order_value: t.real(r, "avg_order_value")?,
            forecast_total: t.real(r, "forecast_total")?,
            features: t.vector(r, "features")?,
            tags: list(t.text(r, tags_c)),
        });
    }

    let t = &skus_t;
    let (code_c, k1_c, k2_c) = (t.col("code")?, t.col("k1")?, t.col("k2")?);
    let mut skus = Vec::with_capacity(t.rows.len());
    let mut missing_price = Vec::new();
    for r in 0..t.rows.len() {
        let wp = t.opt_real(r, "weighted_price")?;
        if wp.is_none() {
            missing_price.push(r);
        }
        skus.push(SkuRecord {
            code: t.text(r, code_c).to_string(),
            primary_category: t.text(r, k1_c).to_string(),
            secondary_category: t.text(r, k2_c).to_string(),
            unit_cost: t.real(r, "unit_cost")?,
            weighted_price: wp.unwrap_or(0.0),
            embedding: t.vector(r, "embedding")?,
            locked_amount: t.opt_real(r, "locked_amount")?,
        });
    }

    let t = &tx_t;
    let (cid_c, mat_c) = (t.col("customer_id")?, t.col("material_code")?);
    if t.opt_col("unit_price").is_none() && t.opt_col("amount").is_none() {
        return Err(t.col("unit_price").unwrap_err());
    }
    let mut transactions = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let volume = t.real(r, "volume")?;
        let unit_price = match t.opt_real(r, "unit_price")? {
            Some(p) => p,
            None => match t.opt_real(r, "amount")? {
                Some(a) if volume > 0.0 => a / volume,
                Some(a) => {
                    return Err(t.malformed(
                        r,
                        "volume",
                        &volume.to_string(),
                        &format!("zero volume with amount {a} leaves the unit price undefined"),
                    ))
                }
                None => return Err(t.malformed(r, "unit_price", "", "neither unit_price nor amount given")),
            },
        };
        let period_raw = t.text(r, t.col("period")?);
        let period = period_raw
            .parse::<i64>()
            .map_err(|_| t.malformed(r, "period", period_raw, "not an integer"))?;
        transactions.push(Transaction {
            customer_id: t.text(r, cid_c).to_string(),
            material_code: t.text(r, mat_c).to_string(),
            volume,
            unit_price,
            period,
        });
    }

    let mut stores = Vec::new();
    if let Some(t) = Table::read(dir, "stores.csv", false)? {
        let id_c = t.col("id")?;
        for r in 0..t.rows.len() {
            stores.push(StoreProfile {
                id: t.text(r, id_c).to_string(),
                location: GeoPoint::new(t.real(r, "lat")?, t.real(r, "lon")?),
                demographics: t.vector(r, "demographics")?,
            });
        }
    }
    let mut expenses = ExpenseLedger::default();
    if let Some(t) = Table::read(dir, "expenses.csv", false)? {
        let k = t.col("expense_type")?;
        for r in 0..t.rows.len() {
            let v = t.real(r, "total")?;
            *expenses.entries.entry(t.text(r, k).to_string()).or_insert(0.0) += v;
        }
    }
    let mut cost_rows = Vec::new();
    if let Some(t) = Table::read(dir, "costs.csv", false)? {
        let (n, m) = (t.col("client_name")?, t.col("material_code")?);
        for r in 0..t.rows.len() {
            cost_rows.push(CostRow {
                client_name: t.text(r, n).to_string(),
                material_code: t.text(r, m).to_string(),
                unit_cost: t.real(r, "unit_cost")?,
            });
        }
    }

    let malformed_meta = |key: &str, v: &str| IngestError::Malformed {
        file: "meta.csv".into(),
        row: 0,
        column: key.into(),
        value: v.into(),
        reason: "not an integer".into(),
    };
    let int_meta = |key: &str| -> Result<Option<i64>, IngestError> {
        meta_kv
            .get(key)
            .map(|v| v.parse::<i64>().map_err(|_| malformed_meta(key, v)))
            .transpose()
    };
    let feature_names = match meta_kv.get("customer_features") {
        Some(v) => list(v),
        None => {
            let d = customers.first().map(|c| c.features.len()).unwrap_or(0);
            (0..d).map(|i| format!("cf{i}")).collect()
        }
    };
    let emb_dim = match int_meta("sku_embedding_dim")? {
        Some(d) => d.max(0) as usize,
        None => skus.first().map(|s| s.embedding.len()).unwrap_or(0),
    };
    let min_p = transactions.iter().map(|t| t.period).min().unwrap_or(0);
    let max_p = transactions.iter().map(|t| t.period).max().unwrap_or(0);
    let meta = DatasetMeta {
        customer_feature_names: feature_names,
        sku_embedding_dim: emb_dim,
        currency: meta_kv.get("currency").cloned().unwrap_or_else(|| "CNY".into()),
        period_start: int_meta("period_start")?.unwrap_or(min_p),
        period_end: int_meta("period_end")?.unwrap_or(max_p),
    };

    let mut ds = MarketDataset {
        meta,
        customers,
        skus,
        transactions,
        stores,
        expenses,
        cost_rows,
    };
    if !missing_price.is_empty() {
        ds.refresh_weighted_prices();
    }
    Ok(ds)
}

fn write_rows(dir: &Path, file: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), IngestError> {
    let path = dir.join(file);
    let csv_err = |source| IngestError::Csv {
        file: file.to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IngestError::Io { path, source })
}

pub fn save_csv_bundle(ds: &MarketDataset, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_rows(
        dir,
        "meta.csv",
        &["key", "value"],
        vec![
            vec!["currency".into(), ds.meta.currency.clone()],
            vec!["period_start".into(), ds.meta.period_start.to_string()],
            vec!["period_end".into(), ds.meta.period_end.to_string()],
            vec!["customer_features".into(), ds.meta.customer_feature_names.join(";")],
            vec!["sku_embedding_dim".into(), ds.meta.sku_embedding_dim.to_string()],
        ],
    )?;
    write_rows(
        dir,
        "customers.csv",
        &["id", "name", "lat", "lon", "scale", "avg_order_value", "forecast_total", "features", "tags"],
        ds.customers
            .iter()
            .map(|c| {
                vec![
                    c.id.clone(),
                    c.name.clone(),
                    c.location.lat.to_string(),
                    c.location.lon.to_string(),
                    c.scale.to_string(),
                    c.avg_order_value.to_string(),
                    c.forecast_total.to_string(),
                    join_reals(&c.features),
                    c.tags.join(";"),
                ]
            })
            .collect(),
    )?;
    write_rows(
        dir,
        "skus.csv",
        &["code", "k1", "k2", "unit_cost", "weighted_price", "embedding", "locked_amount"],
        ds.skus
            .iter()
            .map(|s| {
                vec![
                    s.code.clone(),
                    s.primary_category.clone(),
                    s.secondary_category.clone(),
                    s.unit_cost.to_string(),
                    s.weighted_price.to_string(),
                    join_reals(&s.embedding),
                    s.locked_amount.map(|l| l.to_string()).unwrap_or_default(),
                ]
            })
            .collect(),
    )?;
    write_rows(
        dir,
        "transactions.csv",
        &["customer_id", "material_code", "volume", "unit_price", "period"],
        ds.transactions
            .iter()
            .map(|t| {
                vec![
                    t.customer_id.clone(),
                    t.material_code.clone(),
                    t.volume.to_string(),
                    t.unit_price.to_string(),
                    t.period.to_string(),
                ]
            })
            .collect(),
    )?;
    write_rows(
        dir,
        "stores.csv",
        &["id", "lat", "lon", "demographics"],
        ds.stores
            .iter()
            .map(|s| {
                vec![
                    s.id.clone(),
                    s.location.lat.to_string(),
                    s.location.lon.to_string(),
                    join_reals(&s.demographics),
                ]
            })
            .collect(),
    )?;
    write_rows(
        dir,
        "expenses.csv",
        &["expense_type", "total"],
        ds.expenses
            .entries
            .iter()
            .map(|(k, v)| vec![k.clone(), v.to_string()])
            .collect(),
    )?;
    write_rows(
        dir,
        "costs.csv",
        &["client_name", "material_code", "unit_cost"],
        ds.cost_rows
            .iter()
            .map(|r| vec![r.client_name.clone(), r.material_code.clone(), r.unit_cost.to_string()])
            .collect(),
    )
}
