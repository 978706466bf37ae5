//! Serde adapter for maps keyed by `(customer, material)`: JSON object keys
//! must be strings, so these go out as a list of `[customer, material, value]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<(String, String), V>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(map.iter().map(|((a, b), v)| (a, b, v)))
}

pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), V>, D::Error> {
    let items: Vec<(String, String, V)> = Vec::deserialize(d)?;
    Ok(items.into_iter().map(|(a, b, v)| ((a, b), v)).collect())
}
