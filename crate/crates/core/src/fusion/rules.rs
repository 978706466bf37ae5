use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::fingerprint::sha256;
use crate::proposer::cosine;

pub const EMBED_DIM: usize = 256;

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim.max(1)];
    for tok in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
    {
        let h = sha256(tok.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().unwrap_or([0; 8])) as usize % v.len();
        v[idx] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    Soft,
}

/// `bias + Σ weights_i·x_i` over the context features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

impl Transform {
    pub fn constant(v: f64) -> Self {
        Self { weights: Vec::new(), bias: v }
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRule {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub embedding: Vec<f64>,
    pub strictness: Strictness,
    pub transform: Transform,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    pub rules: Vec<FusionRule>,
}

impl RuleBase {
    /// Adds a rule, embedding its text when no embedding is given.
    pub fn push(&mut self, mut rule: FusionRule) {
        if rule.embedding.is_empty() {
            rule.embedding = hash_embed(&rule.text, EMBED_DIM);
        }
        self.rules.push(rule);
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if let Some(first) = self.rules.first() {
            let d = first.embedding.len();
            if let Some(r) = self.rules.iter().find(|r| r.embedding.len() != d) {
                return Err(FusionError::EmbeddingDim { rule: r.id.clone() });
            }
        }
        Ok(())
    }

    /// Index of the most similar rule; ties go to the earliest.
    pub fn retrieve(&self, query: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.rules.iter().enumerate() {
            let s = cosine(query, &r.embedding);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|b| b.0)
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, FusionError> {
        let mut base = Self::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            base.push(serde_json::from_str(&line)?);
        }
        base.validate()?;
        Ok(base)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), FusionError> {
        for r in &self.rules {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Source of the soft-fusion weight α_t.
pub trait AlphaProvider {
    fn alpha(&mut self, x: &[f64], rule: &FusionRule) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAlpha(pub f64);

impl Default for ConstantAlpha {
    fn default() -> Self {
        Self(0.5)
    }
}

impl AlphaProvider for ConstantAlpha {
    fn alpha(&mut self, _x: &[f64], _rule: &FusionRule) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Calibration weight in [0, 0.1].
    pub beta: f64,
    pub kappa: f64,
    /// Trend window; 0 disables calibration.
    pub tau: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            kappa: 1.0,
            tau: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionAudit {
    pub rule_id: String,
    pub alpha: f64,
    pub h: u8,
    pub delta_h: f64,
    pub a_init: f64,
    pub a_fused: f64,
    pub a_final: f64,
}

pub const AUDIT_CSV_HEADER: &str = "rule_id,alpha,h,delta_h,a_init,a_fused,a_final";

impl FusionAudit {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.rule_id, self.alpha, self.h, self.delta_h, self.a_init, self.a_fused, self.a_final
        );
        s
    }
}

/// `(1/τ) Σ_{i=1..τ} (a_{t−i} − a_{t−i−τ})` over a history ordered oldest first.
pub fn trend_delta(history: &[f64], tau: usize) -> Result<f64, FusionError> {
    if tau == 0 {
        return Ok(0.0);
    }
    let n = history.len();
    if n < 2 * tau {
        return Err(FusionError::History { have: n, need: 2 * tau });
    }
    let s: f64 = (1..=tau).map(|i| history[n - i] - history[n - i - tau]).sum();
    Ok(s / tau as f64)
}

/// Retrieves the closest rule, fuses it with the initial prediction and
/// applies the trend calibration.
pub fn fuse_prediction(
    x: &[f64],
    query: &[f64],
    a_init: f64,
    rules: &RuleBase,
    history: &[f64],
    cfg: &FusionConfig,
    alpha: &mut dyn AlphaProvider,
) -> Result<(f64, FusionAudit), FusionError> {
    if !(0.0..=0.1).contains(&cfg.beta) {
        return Err(FusionError::Beta(cfg.beta));
    }
    let k = rules.retrieve(query).ok_or(FusionError::EmptyRuleBase)?;
    let rule = &rules.rules[k];
    let g = rule.transform.apply(x);
    let (h, a, fused) = match rule.strictness {
        Strictness::Strict => (1, f64::NAN, g),
        Strictness::Soft => {
            let a = alpha.alpha(x, rule).clamp(0.0, 1.0);
            (0, a, a * a_init + (1.0 - a) * g)
        }
    };
    let (delta_h, out) = if cfg.tau == 0 {
        (0.0, fused)
    } else {
        let d = trend_delta(history, cfg.tau)?;
        let sgn = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        (d, cfg.beta * sgn * d.abs().min(cfg.kappa) + (1.0 - cfg.beta) * fused)
    };
    Ok((
        out,
        FusionAudit {
            rule_id: rule.id.clone(),
            alpha: a,
            h,
            delta_h,
            a_init,
            a_fused: fused,
            a_final: out,
        },
    ))
}
