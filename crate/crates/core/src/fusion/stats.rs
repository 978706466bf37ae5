use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::FusionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalStats {
    /// Mean per window position; one entry when the window covers the series.
    pub rolling_mean: Vec<f64>,
    /// Population variance per window position.
    pub rolling_var: Vec<f64>,
    /// `(frequency index, amplitude)` by decreasing amplitude, zero frequency excluded.
    pub top_frequencies: Vec<(usize, f64)>,
}

impl TemporalStats {
    /// Last window mean and variance, then the top amplitudes and their indices.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![
            self.rolling_mean.last().copied().unwrap_or(0.0),
            self.rolling_var.last().copied().unwrap_or(0.0),
        ];
        v.extend(self.top_frequencies.iter().map(|f| f.1));
        v.extend(self.top_frequencies.iter().map(|f| f.0 as f64));
        v
    }
}

pub fn temporal_stats(series: &[f64], window: usize, top_k: usize) -> TemporalStats {
    let n = series.len();
    let w = window.clamp(1, n.max(1));
    let mut rolling_mean = Vec::new();
    let mut rolling_var = Vec::new();
    for s in series.windows(w) {
        let m = s.iter().sum::<f64>() / w as f64;
        rolling_mean.push(m);
        rolling_var.push(s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w as f64);
    }

    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    if n > 0 {
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    }
    let mut amps: Vec<(usize, f64)> = (1..=n / 2).map(|k| (k, buf[k].norm() / n as f64)).collect();
    amps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    amps.truncate(top_k);
    TemporalStats {
        rolling_mean,
        rolling_var,
        top_frequencies: amps,
    }
}

/// Column standardizer with population σ and delayed refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose σ was zero and is treated as 1.
    pub guarded: Vec<bool>,
    pub n_update: usize,
    pub pending: usize,
    pub refits: usize,
    pub convention: String,
    seen: Vec<Vec<f64>>,
}

impl ZScore {
    pub fn fit(rows: &[Vec<f64>], n_update: usize) -> Self {
        let mut z = Self {
            mean: Vec::new(),
            std: Vec::new(),
            guarded: Vec::new(),
            n_update,
            pending: 0,
            refits: 0,
            convention: "population".into(),
            seen: rows.to_vec(),
        };
        z.refit();
        z
    }

    fn refit(&mut self) {
        let d = self.seen.first().map_or(0, Vec::len);
        let n = self.seen.len().max(1) as f64;
        self.mean = (0..d).map(|j| self.seen.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..d)
            .map(|j| self.seen.iter().map(|r| (r[j] - self.mean[j]).powi(2)).sum::<f64>() / n)
            .collect();
        self.guarded = var.iter().map(|v| v.sqrt() <= 1e-12).collect();
        self.std = var
            .iter()
            .zip(&self.guarded)
            .map(|(v, &g)| if g { 1.0 } else { v.sqrt() })
            .collect();
        self.pending = 0;
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Records new rows; refits on everything seen once more than `n_update`
    /// have accumulated. Returns whether a refit happened.
    pub fn observe(&mut self, rows: &[Vec<f64>]) -> bool {
        self.seen.extend(rows.iter().cloned());
        self.pending += rows.len();
        if self.pending > self.n_update {
            self.refit();
            self.refits += 1;
            true
        } else {
            false
        }
    }
}

pub fn zscore_fit_apply(rows: &[Vec<f64>], n_update: usize) -> (Vec<Vec<f64>>, ZScore) {
    let z = ZScore::fit(rows, n_update);
    (rows.iter().map(|r| z.apply(r)).collect(), z)
}

/// `[β·high; (1−β)·low]`.
pub fn dual_tower_fuse(high: &[f64], low: &[f64], beta: f64) -> Result<Vec<f64>, FusionError> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(FusionError::Beta(beta));
    }
    Ok(high
        .iter()
        .map(|x| beta * x)
        .chain(low.iter().map(|x| (1.0 - beta) * x))
        .collect())
}

/// Affine map followed by a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Tower {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(output, input, |_, _| rng.random_range(-s..s)),
            bias: DVector::zeros(output),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let y = &self.weights * DVector::from_column_slice(x) + &self.bias;
        y.iter().map(|v| v.max(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualTower {
    pub high: Tower,
    pub low: Tower,
    pub beta: f64,
    pub seed: u64,
}

impl DualTower {
    pub fn new(dims: [(usize, usize); 2], beta: f64, seed: u64) -> Result<Self, FusionError> {
        dual_tower_fuse(&[], &[], beta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            high: Tower::new(dims[0].0, dims[0].1, &mut rng),
            low: Tower::new(dims[1].0, dims[1].1, &mut rng),
            beta,
            seed,
        })
    }

    pub fn encode(&self, high: &[f64], low: &[f64]) -> Vec<f64> {
        dual_tower_fuse(&self.high.encode(high), &self.low.encode(low), self.beta).unwrap_or_default()
    }
}
