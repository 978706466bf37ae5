use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Feedforward network with tanh hidden layers and a linear head; all
/// parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    acts: Vec<DMatrix<f64>>,
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// `layers = [input, hidden.., output]`, initialized uniformly in ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(layers: &[usize], rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(param_count(layers));
        for w in layers.windows(2) {
            let bound = if w[0] > 0 { 1.0 / (w[0] as f64).sqrt() } else { 0.0 };
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 });
            }
        }
        Self {
            layers: layers.to_vec(),
            params,
        }
    }

    pub fn from_params(layers: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (param_count(&layers) == params.len()).then_some(Self { layers, params })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().copied().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().copied().unwrap_or(0)
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut Cache) -> Vec<f64> {
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let n_layers = self.layers.len().saturating_sub(1);
        let mut off = 0;
        for l in 0..n_layers {
            let (fi, fo) = (self.layers[l], self.layers[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let inp = &cache.acts[l];
            let mut out = vec![0.0; fo];
            for o in 0..fo {
                let row = &w[o * fi..(o + 1) * fi];
                let mut s = b[o];
                for i in 0..fi {
                    s += row[i] * inp[i];
                }
                out[o] = if l + 1 < n_layers { s.tanh() } else { s };
            }
            cache.acts.push(out);
        }
        cache.acts.last().cloned().unwrap_or_default()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x, &mut Cache::default())
    }

    /// Accumulates `∂(Σ_k dout_k·out_k)/∂θ` into `grad`.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.layers.len().saturating_sub(1);
        if n_layers == 0 {
            return;
        }
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.layers[l] * self.layers[l + 1] + self.layers[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (fi, fo) = (self.layers[l], self.layers[l + 1]);
            let off = offsets[l];
            let inp = &cache.acts[l];
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * fi..off + (o + 1) * fi];
                for i in 0..fi {
                    g[i] += d * inp[i];
                }
                grad[off + fi * fo + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fi * fo];
                let mut prev = vec![0.0; fi];
                for o in 0..fo {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * fi..(o + 1) * fi];
                    for i in 0..fi {
                        prev[i] += d * row[i];
                    }
                }
                for (p, a) in prev.iter_mut().zip(inp) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for w in self.layers.windows(2) {
            out.push(off);
            off += w[0] * w[1] + w[1];
        }
        out
    }

    /// Forward pass over a batch whose rows are inputs.
    pub fn forward_batch(&self, x: DMatrix<f64>, cache: &mut BatchCache) -> DMatrix<f64> {
        cache.acts.clear();
        cache.acts.push(x);
        let n_layers = self.layers.len().saturating_sub(1);
        for (l, off) in self.offsets().into_iter().enumerate() {
            let (fi, fo) = (self.layers[l], self.layers[l + 1]);
            let wt = DMatrixView::from_slice(&self.params[off..off + fi * fo], fi, fo);
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let mut z = &cache.acts[l] * wt;
            for (j, mut col) in z.column_iter_mut().enumerate() {
                for v in col.iter_mut() {
                    *v += b[j];
                    if l + 1 < n_layers {
                        *v = v.tanh();
                    }
                }
            }
            cache.acts.push(z);
        }
        cache.acts.last().cloned().unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// Batch counterpart of [`Mlp::backward`]; `dout` has one row per input.
    pub fn backward_batch(&self, cache: &BatchCache, dout: DMatrix<f64>, grad: &mut [f64]) {
        let n_layers = self.layers.len().saturating_sub(1);
        let offsets = self.offsets();
        let mut delta = dout;
        for l in (0..n_layers).rev() {
            let (fi, fo) = (self.layers[l], self.layers[l + 1]);
            let off = offsets[l];
            let inp = &cache.acts[l];
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[off..off + fi * fo], fi, fo);
                gw += inp.transpose() * &delta;
            }
            for (j, col) in delta.column_iter().enumerate() {
                grad[off + fi * fo + j] += col.sum();
            }
            if l > 0 {
                let wt = DMatrixView::from_slice(&self.params[off..off + fi * fo], fi, fo);
                let mut prev = &delta * wt.transpose();
                prev.zip_apply(inp, |p, a| *p *= 1.0 - a * a);
                delta = prev;
            }
        }
    }

    /// `θ̄ ← τθ + (1 − τ)θ̄`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&src.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descent step along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / b1t) / ((self.v[i] / b2t).sqrt() + self.eps);
        }
    }
}

/// Max relative error `|a − n| / max(|a|, |n|, 1e-6)` between the analytic
/// gradient of `Σ_k w_k·out_k` and central differences with h = 1e-5, over
/// every parameter (or `max_coords` sampled ones) at each input.
pub fn gradient_check<R: Rng + ?Sized>(net: &Mlp, inputs: &[Vec<f64>], max_coords: Option<usize>, rng: &mut R) -> f64 {
    let n = net.params.len();
    if n == 0 {
        return 0.0;
    }
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for x in inputs {
        let w: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cache = Cache::default();
        net.forward_cached(x, &mut cache);
        let mut grad = vec![0.0; n];
        net.backward(&cache, &w, &mut grad);
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let f = |p: &Mlp| p.forward(x).iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        for i in coords {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = f(&probe);
            probe.params[i] = orig - h;
            let dn = f(&probe);
            probe.params[i] = orig;
            let num = (up - dn) / (2.0 * h);
            let err = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
