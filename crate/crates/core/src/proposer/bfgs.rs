use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsl::DecisionRule;
use crate::fitness::{EvalContext, FitnessError};
use crate::grammar::to_prefix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Convergence threshold on the projected gradient's max norm.
    pub tol: f64,
    /// Loss above which a restructure signal is raised.
    pub xi: f64,
    /// Box bounds per coordinate; `None` leaves θ unbounded.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            xi: f64::MAX,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestructureSignal {
    /// The price tree in prefix order.
    pub prefix: Vec<String>,
    pub gradient: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient: Vec<f64>,
    pub restructure: Option<RestructureSignal>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BfgsError {
    #[error("loss is not finite at the starting point")]
    NonFinite,
    #[error("bounds length {bounds} does not match {params} parameters")]
    Bounds { bounds: usize, params: usize },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

fn project(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Central differences with step `1e-6·(1 + |θ_i|)`, clipped inside the box.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| b[i]);
            let up = (x[i] + h).min(hi);
            let dn = (x[i] - h).max(lo);
            if up <= dn {
                return 0.0;
            }
            probe[i] = up;
            let fu = f(&probe);
            probe[i] = dn;
            let fd = f(&probe);
            probe[i] = x[i];
            (fu - fd) / (up - dn)
        })
        .collect()
}

/// Gradient with components pushing against an active bound zeroed.
fn projected(g: &[f64], x: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    match bounds {
        None => g.to_vec(),
        Some(b) => g
            .iter()
            .zip(x)
            .zip(b)
            .map(|((&g, &x), &(lo, hi))| if (x <= lo && g > 0.0) || (x >= hi && g < 0.0) { 0.0 } else { g })
            .collect(),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Projected BFGS on a direct Hessian approximation
/// `B ← B + yyᵀ/(yᵀs) − BssᵀB/(sᵀBs)`, Armijo backtracking along `−B⁻¹g`.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, theta0: &[f64], opts: &BfgsOptions) -> Result<FitOutcome, BfgsError> {
    let n = theta0.len();
    let bounds = opts.bounds.as_deref();
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(BfgsError::Bounds { bounds: b.len(), params: n });
        }
    }
    let mut x = theta0.to_vec();
    project(&mut x, bounds);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(BfgsError::NonFinite);
    }
    if n == 0 {
        return Ok(FitOutcome {
            theta: x,
            loss: fx,
            converged: true,
            iterations: 0,
            gradient: Vec::new(),
            restructure: None,
        });
    }
    let mut g = numeric_gradient(f, &x, bounds);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = inf_norm(&projected(&g, &x, bounds)) < opts.tol;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let d = match b.clone().cholesky() {
            Some(ch) => -ch.solve(&gv),
            None => {
                b = DMatrix::identity(n, n);
                -gv.clone()
            }
        };
        let d = if d.dot(&gv) >= 0.0 { -gv.clone() } else { d };

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(d.iter()).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut xn, bounds);
            let step: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), g)| (a - b) * g).sum();
            let fn_ = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            break;
        };
        let gn = numeric_gradient(f, &xn, bounds);
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let ys = y.dot(&s);
        if ys > 1e-12 {
            let bs = &b * &s;
            let sbs = s.dot(&bs);
            if sbs > 0.0 {
                b += &y * y.transpose() / ys - &bs * bs.transpose() / sbs;
            }
        }
        let moved = s.amax();
        x = xn;
        fx = fn_;
        g = gn;
        converged = inf_norm(&projected(&g, &x, bounds)) < opts.tol;
        if !converged && moved == 0.0 {
            break;
        }
    }
    Ok(FitOutcome {
        theta: x,
        loss: fx,
        converged,
        iterations,
        gradient: g,
        restructure: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitLoss {
    /// `−Φ`.
    #[default]
    NegFitness,
    /// Mean absolute distance to the golden actions.
    Mae,
    /// Root mean squared distance to the golden actions.
    Rmse,
}

fn rule_loss(ctx: &EvalContext, rule: &DecisionRule, kind: FitLoss) -> Result<f64, FitnessError> {
    match kind {
        FitLoss::NegFitness => Ok(-ctx.fitness(rule)?),
        FitLoss::Mae => ctx.mae(rule)?.ok_or(FitnessError::MissingGolden),
        FitLoss::Rmse => {
            let g = ctx.golden.as_ref().ok_or(FitnessError::MissingGolden)?;
            let a = ctx.actions(rule)?;
            let n = a.len().max(1) as f64;
            Ok((a.iter().zip(g).map(|(a, g)| (a - g).powi(2)).sum::<f64>() / n).sqrt())
        }
    }
}

/// Fits the rule's mutable constants; indicator bounds stay frozen.
pub fn fit_parameters(
    rule: &DecisionRule,
    ctx: &EvalContext,
    kind: FitLoss,
    opts: &BfgsOptions,
) -> Result<(DecisionRule, FitOutcome), BfgsError> {
    let theta0 = rule.extract_parameters();
    rule_loss(ctx, rule, kind)?;
    let mut f = |t: &[f64]| match rule.apply_parameters(t) {
        Ok(r) => rule_loss(ctx, &r, kind).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let mut out = minimize(&mut f, &theta0, opts)?;
    let fitted = rule.apply_parameters(&out.theta).unwrap_or_else(|_| rule.clone());
    if out.loss > opts.xi {
        out.restructure = Some(RestructureSignal {
            prefix: to_prefix(&fitted.price)
                .map(|t| t.iter().map(|t| t.to_string()).collect())
                .unwrap_or_else(|| vec![fitted.price.to_string()]),
            gradient: out.gradient.clone(),
            loss: out.loss,
        });
    }
    Ok((fitted, out))
}
