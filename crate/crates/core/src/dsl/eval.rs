use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{BinaryOp, Cmp, DecisionRule, ExprNode, UnaryOp};

/// Every intermediate value is kept inside `[-VALUE_BOUND, VALUE_BOUND]`.
pub const VALUE_BOUND: f64 = 1e12;
/// Stocked items never carry a price below this.
pub const PRICE_FLOOR: f64 = 0.01;

pub mod protected {
    use super::VALUE_BOUND;

    pub fn bound(v: f64) -> f64 {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(-VALUE_BOUND, VALUE_BOUND)
        }
    }

    pub fn div(a: f64, b: f64) -> f64 {
        if b.abs() > 1e-6 {
            a / b
        } else {
            1.0
        }
    }

    pub fn log(a: f64) -> f64 {
        (a.abs() + 1e-9).ln()
    }

    pub fn sqrt(a: f64) -> f64 {
        a.abs().sqrt()
    }

    pub fn pow(a: f64, b: f64) -> f64 {
        let m = a.abs().powf(b.clamp(-10.0, 10.0));
        let v = if a < 0.0 { -m } else { m };
        bound(v)
    }

    pub fn exp(a: f64) -> f64 {
        a.min(50.0).exp()
    }

    pub fn sigmoid(a: f64) -> f64 {
        1.0 / (1.0 + (-a).min(50.0).exp())
    }
}

/// Named feature values for one row.
pub type FeatureRow = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("row does not supply feature `{0}`")]
    MissingFeature(String),
}

/// How the price tree's value becomes a price.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum PriceMode {
    #[default]
    Absolute,
    /// The tree yields a multiplier applied to the named base column.
    Multiplier { base: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub stock: bool,
    pub price: Option<f64>,
}

impl Decision {
    pub fn d(&self) -> u8 {
        self.stock as u8
    }

    /// Scalar action used for golden comparisons: the price when stocked, 0 otherwise.
    pub fn action(&self) -> f64 {
        self.price.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Schema {
    pub fn new(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Feat(usize),
    Const(f64),
    Un(UnaryOp),
    Bin(BinaryOp),
    Ind(Box<[(usize, Cmp, f64)]>),
}

/// Postfix program for one expression tree, bound to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    code: Vec<Instr>,
}

impl CompiledExpr {
    pub fn compile(expr: &ExprNode, schema: &Schema) -> Result<Self, EvalError> {
        fn feat(schema: &Schema, name: &str) -> Result<usize, EvalError> {
            schema.get(name).ok_or_else(|| EvalError::MissingFeature(name.to_string()))
        }
        fn go(n: &ExprNode, schema: &Schema, code: &mut Vec<Instr>) -> Result<(), EvalError> {
            match n {
                ExprNode::Feature(f) => code.push(Instr::Feat(feat(schema, f)?)),
                ExprNode::Const { value, .. } => code.push(Instr::Const(*value)),
                ExprNode::Unary(op, a) => {
                    go(a, schema, code)?;
                    code.push(Instr::Un(*op));
                }
                ExprNode::Binary(op, a, b) => {
                    go(a, schema, code)?;
                    go(b, schema, code)?;
                    code.push(Instr::Bin(*op));
                }
                ExprNode::Indicator(r, a) => {
                    go(a, schema, code)?;
                    let conds = r
                        .conditions
                        .iter()
                        .map(|c| Ok((feat(schema, &c.feature)?, c.cmp, c.threshold)))
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    code.push(Instr::Ind(conds.into_boxed_slice()));
                }
            }
            Ok(())
        }
        let mut code = Vec::new();
        go(expr, schema, &mut code)?;
        Ok(Self { code })
    }

    pub fn eval(&self, row: &[f64], stack: &mut Vec<f64>) -> f64 {
        use protected::*;
        stack.clear();
        for ins in &self.code {
            let v = match ins {
                Instr::Feat(i) => bound(row[*i]),
                Instr::Const(c) => bound(*c),
                Instr::Un(op) => {
                    let a = stack.pop().unwrap_or(0.0);
                    match op {
                        UnaryOp::Log => log(a),
                        UnaryOp::Exp => exp(a),
                        UnaryOp::Sqrt => sqrt(a),
                        UnaryOp::Sin => a.sin(),
                        UnaryOp::Cos => a.cos(),
                        UnaryOp::Neg => -a,
                        UnaryOp::Sigmoid => sigmoid(a),
                    }
                }
                Instr::Bin(op) => {
                    let b = stack.pop().unwrap_or(0.0);
                    let a = stack.pop().unwrap_or(0.0);
                    match op {
                        BinaryOp::Add => a + b,
                        BinaryOp::Sub => a - b,
                        BinaryOp::Mul => a * b,
                        BinaryOp::Div => div(a, b),
                        BinaryOp::Pow => pow(a, b),
                    }
                }
                Instr::Ind(conds) => {
                    let a = stack.pop().unwrap_or(0.0);
                    let inside = conds.iter().all(|&(i, cmp, t)| cmp.holds(bound(row[i]), t));
                    if inside {
                        a
                    } else {
                        0.0
                    }
                }
            };
            stack.push(bound(v));
        }
        stack.pop().unwrap_or(0.0)
    }
}

/// A decision rule compiled against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRule {
    gate: CompiledExpr,
    price: CompiledExpr,
    pub threshold: f64,
    base: Option<usize>,
}

impl BoundRule {
    pub fn bind(rule: &DecisionRule, schema: &Schema, mode: &PriceMode) -> Result<Self, EvalError> {
        let base = match mode {
            PriceMode::Absolute => None,
            PriceMode::Multiplier { base } => {
                Some(schema.get(base).ok_or_else(|| EvalError::MissingFeature(base.clone()))?)
            }
        };
        Ok(Self {
            gate: CompiledExpr::compile(&rule.gate, schema)?,
            price: CompiledExpr::compile(&rule.price, schema)?,
            threshold: rule.threshold,
            base,
        })
    }

    pub fn gate_value(&self, row: &[f64], stack: &mut Vec<f64>) -> f64 {
        self.gate.eval(row, stack)
    }

    pub fn raw_price(&self, row: &[f64], stack: &mut Vec<f64>) -> f64 {
        let g = self.price.eval(row, stack);
        match self.base {
            None => g,
            Some(i) => protected::bound(g * protected::bound(row[i])),
        }
    }

    pub fn decide(&self, row: &[f64], stack: &mut Vec<f64>) -> Decision {
        if self.gate.eval(row, stack) > self.threshold {
            Decision {
                stock: true,
                price: Some(self.raw_price(row, stack).max(PRICE_FLOOR)),
            }
        } else {
            Decision {
                stock: false,
                price: None,
            }
        }
    }
}

pub fn evaluate_with(rule: &DecisionRule, row: &FeatureRow, mode: &PriceMode) -> Result<Decision, EvalError> {
    let schema = Schema::new(row.keys().cloned().collect());
    let values: Vec<f64> = row.values().copied().collect();
    let bound = BoundRule::bind(rule, &schema, mode)?;
    Ok(bound.decide(&values, &mut Vec::new()))
}

/// Evaluates `(d, p)` for one row in absolute price mode.
pub fn evaluate(rule: &DecisionRule, row: &FeatureRow) -> Result<Decision, EvalError> {
    evaluate_with(rule, row, &PriceMode::Absolute)
}
