//! The decision-rule language: expression trees, parsing, rendering and evaluation.

mod eval;
mod lexer;
mod lexicon;
mod parser;
mod random;
pub(crate) mod render;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, evaluate_with, protected, BoundRule, CompiledExpr, Decision, EvalError, FeatureRow, PriceMode, Schema, PRICE_FLOOR, VALUE_BOUND};
pub use lexicon::{Correction, Lexicon, KEYWORDS};
pub use parser::{parse, parse_expr, ParseError, ParseOutput};
pub use random::{random_rule, random_tree, RandomTreeConfig};
pub use render::{render, render_expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnaryOp {
    Log,
    Exp,
    Sqrt,
    Sin,
    Cos,
    Neg,
    Sigmoid,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] = [
        UnaryOp::Log,
        UnaryOp::Exp,
        UnaryOp::Sqrt,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Neg,
        UnaryOp::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Neg => "neg",
            UnaryOp::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        Some(match name {
            "log" | "ln" => UnaryOp::Log,
            "exp" => UnaryOp::Exp,
            "sqrt" => UnaryOp::Sqrt,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "neg" => UnaryOp::Neg,
            "sigmoid" => UnaryOp::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
        }
    }

    pub fn negate(self) -> Cmp {
        match self {
            Cmp::Gt => Cmp::Le,
            Cmp::Ge => Cmp::Lt,
            Cmp::Lt => Cmp::Ge,
            Cmp::Le => Cmp::Gt,
        }
    }

    /// The comparison seen from the other side: `t < x` is `x > t`.
    pub fn flip(self) -> Cmp {
        match self {
            Cmp::Gt => Cmp::Lt,
            Cmp::Ge => Cmp::Le,
            Cmp::Lt => Cmp::Gt,
            Cmp::Le => Cmp::Ge,
        }
    }

    pub fn holds(self, x: f64, t: f64) -> bool {
        match self {
            Cmp::Gt => x > t,
            Cmp::Ge => x >= t,
            Cmp::Lt => x < t,
            Cmp::Le => x <= t,
        }
    }
}

/// One axis-aligned half-line `feature cmp threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub cmp: Cmp,
    pub threshold: f64,
}

/// An axis-aligned box: the conjunction of its conditions. Empty means everywhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Binary(BinaryOp),
    Unary(UnaryOp),
    Indicator(Region),
}

impl OperatorKind {
    pub fn arity(&self) -> usize {
        match self {
            OperatorKind::Binary(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExprNode {
    Feature(String),
    Const { value: f64, mutable: bool },
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    /// `child · 1(x ∈ region)`.
    Indicator(Region, Box<ExprNode>),
}

impl ExprNode {
    pub fn feature(name: impl Into<String>) -> Self {
        ExprNode::Feature(name.into())
    }

    pub fn constant(value: f64) -> Self {
        ExprNode::Const { value, mutable: true }
    }

    pub fn fixed(value: f64) -> Self {
        ExprNode::Const { value, mutable: false }
    }

    pub fn unary(op: UnaryOp, a: ExprNode) -> Self {
        ExprNode::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: ExprNode, b: ExprNode) -> Self {
        Self::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: ExprNode, b: ExprNode) -> Self {
        Self::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: ExprNode, b: ExprNode) -> Self {
        Self::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: ExprNode, b: ExprNode) -> Self {
        Self::binary(BinaryOp::Div, a, b)
    }

    pub fn indicator(region: Region, a: ExprNode) -> Self {
        ExprNode::Indicator(region, Box::new(a))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ExprNode::Feature(_) | ExprNode::Const { .. })
    }

    pub fn operator(&self) -> Option<OperatorKind> {
        match self {
            ExprNode::Unary(op, _) => Some(OperatorKind::Unary(*op)),
            ExprNode::Binary(op, _, _) => Some(OperatorKind::Binary(*op)),
            ExprNode::Indicator(r, _) => Some(OperatorKind::Indicator(r.clone())),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&ExprNode> {
        match self {
            ExprNode::Unary(_, a) | ExprNode::Indicator(_, a) => vec![a],
            ExprNode::Binary(_, a, b) => vec![a, b],
            _ => Vec::new(),
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut ExprNode> {
        match self {
            ExprNode::Unary(_, a) | ExprNode::Indicator(_, a) => vec![a],
            ExprNode::Binary(_, a, b) => vec![a, b],
            _ => Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Depth counted in nodes: a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Node-weighted size: 2 per internal node, 1 per leaf.
    pub fn weighted_size(&self) -> usize {
        let own = if self.is_leaf() { 1 } else { 2 };
        own + self.children().iter().map(|c| c.weighted_size()).sum::<usize>()
    }

    /// Pre-order node visit.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ExprNode)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// The `i`-th node in pre-order.
    pub fn nth(&self, i: usize) -> Option<&ExprNode> {
        let mut k = 0;
        let mut out = None;
        self.visit(&mut |n| {
            if k == i {
                out = Some(n);
            }
            k += 1;
        });
        out
    }

    pub fn nth_mut(&mut self, i: usize) -> Option<&mut ExprNode> {
        fn go<'a>(n: &'a mut ExprNode, i: usize, k: &mut usize) -> Option<&'a mut ExprNode> {
            if *k == i {
                return Some(n);
            }
            *k += 1;
            for c in n.children_mut() {
                if let Some(hit) = go(c, i, k) {
                    return Some(hit);
                }
            }
            None
        }
        go(self, i, &mut 0)
    }

    /// Depth (1-based) of the `i`-th pre-order node.
    pub fn depth_of(&self, i: usize) -> usize {
        fn go(n: &ExprNode, i: usize, k: &mut usize, d: usize) -> Option<usize> {
            if *k == i {
                return Some(d);
            }
            *k += 1;
            for c in n.children() {
                if let Some(hit) = go(c, i, k, d + 1) {
                    return Some(hit);
                }
            }
            None
        }
        go(self, i, &mut 0, 1).unwrap_or(0)
    }

    pub fn features(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n| match n {
            ExprNode::Feature(f) => out.push(f.clone()),
            ExprNode::Indicator(r, _) => out.extend(r.conditions.iter().map(|c| c.feature.clone())),
            _ => {}
        });
        out.sort();
        out.dedup();
        out
    }

    pub fn mutable_constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let ExprNode::Const { value, mutable: true } = n {
                out.push(*value);
            }
        });
        out
    }

    fn write_constants(&mut self, vals: &[f64], k: &mut usize) {
        if let ExprNode::Const { value, mutable: true } = self {
            *value = vals[*k];
            *k += 1;
        }
        for c in self.children_mut() {
            c.write_constants(vals, k);
        }
    }

    /// Cuts every subtree rooted at depth `max_depth` down to its leftmost leaf.
    pub fn truncate(&mut self, max_depth: usize) {
        fn leftmost_leaf(n: &ExprNode) -> ExprNode {
            match n {
                ExprNode::Unary(_, a) | ExprNode::Indicator(_, a) | ExprNode::Binary(_, a, _) => leftmost_leaf(a),
                leaf => leaf.clone(),
            }
        }
        fn go(n: &mut ExprNode, d: usize, max: usize) {
            if d >= max && !n.is_leaf() {
                *n = leftmost_leaf(n);
                return;
            }
            for c in n.children_mut() {
                go(c, d + 1, max);
            }
        }
        go(self, 1, max_depth.max(1));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub gate: ExprNode,
    pub price: ExprNode,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parameter vector has length {got}, rule has {expected} mutable constants")]
pub struct ParameterLengthError {
    pub expected: usize,
    pub got: usize,
}

impl DecisionRule {
    /// Always-stock rule with the given price expression.
    pub fn priced(price: ExprNode) -> Self {
        Self {
            gate: ExprNode::fixed(1.0),
            price,
            threshold: 0.0,
        }
    }

    pub fn new(gate: ExprNode, price: ExprNode, threshold: f64) -> Self {
        Self { gate, price, threshold }
    }

    /// ℓ(f): weighted size summed over gate and price.
    pub fn complexity(&self) -> f64 {
        (self.gate.weighted_size() + self.price.weighted_size()) as f64
    }

    pub fn node_count(&self) -> usize {
        self.gate.node_count() + self.price.node_count()
    }

    pub fn depth(&self) -> usize {
        self.gate.depth().max(self.price.depth())
    }

    pub fn features(&self) -> Vec<String> {
        let mut f = self.gate.features();
        f.extend(self.price.features());
        f.sort();
        f.dedup();
        f
    }

    /// Mutable constants in pre-order, gate first.
    pub fn extract_parameters(&self) -> Vec<f64> {
        let mut v = self.gate.mutable_constants();
        v.extend(self.price.mutable_constants());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.extract_parameters().len()
    }

    pub fn apply_parameters(&self, theta: &[f64]) -> Result<DecisionRule, ParameterLengthError> {
        let expected = self.parameter_count();
        if theta.len() != expected {
            return Err(ParameterLengthError {
                expected,
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        let mut k = 0;
        out.gate.write_constants(theta, &mut k);
        out.price.write_constants(theta, &mut k);
        Ok(out)
    }

    pub fn total_nodes(&self) -> usize {
        self.gate.node_count() + self.price.node_count()
    }

    /// Pre-order node addressing across both trees: gate nodes first.
    pub fn node(&self, i: usize) -> Option<&ExprNode> {
        let g = self.gate.node_count();
        if i < g {
            self.gate.nth(i)
        } else {
            self.price.nth(i - g)
        }
    }

    pub fn node_mut(&mut self, i: usize) -> Option<&mut ExprNode> {
        let g = self.gate.node_count();
        if i < g {
            self.gate.nth_mut(i)
        } else {
            self.price.nth_mut(i - g)
        }
    }

    pub fn node_depth(&self, i: usize) -> usize {
        let g = self.gate.node_count();
        if i < g {
            self.gate.depth_of(i)
        } else {
            self.price.depth_of(i - g)
        }
    }
}

impl std::fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&render(self))
    }
}

impl std::fmt::Display for ExprNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&render_expr(self))
    }
}
