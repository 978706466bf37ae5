//! Prefix-token construction of expression trees under a length budget.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::{render::number, BinaryOp, ExprNode, UnaryOp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Token {
    Bin(BinaryOp),
    Un(UnaryOp),
    Feat(String),
    Const(f64),
    /// Free constant whose value is fitted after construction.
    Param,
}

impl Token {
    pub fn arity(&self) -> usize {
        match self {
            Token::Bin(_) => 2,
            Token::Un(_) => 1,
            _ => 0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.arity() == 0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bin(op) => f.write_str(op.symbol()),
            Token::Un(op) => f.write_str(op.name()),
            Token::Feat(s) => f.write_str(s),
            Token::Const(v) => f.write_str(&number(*v)),
            Token::Param => f.write_str("c"),
        }
    }
}

/// Whether a token of arity `a` keeps the tree completable: after it, the
/// open slots must fit in the remaining budget.
pub fn arity_fits(open: usize, len: usize, max_len: usize, a: usize) -> bool {
    if open == 0 || len >= max_len {
        return false;
    }
    open - 1 + a <= max_len - (len + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixBuilder {
    pub tokens: Vec<Token>,
    pub open: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("token would leave the tree uncompletable")]
    Illegal,
    #[error("expression is incomplete")]
    Incomplete,
}

impl PrefixBuilder {
    pub fn new(max_len: usize) -> Self {
        Self {
            tokens: Vec::new(),
            open: 1,
            max_len,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.open == 0
    }

    pub fn remaining(&self) -> usize {
        self.max_len.saturating_sub(self.tokens.len())
    }

    pub fn can_push(&self, t: &Token) -> bool {
        arity_fits(self.open, self.tokens.len(), self.max_len, t.arity())
    }

    /// Indices of vocabulary entries that may be appended.
    pub fn legal(&self, vocab: &[Token]) -> Vec<usize> {
        (0..vocab.len()).filter(|&i| self.can_push(&vocab[i])).collect()
    }

    pub fn push(&mut self, t: Token) -> Result<(), GrammarError> {
        if !self.can_push(&t) {
            return Err(GrammarError::Illegal);
        }
        self.open = self.open - 1 + t.arity();
        self.tokens.push(t);
        Ok(())
    }

    /// Canonical prefix string, used as a state key.
    pub fn key(&self) -> String {
        self.tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn to_expr(&self) -> Result<ExprNode, GrammarError> {
        if !self.is_complete() {
            return Err(GrammarError::Incomplete);
        }
        from_prefix(&self.tokens).ok_or(GrammarError::Incomplete)
    }
}

/// Builds a tree from a complete prefix sequence; `Param` becomes a mutable constant 1.
pub fn from_prefix(tokens: &[Token]) -> Option<ExprNode> {
    fn go(tokens: &[Token], i: &mut usize) -> Option<ExprNode> {
        let t = tokens.get(*i)?;
        *i += 1;
        Some(match t {
            Token::Bin(op) => {
                let a = go(tokens, i)?;
                let b = go(tokens, i)?;
                ExprNode::binary(*op, a, b)
            }
            Token::Un(op) => ExprNode::unary(*op, go(tokens, i)?),
            Token::Feat(f) => ExprNode::Feature(f.clone()),
            Token::Const(v) => ExprNode::constant(*v),
            Token::Param => ExprNode::constant(1.0),
        })
    }
    let mut i = 0;
    let e = go(tokens, &mut i)?;
    (i == tokens.len()).then_some(e)
}

/// Pre-order tokens of a tree; indicator nodes are not representable.
pub fn to_prefix(e: &ExprNode) -> Option<Vec<Token>> {
    fn go(e: &ExprNode, out: &mut Vec<Token>) -> Option<()> {
        match e {
            ExprNode::Feature(f) => out.push(Token::Feat(f.clone())),
            ExprNode::Const { value, .. } => out.push(Token::Const(*value)),
            ExprNode::Unary(op, a) => {
                out.push(Token::Un(*op));
                go(a, out)?;
            }
            ExprNode::Binary(op, a, b) => {
                out.push(Token::Bin(*op));
                go(a, out)?;
                go(b, out)?;
            }
            ExprNode::Indicator(..) => return None,
        }
        Some(())
    }
    let mut out = Vec::new();
    go(e, &mut out)?;
    Some(out)
}

/// Arithmetic operators, the given features and constants.
pub fn default_vocab(features: &[String], constants: &[f64], unary: &[UnaryOp]) -> Vec<Token> {
    let mut v: Vec<Token> = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div]
        .into_iter()
        .map(Token::Bin)
        .collect();
    v.extend(unary.iter().copied().map(Token::Un));
    v.extend(features.iter().cloned().map(Token::Feat));
    v.extend(constants.iter().copied().map(Token::Const));
    v
}
