use super::lexer::{tokenize, Tok, TokKind};
use super::lexicon::{Correction, Lexicon};
use super::{BinaryOp, Cmp, Condition, DecisionRule, ExprNode, Region, UnaryOp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unknown identifier `{ident}` at {line}:{col}{}", nearest_note(.nearest, .distance))]
    Uncorrectable {
        ident: String,
        nearest: Option<String>,
        distance: Option<usize>,
        line: usize,
        col: usize,
    },
    #[error("arity error at {line}:{col}: `{function}` takes {expected} argument(s), got {found}")]
    Arity {
        function: String,
        expected: usize,
        found: usize,
        line: usize,
        col: usize,
    },
    #[error("empty rule source")]
    Empty,
}

fn nearest_note(nearest: &Option<String>, distance: &Option<usize>) -> String {
    match (nearest, distance) {
        (Some(n), Some(d)) => format!(" (nearest `{n}` at distance {d})"),
        _ => String::new(),
    }
}

impl ParseError {
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::Uncorrectable { line, col, .. }
            | ParseError::Arity { line, col, .. } => Some((*line, *col)),
            ParseError::Empty => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutput {
    pub rule: DecisionRule,
    pub corrections: Vec<Correction>,
}

#[derive(Debug, Clone)]
enum Stmt {
    If {
        conds: Vec<Condition>,
        then: Vec<Stmt>,
        els: Vec<Stmt>,
    },
    Return(Option<ExprNode>),
    Pass,
}

const PAIR_KEYS: [&str; 3] = ["gate", "price", "tau"];

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    lex: &'a Lexicon,
    corrections: Vec<Correction>,
    param: Option<String>,
}

/// Parses rule source in either surface form.
pub fn parse(text: &str, lex: &Lexicon) -> Result<ParseOutput, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        lex,
        corrections: Vec::new(),
        param: None,
    };
    let rule = p.program()?;
    Ok(ParseOutput {
        rule,
        corrections: p.corrections,
    })
}

/// Parses a single expression.
pub fn parse_expr(text: &str, lex: &Lexicon) -> Result<(ExprNode, Vec<Correction>), ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        lex,
        corrections: Vec::new(),
        param: None,
    };
    let e = p.expr()?;
    p.skip_newlines();
    p.expect_eof()?;
    Ok((e, p.corrections))
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, tok: &Tok, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            line: tok.line,
            col: tok.col,
            message: msg.into(),
        })
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<Tok, ParseError> {
        let t = self.peek().clone();
        if t.kind == kind {
            Ok(self.bump())
        } else {
            self.syntax(&t, format!("expected {what}, found {}", describe(&t.kind)))
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        let t = self.peek().clone();
        if t.kind == TokKind::Eof {
            Ok(())
        } else {
            self.syntax(&t, format!("unexpected {}", describe(&t.kind)))
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek().kind, TokKind::Newline | TokKind::Semi) {
            self.bump();
        }
    }

    fn record(&mut self, from: &str, to: &str, tok: &Tok) {
        if from != to {
            self.corrections.push(Correction {
                from: from.to_string(),
                to: to.to_string(),
                line: tok.line,
                col: tok.col,
            });
        }
    }

    fn resolve(&mut self, raw: &str, tok: &Tok, features_only: bool) -> Result<String, ParseError> {
        match self.lex.resolve(raw, features_only) {
            Ok(t) => {
                self.record(raw, &t, tok);
                Ok(t)
            }
            Err(nearest) => Err(ParseError::Uncorrectable {
                ident: raw.to_string(),
                nearest: nearest.as_ref().map(|n| n.0.clone()),
                distance: nearest.map(|n| n.1),
                line: tok.line,
                col: tok.col,
            }),
        }
    }

    /// Resolves against a fixed keyword set without touching feature names.
    fn resolve_in(&mut self, raw: &str, tok: &Tok, set: &[&str]) -> Option<String> {
        if set.contains(&raw) {
            return Some(raw.to_string());
        }
        if self.lex.is_known(raw) {
            return None;
        }
        let mut best: Option<(&str, usize)> = None;
        for &k in set {
            let d = strsim::levenshtein(raw, k);
            if best.is_none_or(|(bk, bd)| d < bd || (d == bd && k < bk)) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if d <= self.lex.threshold() => {
                self.record(raw, k, tok);
                Some(k.to_string())
            }
            _ => None,
        }
    }

    fn program(&mut self) -> Result<DecisionRule, ParseError> {
        self.skip_newlines();
        let first = self.peek().clone();
        if let TokKind::Ident(raw) = &first.kind {
            if self.peek_at(1).kind == TokKind::Colon {
                let before = self.corrections.len();
                if self.resolve_in(raw, &first, &PAIR_KEYS).is_some() {
                    self.corrections.truncate(before);
                    return self.pair_form();
                }
            }
            let before = self.corrections.len();
            match self.resolve_in(raw, &first, &["if", "return", "def", "pass"]) {
                Some(_) => {
                    self.corrections.truncate(before);
                    return self.statement_form();
                }
                None => self.corrections.truncate(before),
            }
        }
        let e = self.expr()?;
        self.skip_newlines();
        self.expect_eof()?;
        Ok(DecisionRule::priced(e))
    }

    fn pair_form(&mut self) -> Result<DecisionRule, ParseError> {
        let (mut gate, mut price, mut tau) = (None, None, None);
        loop {
            self.skip_newlines();
            let t = self.peek().clone();
            if t.kind == TokKind::Eof {
                break;
            }
            let key = match &t.kind {
                TokKind::Ident(raw) => {
                    let raw = raw.clone();
                    match self.resolve_in(&raw, &t, &PAIR_KEYS) {
                        Some(k) => k,
                        None => return self.syntax(&t, format!("expected `gate`, `price` or `tau`, found `{raw}`")),
                    }
                }
                other => return self.syntax(&t, format!("expected `gate`, `price` or `tau`, found {}", describe(other))),
            };
            self.bump();
            self.expect(TokKind::Colon, "`:`")?;
            let dup = match key.as_str() {
                "gate" => gate.replace(self.expr()?).is_some(),
                "price" => price.replace(self.expr()?).is_some(),
                _ => tau.replace(self.signed_number()?).is_some(),
            };
            if dup {
                return self.syntax(&t, format!("`{key}` given twice"));
            }
            let sep = self.peek().clone();
            match sep.kind {
                TokKind::Semi | TokKind::Newline | TokKind::Eof => {}
                ref k => return self.syntax(&sep, format!("expected `;` or end of line, found {}", describe(k))),
            }
        }
        let end = self.peek().clone();
        let Some(price) = price else {
            return self.syntax(&end, "missing `price:` entry");
        };
        Ok(DecisionRule {
            gate: gate.unwrap_or_else(|| ExprNode::fixed(1.0)),
            price,
            threshold: tau.unwrap_or(0.0),
        })
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = if self.peek().kind == TokKind::Minus {
            self.bump();
            true
        } else {
            false
        };
        let t = self.bump();
        match t.kind {
            TokKind::Number(v) => Ok(if neg { -v } else { v }),
            ref k => self.syntax(&t, format!("expected number, found {}", describe(k))),
        }
    }

    fn keyword_at(&mut self, set: &[&str]) -> Option<String> {
        let t = self.peek().clone();
        match &t.kind {
            TokKind::Ident(raw) => {
                let raw = raw.clone();
                self.resolve_in(&raw, &t, set)
            }
            _ => None,
        }
    }

    fn statement_form(&mut self) -> Result<DecisionRule, ParseError> {
        let start = self.peek().clone();
        let body = if self.keyword_at(&["def"]).is_some() {
            self.bump();
            let name = self.bump();
            if !matches!(name.kind, TokKind::Ident(_)) {
                return self.syntax(&name, "expected function name");
            }
            self.expect(TokKind::LParen, "`(`")?;
            let p = self.bump();
            match p.kind {
                TokKind::Ident(n) => self.param = Some(n),
                ref k => return self.syntax(&p, format!("expected parameter name, found {}", describe(k))),
            }
            self.expect(TokKind::RParen, "`)`")?;
            self.expect(TokKind::Colon, "`:`")?;
            self.suite()?
        } else {
            self.block()?
        };
        self.skip_newlines();
        self.expect_eof()?;
        let mut leaves = Vec::new();
        lower(&body, Vec::new(), &mut leaves).map_err(|()| ParseError::Syntax {
            line: start.line,
            col: start.col,
            message: "a path through the rule ends without `return`".into(),
        })?;
        Ok(assemble(leaves))
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            if matches!(self.peek().kind, TokKind::Dedent | TokKind::Eof) {
                break;
            }
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.peek().kind == TokKind::Newline {
            self.bump();
            self.expect(TokKind::Indent, "indented block")?;
            let b = self.block()?;
            self.expect(TokKind::Dedent, "end of block")?;
            Ok(b)
        } else {
            Ok(vec![self.statement()?])
        }
    }

    fn end_simple(&mut self) -> Result<(), ParseError> {
        let t = self.peek().clone();
        match t.kind {
            TokKind::Newline | TokKind::Semi => {
                self.bump();
                Ok(())
            }
            TokKind::Eof | TokKind::Dedent => Ok(()),
            ref k => self.syntax(&t, format!("expected end of statement, found {}", describe(k))),
        }
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let t = self.peek().clone();
        let kw = self.keyword_at(&["if", "return", "pass"]);
        match kw.as_deref() {
            Some("if") => {
                self.bump();
                self.if_tail()
            }
            Some("return") => {
                self.bump();
                let next = self.peek().clone();
                if let TokKind::Ident(raw) = &next.kind {
                    if raw == "None" || raw == "none" {
                        self.bump();
                        self.end_simple()?;
                        return Ok(Stmt::Return(None));
                    }
                }
                if matches!(next.kind, TokKind::Newline | TokKind::Eof | TokKind::Dedent) {
                    return self.syntax(&next, "`return` needs an expression or `None`");
                }
                let e = self.expr()?;
                self.end_simple()?;
                Ok(Stmt::Return(Some(e)))
            }
            Some(_) => {
                self.bump();
                self.end_simple()?;
                Ok(Stmt::Pass)
            }
            None => self.syntax(&t, format!("expected statement, found {}", describe(&t.kind))),
        }
    }

    fn if_tail(&mut self) -> Result<Stmt, ParseError> {
        let conds = self.conjunction()?;
        self.expect(TokKind::Colon, "`:`")?;
        let then = self.suite()?;
        self.skip_newlines();
        let els = match self.keyword_at(&["elif", "else"]).as_deref() {
            Some("elif") => {
                self.bump();
                vec![self.if_tail()?]
            }
            Some(_) => {
                self.bump();
                self.expect(TokKind::Colon, "`:`")?;
                self.suite()?
            }
            None => Vec::new(),
        };
        Ok(Stmt::If { conds, then, els })
    }

    fn conjunction(&mut self) -> Result<Vec<Condition>, ParseError> {
        let mut out = vec![self.condition()?];
        while self.keyword_at(&["and"]).is_some() {
            self.bump();
            out.push(self.condition()?);
        }
        Ok(out)
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let t = self.peek().clone();
        let number_first = matches!(t.kind, TokKind::Number(_) | TokKind::Minus);
        let (feature, threshold, cmp);
        if number_first {
            threshold = self.signed_number()?;
            let c = self.comparator()?;
            feature = self.feature_ref()?;
            cmp = c.flip();
        } else {
            feature = self.feature_ref()?;
            cmp = self.comparator()?;
            threshold = self.signed_number()?;
        }
        Ok(Condition {
            feature,
            cmp,
            threshold,
        })
    }

    fn comparator(&mut self) -> Result<Cmp, ParseError> {
        let t = self.bump();
        Ok(match t.kind {
            TokKind::Gt => Cmp::Gt,
            TokKind::Ge => Cmp::Ge,
            TokKind::Lt => Cmp::Lt,
            TokKind::Le => Cmp::Le,
            ref k => return self.syntax(&t, format!("expected comparison, found {}", describe(k))),
        })
    }

    fn is_subscript_base(&self, raw: &str) -> bool {
        raw == "row" || self.param.as_deref() == Some(raw)
    }

    fn feature_ref(&mut self) -> Result<String, ParseError> {
        let t = self.bump();
        match &t.kind {
            TokKind::Ident(raw) if self.is_subscript_base(raw) && self.peek().kind == TokKind::LBracket => {
                self.subscript()
            }
            TokKind::Ident(raw) => {
                let raw = raw.clone();
                self.resolve(&raw, &t, true)
            }
            k => self.syntax(&t, format!("expected feature name, found {}", describe(k))),
        }
    }

    fn subscript(&mut self) -> Result<String, ParseError> {
        self.expect(TokKind::LBracket, "`[`")?;
        let s = self.bump();
        let name = match &s.kind {
            TokKind::Str(name) => name.clone(),
            k => return self.syntax(&s, format!("expected quoted feature name, found {}", describe(k))),
        };
        let resolved = self.resolve(&name, &s, true)?;
        self.expect(TokKind::RBracket, "`]`")?;
        Ok(resolved)
    }

    fn expr(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                TokKind::Plus => BinaryOp::Add,
                TokKind::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = ExprNode::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                TokKind::Star => BinaryOp::Mul,
                TokKind::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = ExprNode::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        match self.peek().kind {
            TokKind::Minus => {
                self.bump();
                if let TokKind::Number(v) = self.peek().kind {
                    self.bump();
                    return self.power_tail(ExprNode::constant(-v));
                }
                Ok(ExprNode::unary(UnaryOp::Neg, self.unary()?))
            }
            TokKind::Plus => {
                self.bump();
                self.unary()
            }
            _ => {
                let base = self.primary()?;
                self.power_tail(base)
            }
        }
    }

    fn power_tail(&mut self, base: ExprNode) -> Result<ExprNode, ParseError> {
        if self.peek().kind == TokKind::Caret {
            self.bump();
            let exp = self.unary()?;
            Ok(ExprNode::binary(BinaryOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn args(&mut self) -> Result<Vec<ExprNode>, ParseError> {
        self.expect(TokKind::LParen, "`(`")?;
        let mut out = Vec::new();
        if self.peek().kind == TokKind::RParen {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            let t = self.bump();
            match t.kind {
                TokKind::Comma => continue,
                TokKind::RParen => return Ok(out),
                ref k => return self.syntax(&t, format!("expected `,` or `)`, found {}", describe(k))),
            }
        }
    }

    fn call(&mut self, name: &str, tok: &Tok, expected: usize) -> Result<Vec<ExprNode>, ParseError> {
        let args = self.args()?;
        if args.len() != expected {
            return Err(ParseError::Arity {
                function: name.to_string(),
                expected,
                found: args.len(),
                line: tok.line,
                col: tok.col,
            });
        }
        Ok(args)
    }

    fn primary(&mut self) -> Result<ExprNode, ParseError> {
        let t = self.bump();
        match &t.kind {
            TokKind::Number(v) => Ok(ExprNode::constant(*v)),
            TokKind::LParen => {
                let e = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(e)
            }
            TokKind::Ident(raw) if self.is_subscript_base(raw) && self.peek().kind == TokKind::LBracket => {
                Ok(ExprNode::Feature(self.subscript()?))
            }
            TokKind::Ident(raw) => {
                let raw = raw.clone();
                let name = self.resolve(&raw, &t, false)?;
                if self.lex.is_feature(&name) {
                    return Ok(ExprNode::Feature(name));
                }
                if let Some(op) = UnaryOp::from_name(&name) {
                    let mut a = self.call(&name, &t, 1)?;
                    return Ok(ExprNode::unary(op, a.remove(0)));
                }
                match name.as_str() {
                    "pow" => {
                        let mut a = self.call(&name, &t, 2)?;
                        let b = a.remove(1);
                        Ok(ExprNode::binary(BinaryOp::Pow, a.remove(0), b))
                    }
                    "fixed" => {
                        self.expect(TokKind::LParen, "`(`")?;
                        let v = self.signed_number()?;
                        self.expect(TokKind::RParen, "`)`")?;
                        Ok(ExprNode::fixed(v))
                    }
                    "when" => {
                        self.expect(TokKind::LParen, "`(`")?;
                        let region = if self.looks_like_condition() {
                            let c = self.conjunction()?;
                            self.expect(TokKind::Comma, "`,`")?;
                            c
                        } else {
                            Vec::new()
                        };
                        let e = self.expr()?;
                        self.expect(TokKind::RParen, "`)`")?;
                        Ok(ExprNode::indicator(Region { conditions: region }, e))
                    }
                    _ => self.syntax(&t, format!("unexpected keyword `{name}` in expression")),
                }
            }
            k => self.syntax(&t, format!("expected expression, found {}", describe(k))),
        }
    }

    /// True when the upcoming tokens start `feature cmp number` or `number cmp feature`.
    fn looks_like_condition(&self) -> bool {
        let is_cmp = |k: &TokKind| matches!(k, TokKind::Gt | TokKind::Ge | TokKind::Lt | TokKind::Le);
        let mut k = 0;
        match &self.peek_at(0).kind {
            TokKind::Minus => {
                k = 2;
            }
            TokKind::Number(_) => k = 1,
            TokKind::Ident(raw) if self.is_subscript_base(raw) && self.peek_at(1).kind == TokKind::LBracket => k = 4,
            TokKind::Ident(_) => k = 1,
            _ => {}
        }
        k > 0 && is_cmp(&self.peek_at(k).kind)
    }
}

fn describe(k: &TokKind) -> String {
    match k {
        TokKind::Ident(s) => format!("`{s}`"),
        TokKind::Number(v) => format!("number {v}"),
        TokKind::Str(s) => format!("string '{s}'"),
        TokKind::Newline => "end of line".into(),
        TokKind::Indent => "indent".into(),
        TokKind::Dedent => "dedent".into(),
        TokKind::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

fn negate(c: &Condition) -> Condition {
    Condition {
        feature: c.feature.clone(),
        cmp: c.cmp.negate(),
        threshold: c.threshold,
    }
}

/// Flattens statements into (path, returned expression) leaves that partition the input space.
fn lower(stmts: &[Stmt], path: Vec<Condition>, out: &mut Vec<(Vec<Condition>, Option<ExprNode>)>) -> Result<(), ()> {
    for (i, s) in stmts.iter().enumerate() {
        match s {
            Stmt::Pass => continue,
            Stmt::Return(e) => {
                out.push((path, e.clone()));
                return Ok(());
            }
            Stmt::If { conds, then, els } => {
                let rest = &stmts[i + 1..];
                let mut then_seq = then.clone();
                then_seq.extend_from_slice(rest);
                let mut p = path.clone();
                p.extend(conds.iter().cloned());
                lower(&then_seq, p, out)?;
                let mut else_seq = els.clone();
                else_seq.extend_from_slice(rest);
                for j in 0..conds.len() {
                    let mut p = path.clone();
                    p.extend(conds[..j].iter().cloned());
                    p.push(negate(&conds[j]));
                    lower(&else_seq, p, out)?;
                }
                return Ok(());
            }
        }
    }
    Err(())
}

fn sum(terms: Vec<ExprNode>) -> Option<ExprNode> {
    terms.into_iter().reduce(ExprNode::add)
}

fn assemble(leaves: Vec<(Vec<Condition>, Option<ExprNode>)>) -> DecisionRule {
    if leaves.len() == 1 && leaves[0].0.is_empty() {
        return match leaves.into_iter().next().unwrap().1 {
            Some(e) => DecisionRule::priced(e),
            None => DecisionRule::new(ExprNode::fixed(0.0), ExprNode::fixed(0.0), 0.0),
        };
    }
    let all_stock = leaves.iter().all(|l| l.1.is_some());
    let mut prices = Vec::new();
    let mut gates = Vec::new();
    for (path, e) in leaves {
        if let Some(e) = e {
            let region = Region { conditions: path };
            gates.push(ExprNode::indicator(region.clone(), ExprNode::fixed(1.0)));
            prices.push(ExprNode::indicator(region, e));
        }
    }
    let gate = if all_stock {
        ExprNode::fixed(1.0)
    } else {
        sum(gates).unwrap_or_else(|| ExprNode::fixed(0.0))
    };
    DecisionRule::new(gate, sum(prices).unwrap_or_else(|| ExprNode::fixed(0.0)), 0.0)
}
