use super::lexicon::KEYWORDS;
use super::{BinaryOp, DecisionRule, ExprNode, Region};

/// Canonical number text: shortest round-trip form, `0` for either zero.
pub(crate) fn number(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

fn feature(name: &str) -> String {
    if is_identifier(name) {
        name.to_string()
    } else if name.contains('\'') {
        format!("row[\"{name}\"]")
    } else {
        format!("row['{name}']")
    }
}

fn precedence(n: &ExprNode) -> u8 {
    match n {
        ExprNode::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        ExprNode::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        ExprNode::Binary(BinaryOp::Pow, ..) => 3,
        ExprNode::Const { value, mutable: true } if *value < 0.0 => 0,
        _ => 4,
    }
}

fn region(r: &Region) -> String {
    r.conditions
        .iter()
        .map(|c| format!("{} {} {}", feature(&c.feature), c.cmp.symbol(), number(c.threshold)))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn write(n: &ExprNode, out: &mut String) {
    match n {
        ExprNode::Feature(f) => out.push_str(&feature(f)),
        ExprNode::Const { value, mutable: true } => out.push_str(&number(*value)),
        ExprNode::Const { value, mutable: false } => {
            out.push_str("fixed(");
            out.push_str(&number(*value));
            out.push(')');
        }
        ExprNode::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write(a, out);
            out.push(')');
        }
        ExprNode::Indicator(r, a) => {
            out.push_str("when(");
            if !r.conditions.is_empty() {
                out.push_str(&region(r));
                out.push_str(", ");
            }
            write(a, out);
            out.push(')');
        }
        ExprNode::Binary(op, a, b) => {
            let p = precedence(n);
            let right_assoc = *op == BinaryOp::Pow;
            let pa = precedence(a);
            let pb = precedence(b);
            let wrap_a = pa < p || (right_assoc && pa == p);
            let wrap_b = pb < p || (!right_assoc && pb == p);
            operand(a, wrap_a, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            operand(b, wrap_b, out);
        }
    }
}

fn operand(n: &ExprNode, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        write(n, out);
        out.push(')');
    } else {
        write(n, out);
    }
}

pub fn render_expr(n: &ExprNode) -> String {
    let mut s = String::new();
    write(n, &mut s);
    s
}

/// Canonical pair form: `gate: <expr>; price: <expr>[; tau: <t>]`.
pub fn render(rule: &DecisionRule) -> String {
    let mut s = format!("gate: {}; price: {}", render_expr(&rule.gate), render_expr(&rule.price));
    if rule.threshold != 0.0 {
        s.push_str("; tau: ");
        s.push_str(&number(rule.threshold));
    }
    s
}
