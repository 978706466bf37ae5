use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Ident(String),
    Number(f64),
    Str(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Semi,
    Gt,
    Ge,
    Lt,
    Le,
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tok {
    pub kind: TokKind,
    pub line: usize,
    pub col: usize,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        message: msg.into(),
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Tok>, ParseError> {
    let mut toks = Vec::new();
    let mut indents: Vec<usize> = Vec::new();
    let mut depth = 0usize;
    let mut last_line = 1;
    for (li, raw_line) in src.lines().enumerate() {
        let line = li + 1;
        last_line = line;
        let chars: Vec<char> = raw_line.chars().collect();
        let mut i = 0;
        if depth == 0 {
            let mut width = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                width += if chars[i] == '\t' { 4 } else { 1 };
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue;
            }
            match indents.last().copied() {
                None => indents.push(width),
                Some(top) if width > top => {
                    indents.push(width);
                    toks.push(Tok {
                        kind: TokKind::Indent,
                        line,
                        col: 1,
                    });
                }
                Some(top) if width < top => {
                    while let Some(&t) = indents.last() {
                        if t <= width {
                            break;
                        }
                        indents.pop();
                        toks.push(Tok {
                            kind: TokKind::Dedent,
                            line,
                            col: 1,
                        });
                    }
                    if indents.last().copied() != Some(width) {
                        return Err(err(line, i + 1, "inconsistent indentation"));
                    }
                }
                _ => {}
            }
        }
        let mut produced = false;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |toks: &mut Vec<Tok>, kind| toks.push(Tok { kind, line, col });
            if c == ' ' || c == '\t' || c == '\r' {
                i += 1;
                continue;
            }
            if c == '#' {
                break;
            }
            produced = true;
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                push(&mut toks, TokKind::Ident(chars[start..i].iter().collect()));
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => push(&mut toks, TokKind::Number(v)),
                    _ => return Err(err(line, col, format!("malformed number `{text}`"))),
                }
                continue;
            }
            if c == '\'' || c == '"' {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != c {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err(line, col, "unterminated string"));
                }
                push(&mut toks, TokKind::Str(chars[start..j].iter().collect()));
                i = j + 1;
                continue;
            }
            let next = chars.get(i + 1).copied();
            let (kind, width) = match (c, next) {
                ('*', Some('*')) => (TokKind::Caret, 2),
                ('>', Some('=')) => (TokKind::Ge, 2),
                ('<', Some('=')) => (TokKind::Le, 2),
                ('+', _) => (TokKind::Plus, 1),
                ('-', _) => (TokKind::Minus, 1),
                ('*', _) => (TokKind::Star, 1),
                ('/', _) => (TokKind::Slash, 1),
                ('^', _) => (TokKind::Caret, 1),
                ('(', _) => (TokKind::LParen, 1),
                (')', _) => (TokKind::RParen, 1),
                ('[', _) => (TokKind::LBracket, 1),
                (']', _) => (TokKind::RBracket, 1),
                (',', _) => (TokKind::Comma, 1),
                (':', _) => (TokKind::Colon, 1),
                (';', _) => (TokKind::Semi, 1),
                ('>', _) => (TokKind::Gt, 1),
                ('<', _) => (TokKind::Lt, 1),
                _ => return Err(err(line, col, format!("unexpected character `{c}`"))),
            };
            match kind {
                TokKind::LParen | TokKind::LBracket => depth += 1,
                TokKind::RParen | TokKind::RBracket => depth = depth.saturating_sub(1),
                _ => {}
            }
            push(&mut toks, kind);
            i += width;
        }
        if produced && depth == 0 {
            toks.push(Tok {
                kind: TokKind::Newline,
                line,
                col: chars.len() + 1,
            });
        }
    }
    while indents.len() > 1 {
        indents.pop();
        toks.push(Tok {
            kind: TokKind::Dedent,
            line: last_line + 1,
            col: 1,
        });
    }
    toks.push(Tok {
        kind: TokKind::Eof,
        line: last_line + 1,
        col: 1,
    });
    Ok(toks)
}
