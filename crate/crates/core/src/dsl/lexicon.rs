use std::fmt;

use serde::Serialize;

/// Reserved words of the rule language, including function names.
pub const KEYWORDS: &[&str] = &[
    "if", "elif", "else", "return", "def", "and", "None", "none", "pass", "row", "when",
    "fixed", "log", "ln", "exp", "sqrt", "sin", "cos", "neg", "sigmoid", "pow",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    features: Vec<String>,
    threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Correction {
    pub from: String,
    pub to: String,
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "corrected {} -> {} @ {}:{}", self.from, self.to, self.line, self.col)
    }
}

impl Lexicon {
    pub const DEFAULT_THRESHOLD: usize = 2;

    /// Duplicates and names colliding with keywords are dropped so tokens stay unique.
    pub fn new<I, S>(features: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for f in features {
            let f = f.into();
            if !out.contains(&f) && !KEYWORDS.contains(&f.as_str()) {
                out.push(f);
            }
        }
        Self {
            features: out,
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: usize) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn is_feature(&self, s: &str) -> bool {
        self.features.iter().any(|f| f == s)
    }

    pub fn is_keyword(s: &str) -> bool {
        KEYWORDS.contains(&s)
    }

    pub fn is_known(&self, s: &str) -> bool {
        self.is_feature(s) || Self::is_keyword(s)
    }

    /// Nearest known token: smallest distance, then lexicographically smallest.
    pub fn nearest(&self, s: &str, features_only: bool) -> Option<(String, usize)> {
        let kw = KEYWORDS.iter().copied().filter(|_| !features_only);
        let mut best: Option<(&str, usize)> = None;
        for t in self.features.iter().map(|f| f.as_str()).chain(kw) {
            let d = strsim::levenshtein(s, t);
            let better = match best {
                None => true,
                Some((bt, bd)) => d < bd || (d == bd && t < bt),
            };
            if better {
                best = Some((t, d));
            }
        }
        best.map(|(t, d)| (t.to_string(), d))
    }

    /// Exact tokens pass unchanged; otherwise the nearest token within the threshold.
    pub fn resolve(&self, s: &str, features_only: bool) -> Result<String, Option<(String, usize)>> {
        let exact = if features_only { self.is_feature(s) } else { self.is_known(s) };
        if exact {
            return Ok(s.to_string());
        }
        match self.nearest(s, features_only) {
            Some((t, d)) if d <= self.threshold => Ok(t),
            other => Err(other),
        }
    }
}
