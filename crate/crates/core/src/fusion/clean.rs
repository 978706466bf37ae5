use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub id: String,
    pub features: Vec<f64>,
    pub prediction: f64,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Judgment {
    Valid,
    /// `corrected: None` removes the sample.
    Invalid { corrected: Option<f64>, rule: String },
    Uncertain,
}

pub trait Cleaner {
    fn judge(&mut self, sample: &LabeledPrediction) -> Judgment;
}

/// Applies a fixed judgment list in order, then `Valid`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedCleaner {
    pub judgments: Vec<Judgment>,
    pub calls: usize,
}

impl Cleaner for ScriptedCleaner {
    fn judge(&mut self, _sample: &LabeledPrediction) -> Judgment {
        let j = self.judgments.get(self.calls).cloned().unwrap_or(Judgment::Valid);
        self.calls += 1;
        j
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanOutcome {
    pub cleaned: Vec<LabeledPrediction>,
    pub manual_review: Vec<LabeledPrediction>,
    pub new_rules: Vec<String>,
    pub corrected: usize,
    pub removed: usize,
}

/// Routes samples with confidence below `delta` through the cleaner.
/// Invalid samples are corrected or dropped, uncertain ones are queued for
/// review and kept as they are.
pub fn posterior_clean(
    samples: &[LabeledPrediction],
    confidence: impl Fn(&LabeledPrediction) -> f64,
    delta: f64,
    cleaner: &mut dyn Cleaner,
) -> CleanOutcome {
    let mut out = CleanOutcome::default();
    for s in samples {
        if confidence(s) >= delta {
            out.cleaned.push(s.clone());
            continue;
        }
        match cleaner.judge(s) {
            Judgment::Valid => out.cleaned.push(s.clone()),
            Judgment::Uncertain => {
                out.manual_review.push(s.clone());
                out.cleaned.push(s.clone());
            }
            Judgment::Invalid { corrected, rule } => {
                out.new_rules.push(rule);
                match corrected {
                    Some(v) => {
                        let mut c = s.clone();
                        c.label = v;
                        out.cleaned.push(c);
                        out.corrected += 1;
                    }
                    None => out.removed += 1,
                }
            }
        }
    }
    out
}
