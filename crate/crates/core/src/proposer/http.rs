use super::{Proposer, ProposerError, ProposerMode, ProposerRequest, ProposerResponse};

pub const PROPOSER_URL_ENV: &str = "PRICERULE_PROPOSER_URL";

/// Speaks the proposer JSON protocol to an HTTP endpoint via POST.
#[derive(Debug, Clone)]
pub struct HttpProposer {
    pub url: String,
}

impl HttpProposer {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(PROPOSER_URL_ENV).ok().filter(|u| !u.is_empty()).map(Self::new)
    }

    fn call(&self, req: &ProposerRequest) -> Result<ProposerResponse, ProposerError> {
        let mut resp = ureq::post(&self.url)
            .send_json(req)
            .map_err(|e| ProposerError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<ProposerResponse>()
            .map_err(|e| ProposerError::Protocol(e.to_string()))
    }
}

impl Proposer for HttpProposer {
    fn generate(&mut self, req: &ProposerRequest) -> Result<String, ProposerError> {
        match self.call(req)? {
            ProposerResponse::Rule { rule_source } => Ok(rule_source),
            ProposerResponse::Priors { .. } => Err(ProposerError::Protocol("expected rule_source".into())),
        }
    }

    fn value_and_priors(&mut self, state: &str, legal: &[String]) -> Result<(Vec<f64>, f64), ProposerError> {
        let req = ProposerRequest {
            mode: ProposerMode::Priors,
            context: state.to_string(),
            legal_actions: legal.to_vec(),
        };
        match self.call(&req)? {
            ProposerResponse::Priors { priors, value } => {
                let p = legal.iter().map(|a| priors.get(a).copied().unwrap_or(0.0)).collect();
                Ok((p, value.clamp(0.0, 1.0)))
            }
            ProposerResponse::Rule { .. } => Err(ProposerError::Protocol("expected priors".into())),
        }
    }
}
