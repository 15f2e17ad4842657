//! Oracle construction for the configured mode.

use sigrl::episode::Oracles;
use sigrl::oracle::synthetic::{CaseSpecScorer, SyntheticChecker, SyntheticPatient};
use sigrl::oracle::{
    AnswerScorer, CacheEpoch, CachedChecker, CachedPolicy, CachedScorer, FactChecker, Patient,
    Policy,
};
use sigrl::Result;
use sigrl_http::{HttpChecker, HttpPatient, HttpPolicy, HttpScorer};

use crate::config::{OracleMode, RunConfig};

pub struct Backend {
    policy: Box<dyn Policy>,
    patient: Box<dyn Patient>,
    checker: Box<dyn FactChecker>,
    scorer: Box<dyn AnswerScorer>,
}

impl Backend {
    /// In HTTP mode the checker, scorer and understanding calls are memoized
    /// for the lifetime of the run.
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(match config.oracle {
            OracleMode::Synthetic => Backend {
                policy: Box::new(config.synthetic.policy.clone()),
                patient: Box::new(SyntheticPatient),
                checker: Box::new(SyntheticChecker),
                scorer: Box::new(CaseSpecScorer),
            },
            OracleMode::Http => {
                let epoch = CacheEpoch::new();
                let e = &config.endpoints;
                Backend {
                    policy: Box::new(CachedPolicy::new(HttpPolicy::new(e)?, epoch.clone())),
                    patient: Box::new(HttpPatient::new(e)?),
                    checker: Box::new(CachedChecker::new(HttpChecker::new(e)?, epoch.clone())),
                    scorer: Box::new(CachedScorer::new(HttpScorer::new(e)?, epoch)),
                }
            }
        })
    }

    pub fn oracles(&self) -> Oracles<'_> {
        Oracles {
            policy: self.policy.as_ref(),
            patient: self.patient.as_ref(),
            checker: self.checker.as_ref(),
            scorer: self.scorer.as_ref(),
        }
    }
}
