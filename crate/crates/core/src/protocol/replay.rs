use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chiplet::ChipletId;
use crate::crypto::{hamming_distance, Digest256, SessionContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum ResponseCheck {
    Accepted,
    /// Same digest delivered again within the session: accepted once, flagged.
    Duplicate,
    Rejected {
        hamming: u32,
    },
}

impl ResponseCheck {
    pub fn accepted(&self) -> bool {
        !matches!(self, ResponseCheck::Rejected { .. })
    }
}

/// Per-session response checker. A response is only ever compared with the
/// digest expected in the current session, so anything recorded elsewhere is
/// rejected by the nonce binding alone.
#[derive(Debug, Clone)]
pub struct ReplayGuard {
    session: SessionContext,
    accepted: BTreeMap<(ChipletId, ChipletId), Digest256>,
}

impl ReplayGuard {
    pub fn new(session: SessionContext) -> Self {
        ReplayGuard {
            session,
            accepted: BTreeMap::new(),
        }
    }

    pub fn session(&self) -> &SessionContext {
        &self.session
    }

    pub fn check(
        &mut self,
        verifier: ChipletId,
        target: ChipletId,
        observed: &Digest256,
        expected: &Digest256,
    ) -> ResponseCheck {
        if observed != expected {
            return ResponseCheck::Rejected {
                hamming: hamming_distance(observed, expected),
            };
        }
        match self.accepted.insert((verifier, target), *observed) {
            Some(prev) if prev == *observed => ResponseCheck::Duplicate,
            _ => ResponseCheck::Accepted,
        }
    }
}
