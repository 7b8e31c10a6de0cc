//! Session transcripts as JSON Lines: a header, one record per message, and
//! an end marker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::crypto::SessionContext;
use crate::net::Message;

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header {
        version: u32,
        seed: u64,
        session: SessionContext,
        config: Box<ScenarioConfig>,
    },
    Message(Message),
    End {
        messages: usize,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptError {
    #[error("transcript ends mid-session")]
    Truncated,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("transcript has no header")]
    MissingHeader,
    #[error("unsupported transcript version {0}")]
    Version(u32),
    #[error("end record counts {declared} messages, found {found}")]
    CountMismatch { declared: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub seed: u64,
    pub session: SessionContext,
    pub config: ScenarioConfig,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: &Record| {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        };
        push(&Record::Header {
            version: TRANSCRIPT_VERSION,
            seed: self.seed,
            session: self.session,
            config: Box::new(self.config.clone()),
        });
        for m in &self.messages {
            push(&Record::Message(m.clone()));
        }
        push(&Record::End {
            messages: self.messages.len(),
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let parse = |(i, line): (usize, &str)| {
            serde_json::from_str::<Record>(line).map_err(|e| TranscriptError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        };
        let (seed, session, config) = match lines.next().map(parse).transpose()? {
            Some(Record::Header {
                version,
                seed,
                session,
                config,
            }) => {
                if version != TRANSCRIPT_VERSION {
                    return Err(TranscriptError::Version(version));
                }
                (seed, session, *config)
            }
            _ => return Err(TranscriptError::MissingHeader),
        };
        let mut messages = Vec::new();
        for entry in lines.by_ref() {
            match parse(entry)? {
                Record::Message(m) => messages.push(m),
                Record::End { messages: declared } => {
                    if declared != messages.len() {
                        return Err(TranscriptError::CountMismatch {
                            declared,
                            found: messages.len(),
                        });
                    }
                    if let Some((i, _)) = lines.next() {
                        return Err(TranscriptError::Malformed {
                            line: i + 1,
                            message: "content after end record".into(),
                        });
                    }
                    return Ok(Transcript {
                        seed,
                        session,
                        config,
                        messages,
                    });
                }
                Record::Header { .. } => {
                    return Err(TranscriptError::Malformed {
                        line: entry.0 + 1,
                        message: "second header".into(),
                    })
                }
            }
        }
        Err(TranscriptError::Truncated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chiplet::{Behavior, Role};
    use crate::config::{AttackSpec, NodeSpec, TopologySpec, SCENARIO_SCHEMA};
    use crate::crypto::SessionSource;
    use crate::net::{Layout, MessageKind};

    fn sample() -> Transcript {
        let config = ScenarioConfig {
            schema: SCENARIO_SCHEMA,
            name: None,
            seed: Some(3),
            topology: TopologySpec {
                nodes: vec![NodeSpec {
                    id: 1,
                    role: Role::Integrator,
                    behavior: Behavior::Genuine,
                    hash_cycles: None,
                }],
                edges: None,
                layout: Some(Layout::Star),
                faults: vec![],
                require_localization_coverage: false,
            },
            protocol: Default::default(),
            attacks: AttackSpec::default(),
        };
        let session = SessionSource::new(3).next_session();
        let msg = Message::new(
            1,
            2,
            MessageKind::Challenge,
            vec![0xab; 4],
            session.session_id,
            0,
        )
        .unwrap();
        Transcript {
            seed: 3,
            session,
            config,
            messages: vec![msg.clone(), msg],
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with(r#"{"record":"header""#));
        assert_eq!(Transcript::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn truncation_is_reported() {
        let text = sample().to_jsonl();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        let err = Transcript::from_jsonl(&cut).unwrap_err();
        assert_eq!(err, TranscriptError::Truncated);
        assert_eq!(err.to_string(), "transcript ends mid-session");
    }

    #[test]
    fn garbage_line_is_located() {
        let text = sample()
            .to_jsonl()
            .replacen("\"challenge\"", "\"bogus\"", 1);
        match Transcript::from_jsonl(&text).unwrap_err() {
            TranscriptError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
