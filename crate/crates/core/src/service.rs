//! Session workflow: generate and enumerate schedules, parse a question,
//! wait for the user to confirm the restatement, then explain and refine.
//!
//! A [`Session`] is transport-free. The HTTP server and the browser demo
//! both drive it; neither can reach the explainer except through
//! [`Session::confirm`] with a pending token.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::encoder::{encode, ConstraintCategory, LabeledKb};
use crate::explainer::{explain, ExplainError, Explained, Foil};
use crate::llm_gateway::Gateway;
use crate::queryparse::{
    parse_llm, restate, to_foil, FoilError, ParseError, ParseSource, ParsedQuery, QueryItem,
};
use crate::refiner::{refine_llm, RefineMode};
use crate::scheduler::{
    blocking_literals, generate_schedule, next_schedule, Generated, Next, Schedule,
    ScheduleDocument,
};

/// Milliseconds since the Unix epoch (or any monotone stand-in).
pub type Clock = fn() -> u64;

pub fn system_clock() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        courses: usize,
    },
    ScheduleGenerated {
        schedule: ScheduleDocument,
    },
    ScheduleInfeasible {},
    SchedulesExhausted {},
    QuerySubmitted {
        text: String,
        query_token: String,
        restatement: String,
        parsed: ParsedQuery,
    },
    QueryConfirmed {
        query_token: String,
    },
    QueryDiscarded {
        query_token: String,
    },
    ExplanationReturned {
        query_token: String,
        explanation: ExplanationPayload,
    },
    AlternativeReturned {
        query_token: String,
        schedule: ScheduleDocument,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } => "session_created",
            Event::ScheduleGenerated { .. } => "schedule_generated",
            Event::ScheduleInfeasible {} => "schedule_infeasible",
            Event::SchedulesExhausted {} => "schedules_exhausted",
            Event::QuerySubmitted { .. } => "query_submitted",
            Event::QueryConfirmed { .. } => "query_confirmed",
            Event::QueryDiscarded { .. } => "query_discarded",
            Event::ExplanationReturned { .. } => "explanation_returned",
            Event::AlternativeReturned { .. } => "alternative_returned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub text: String,
    pub constraint_ids: Vec<String>,
    pub clause_labels: Vec<String>,
    pub categories: Vec<ConstraintCategory>,
    pub minimal: bool,
    pub mode: RefineMode,
    pub llm_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScheduleStatus {
    Ok { schedule: ScheduleDocument },
    Infeasible,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub status: ScheduleStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query_token: String,
    pub restatement: String,
    pub items: Vec<QueryItem>,
    pub complexity: usize,
    pub source: ParseSource,
    pub llm_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConfirmResponse {
    Explained { explanation: ExplanationPayload },
    Alternative { alternative_schedule: ScheduleDocument },
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("unknown or already used query token {0}")]
    UnknownToken(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Foil(#[from] FoilError),
    #[error("the catalog admits no schedule, so there is nothing to ask about")]
    NoSchedule,
    #[error("internal explanation error: {0}")]
    Explain(#[from] ExplainError),
    #[error("history cannot be replayed: {0}")]
    Corrupt(String),
}

struct Pending {
    foil: Foil,
    schedule: Schedule,
}

pub struct Session {
    id: String,
    catalog: Arc<Catalog>,
    gateway: Arc<Gateway>,
    clock: Clock,
    kb: LabeledKb,
    schedule: Option<Schedule>,
    exhausted: bool,
    pending: BTreeMap<String, Pending>,
    history: Vec<HistoryEvent>,
    saved: usize,
}

impl Session {
    fn blank(id: String, catalog: Arc<Catalog>, gateway: Arc<Gateway>, clock: Clock) -> Self {
        let kb = encode(&catalog);
        Session {
            id,
            catalog,
            gateway,
            clock,
            kb,
            schedule: None,
            exhausted: false,
            pending: BTreeMap::new(),
            history: Vec::new(),
            saved: 0,
        }
    }

    /// Opens a session and generates its first schedule.
    pub fn create(id: String, catalog: Arc<Catalog>, gateway: Arc<Gateway>, clock: Clock) -> Self {
        let mut s = Session::blank(id, catalog, gateway, clock);
        s.record(Event::SessionCreated {
            courses: s.catalog.len(),
        });
        match generate_schedule(&mut s.kb) {
            Generated::Schedule(schedule) => {
                s.record(Event::ScheduleGenerated {
                    schedule: schedule.to_document(&s.catalog),
                });
                s.schedule = Some(schedule);
            }
            Generated::Infeasible => s.record(Event::ScheduleInfeasible {}),
        }
        s
    }

    /// Rebuilds a session from its recorded history: the schedule sequence
    /// (with the blocking clauses it implies) and any pending questions.
    pub fn restore(
        id: String,
        catalog: Arc<Catalog>,
        gateway: Arc<Gateway>,
        clock: Clock,
        history: Vec<HistoryEvent>,
    ) -> Result<Self, SessionError> {
        let mut s = Session::blank(id, catalog, gateway, clock);
        for h in &history {
            match &h.event {
                Event::ScheduleGenerated { schedule } => {
                    if let Some(prev) = s.schedule.take() {
                        let lits = blocking_literals(&s.kb, &prev);
                        s.kb.add_blocking_clause(lits);
                    }
                    let next = schedule.to_schedule();
                    if next.num_semesters() != s.kb.num_semesters() {
                        return Err(SessionError::Corrupt("schedule shape differs from catalog".into()));
                    }
                    s.schedule = Some(next);
                }
                Event::SchedulesExhausted {} => {
                    if let Some(prev) = &s.schedule {
                        let lits = blocking_literals(&s.kb, prev);
                        s.kb.add_blocking_clause(lits);
                    }
                    s.exhausted = true;
                }
                Event::QuerySubmitted {
                    query_token, parsed, ..
                } => {
                    let schedule = s
                        .schedule
                        .clone()
                        .ok_or_else(|| SessionError::Corrupt("query without schedule".into()))?;
                    let foil = to_foil(parsed, &schedule, &s.kb)?;
                    s.pending.insert(query_token.clone(), Pending { foil, schedule });
                }
                Event::QueryConfirmed { query_token } | Event::QueryDiscarded { query_token } => {
                    s.pending.remove(query_token);
                }
                _ => {}
            }
        }
        s.saved = history.len();
        s.history = history;
        Ok(s)
    }

    fn record(&mut self, event: Event) {
        let seq = self.history.last().map_or(0, |h| h.seq + 1);
        self.history.push(HistoryEvent {
            seq,
            timestamp_ms: (self.clock)(),
            event,
        });
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        self.schedule.as_ref()
    }

    pub fn history(&self) -> &[HistoryEvent] {
        &self.history
    }

    pub fn pending_tokens(&self) -> Vec<&str> {
        self.pending.keys().map(String::as_str).collect()
    }

    /// Events not yet handed to [`Session::mark_saved`].
    pub fn unsaved(&self) -> &[HistoryEvent] {
        &self.history[self.saved..]
    }

    pub fn mark_saved(&mut self) {
        self.saved = self.history.len();
    }

    pub fn status(&self) -> ScheduleStatus {
        match &self.schedule {
            Some(s) => ScheduleStatus::Ok {
                schedule: s.to_document(&self.catalog),
            },
            None => ScheduleStatus::Infeasible,
        }
    }

    pub fn create_response(&self) -> CreateResponse {
        CreateResponse {
            session_id: self.id.clone(),
            status: self.status(),
        }
    }

    /// Moves to a schedule that differs from every one shown before.
    pub fn next_schedule(&mut self) -> ScheduleStatus {
        let Some(current) = self.schedule.clone() else {
            return ScheduleStatus::Infeasible;
        };
        if self.exhausted {
            return ScheduleStatus::Exhausted;
        }
        match next_schedule(&mut self.kb, &current) {
            Next::Schedule(s) => {
                let doc = s.to_document(&self.catalog);
                self.record(Event::ScheduleGenerated {
                    schedule: doc.clone(),
                });
                self.schedule = Some(s);
                ScheduleStatus::Ok { schedule: doc }
            }
            Next::Exhausted => {
                self.exhausted = true;
                self.record(Event::SchedulesExhausted {});
                ScheduleStatus::Exhausted
            }
        }
    }

    /// Parses a question against the current schedule and holds it until
    /// the user confirms or rejects the restatement.
    pub fn submit_query(&mut self, text: &str) -> Result<QueryResponse, SessionError> {
        let schedule = self.schedule.clone().ok_or(SessionError::NoSchedule)?;
        let parsed = parse_llm(text, &schedule, &self.catalog, &self.gateway)?;
        let foil = to_foil(&parsed, &schedule, &self.kb)?;
        let restatement = restate(&parsed, &schedule);
        self.record(Event::QuerySubmitted {
            text: text.to_string(),
            query_token: restatement.token.clone(),
            restatement: restatement.text.clone(),
            parsed: parsed.clone(),
        });
        self.pending
            .insert(restatement.token.clone(), Pending { foil, schedule });
        Ok(QueryResponse {
            query_token: restatement.token,
            restatement: restatement.text,
            items: parsed.items,
            complexity: parsed.complexity,
            source: parsed.source,
            llm_fallback: parsed.llm_fallback,
        })
    }

    /// Consumes a pending token. Only a confirmed token reaches the
    /// explainer; a rejected one is discarded.
    pub fn confirm(&mut self, token: &str, confirmed: bool) -> Result<ConfirmResponse, SessionError> {
        let pending = self
            .pending
            .remove(token)
            .ok_or_else(|| SessionError::UnknownToken(token.to_string()))?;
        let query_token = token.to_string();
        if !confirmed {
            self.record(Event::QueryDiscarded { query_token });
            return Ok(ConfirmResponse::Discarded);
        }
        self.record(Event::QueryConfirmed {
            query_token: query_token.clone(),
        });
        match explain(&mut self.kb, &pending.foil)? {
            Explained::Alternative(s) => {
                let doc = s.to_document(&self.catalog);
                self.record(Event::AlternativeReturned {
                    query_token,
                    schedule: doc.clone(),
                });
                Ok(ConfirmResponse::Alternative {
                    alternative_schedule: doc,
                })
            }
            Explained::Minimal(e) => {
                let refined = refine_llm(&e, &pending.schedule, &self.catalog, &self.gateway);
                let payload = ExplanationPayload {
                    text: refined.text,
                    constraint_ids: e.constraint_ids.clone(),
                    clause_labels: e.labels.clone(),
                    categories: e.categories.clone(),
                    minimal: e.minimal,
                    mode: refined.mode,
                    llm_fallback: refined.llm_fallback,
                };
                self.record(Event::ExplanationReturned {
                    query_token,
                    explanation: payload.clone(),
                });
                Ok(ConfirmResponse::Explained {
                    explanation: payload,
                })
            }
        }
    }
}

/// Appends events as JSON lines and syncs the file before returning.
pub fn append_history(path: &Path, events: &[HistoryEvent]) -> io::Result<()> {
    if events.is_empty() {
        return Ok(());
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e).map_err(io::Error::other)?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_all()
}

pub fn read_history(path: &Path) -> io::Result<Vec<HistoryEvent>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        out.push(event);
    }
    Ok(out)
}
