//! Session orchestration: IP check-in, behavioural classification on
//! completion, alerts and set reassignment.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::encoder::{EncodeError, Encoder, Label, RawRecord};
use crate::ipdetector::{
    Decision, DecisionReason, FlagReason, IpAddress, IpError, IpStore, QuestionSetPool, SharedIpStore,
};
use crate::model::{Model, ModelError};
use crate::numerics::Prng;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Ip(#[from] IpError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("session {0} is already completed")]
    Completed(String),
    #[error("record {0} has no raw row to replay")]
    MissingRaw(usize),
    #[error("writing alert log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Flagged,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub candidate_id: String,
    pub ip: IpAddress,
    pub set_id: String,
    pub started_at: u64,
    /// `(question, score)` pairs in arrival order.
    pub answers: Vec<(usize, u32)>,
    pub status: SessionStatus,
    /// Whether the session passed through `flagged` before completing.
    pub was_flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertTrigger {
    IpRepeat,
    BehaviorSuspected,
}

/// One line of the alert log. Field order is the serialized order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub session_id: String,
    pub ip: IpAddress,
    pub trigger: AlertTrigger,
    /// Check-in branch that raised an IP alert.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<DecisionReason>,
    /// Suspected-class probability of a behavioural alert.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub new_set_id: Option<String>,
    pub timestamp: u64,
}

/// Outcome of completing a session.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub probabilities: Vec<f64>,
    pub alert: Option<AlertRecord>,
}

/// Shared state of a proctoring run. Sessions may be started and finished
/// from several threads; the model is only read.
pub struct Agent<'a> {
    store: SharedIpStore,
    pool: QuestionSetPool,
    encoder: Encoder,
    model: &'a Model,
    rng: Mutex<Prng>,
    clock: AtomicU64,
    sessions: AtomicU64,
    log: Mutex<Vec<AlertRecord>>,
}

impl<'a> Agent<'a> {
    pub fn new(store: IpStore, pool: QuestionSetPool, encoder: Encoder, model: &'a Model, seed: u64) -> Self {
        Self {
            store: SharedIpStore::new(store),
            pool,
            encoder,
            model,
            rng: Mutex::new(Prng::new(seed)),
            clock: AtomicU64::new(0),
            sessions: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst)
    }

    fn emit(&self, alert: AlertRecord) -> AlertRecord {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(alert.clone());
        alert
    }

    /// Checks the IP in and opens a session on the issued set. Repeat or
    /// previously flagged addresses raise an `ip_repeat` alert at once.
    pub fn start_session(
        &self,
        candidate_id: &str,
        ip: IpAddress,
    ) -> Result<(SessionState, Option<AlertRecord>), AgentError> {
        let decision: Decision = {
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            self.store.check_in(ip, Some(candidate_id), &self.pool, &mut rng)?
        };
        let started_at = self.tick();
        let session_id = format!("s{:06}", self.sessions.fetch_add(1, Ordering::SeqCst));
        let alert = decision.flagged.then(|| {
            self.emit(AlertRecord {
                session_id: session_id.clone(),
                ip,
                trigger: AlertTrigger::IpRepeat,
                reason: Some(decision.reason),
                probability: None,
                new_set_id: Some(decision.set_id.clone()),
                timestamp: started_at,
            })
        });
        let state = SessionState {
            session_id,
            candidate_id: candidate_id.to_string(),
            ip,
            set_id: decision.set_id,
            started_at,
            answers: Vec::new(),
            status: SessionStatus::Active,
            was_flagged: false,
        };
        Ok((state, alert))
    }

    pub fn record_answer(&self, state: &mut SessionState, question: usize, score: u32) -> Result<(), AgentError> {
        if state.status == SessionStatus::Completed {
            return Err(AgentError::Completed(state.session_id.clone()));
        }
        state.answers.push((question, score));
        Ok(())
    }

    /// Classifies the completed record. A suspected verdict flags the IP,
    /// reassigns a distinct set and raises a `behavior_suspected` alert
    /// carrying the model's suspected-class probability.
    pub fn finish_session(&self, state: &mut SessionState, record: &RawRecord) -> Result<Verdict, AgentError> {
        if state.status == SessionStatus::Completed {
            return Err(AgentError::Completed(state.session_id.clone()));
        }
        let (fv, _) = self.encoder.encode(record)?;
        let (label, probabilities) = self.model.predict(&fv)?;
        let alert = if label == Label::Suspected {
            state.status = SessionStatus::Flagged;
            state.was_flagged = true;
            let new_set = {
                let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
                self.store
                    .flag_and_reissue(&state.ip, FlagReason::BehaviorSuspected, &self.pool, &mut rng)?
            };
            state.set_id = new_set.clone();
            Some(self.emit(AlertRecord {
                session_id: state.session_id.clone(),
                ip: state.ip,
                trigger: AlertTrigger::BehaviorSuspected,
                reason: None,
                probability: Some(probabilities[Label::Suspected.index()]),
                new_set_id: Some(new_set),
                timestamp: self.tick(),
            }))
        } else {
            self.tick();
            None
        };
        state.status = SessionStatus::Completed;
        Ok(Verdict {
            label,
            probabilities,
            alert,
        })
    }

    pub fn alerts(&self) -> Vec<AlertRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn store_snapshot(&self) -> IpStore {
        self.store.snapshot()
    }
}

/// Per-record result of a replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayDecision {
    pub candidate_id: String,
    pub ip: IpAddress,
    pub set_id: String,
    pub ip_reason: DecisionReason,
    pub label: Label,
    pub suspected_probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub alerts: Vec<AlertRecord>,
    pub decisions: Vec<ReplayDecision>,
    pub store: IpStore,
}

/// Runs every record as a session in dataset order: check-in, then finish.
pub fn replay(
    dataset: &Dataset,
    encoder: &Encoder,
    model: &Model,
    pool: &QuestionSetPool,
    seed: u64,
) -> Result<ReplayOutcome, AgentError> {
    let agent = Agent::new(IpStore::new(), pool.clone(), encoder.clone(), model, seed);
    let mut decisions = Vec::with_capacity(dataset.len());
    for (i, sample) in dataset.samples().iter().enumerate() {
        let raw = sample.raw.as_ref().ok_or(AgentError::MissingRaw(i))?;
        let (mut state, ip_alert) = agent.start_session(&raw.candidate_id, raw.ip)?;
        let issued = state.set_id.clone();
        let verdict = agent.finish_session(&mut state, raw)?;
        decisions.push(ReplayDecision {
            candidate_id: raw.candidate_id.clone(),
            ip: raw.ip,
            set_id: issued,
            ip_reason: ip_alert.and_then(|a| a.reason).unwrap_or(DecisionReason::None),
            label: verdict.label,
            suspected_probability: verdict.probabilities[Label::Suspected.index()],
        });
    }
    Ok(ReplayOutcome {
        alerts: agent.alerts(),
        decisions,
        store: agent.store_snapshot(),
    })
}

/// Writes alerts as JSON lines.
pub fn write_alert_log(alerts: &[AlertRecord], mut out: impl Write) -> Result<(), AgentError> {
    for a in alerts {
        serde_json::to_writer(&mut out, a).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
