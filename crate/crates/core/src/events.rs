//! Per-session event log records and replay.
//!
//! Every provider call and every mutation of a session is recorded as a
//! [`SessionEvent`]. Mutations carry the resulting entity snapshots, so
//! folding the log with [`replay`] rebuilds the session exactly.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    CardId, DeliverableContext, DesignArtifact, ElementCard, ElementType, EntryId, IntegratedPrompt,
    RequirementCardSet, RequirementEntry, RequirementField, SelectionSet, Session, SessionId,
};
use crate::prompts::PromptTemplateKind;
use crate::providers::SchemaId;

/// Hex SHA-256 of the canonical JSON encoding (sorted object keys).
pub fn canonical_digest(value: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("json values serialize")))
}

/// First 16 hex chars of SHA-256, used to reference prompts in the log.
pub fn short_digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePurpose {
    Preview,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardUpdateReason {
    Enhanced,
    Previewed,
    Failed,
    Edited,
    Regenerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionCreated {
        session: Box<Session>,
    },
    RenderPrompt {
        template: PromptTemplateKind,
        prompt_digest: String,
    },
    CompleteStructured {
        template: PromptTemplateKind,
        schema: SchemaId,
        attempts: u32,
        duration_ms: u64,
        prompt_digest: String,
        error: Option<String>,
    },
    GenerateImage {
        purpose: ImagePurpose,
        prompt_digest: String,
        width: u32,
        height: u32,
        nonce: u64,
        duration_ms: u64,
        content_hash: Option<String>,
        error: Option<String>,
    },
    RequirementsExtracted {
        brief_text: String,
        cards: RequirementCardSet,
        deliverable_context: DeliverableContext,
    },
    ContextUpdated {
        deliverable_context: DeliverableContext,
    },
    RequirementsRecommended {
        field: RequirementField,
        candidates: Vec<RequirementEntry>,
    },
    EntryAdded {
        entry: RequirementEntry,
    },
    EntryEdited {
        entry: RequirementEntry,
    },
    EntryDeleted {
        entry_id: EntryId,
    },
    CardsRecommended {
        element_type: ElementType,
        cards: Vec<ElementCard>,
    },
    CardAdded {
        card: ElementCard,
    },
    CardUpdated {
        reason: CardUpdateReason,
        card: ElementCard,
    },
    CardDeleted {
        card_id: CardId,
    },
    SelectionChanged {
        selection: SelectionSet,
    },
    DesignGenerated {
        integrated_prompt: Box<IntegratedPrompt>,
        artifact: DesignArtifact,
    },
    SessionClosed {
        closed_at: DateTime<Utc>,
    },
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SessionCreated { .. } => "session_created",
            Self::RenderPrompt { .. } => "render_prompt",
            Self::CompleteStructured { .. } => "complete_structured",
            Self::GenerateImage { .. } => "generate_image",
            Self::RequirementsExtracted { .. } => "requirements_extracted",
            Self::ContextUpdated { .. } => "context_updated",
            Self::RequirementsRecommended { .. } => "requirements_recommended",
            Self::EntryAdded { .. } => "entry_added",
            Self::EntryEdited { .. } => "entry_edited",
            Self::EntryDeleted { .. } => "entry_deleted",
            Self::CardsRecommended { .. } => "cards_recommended",
            Self::CardAdded { .. } => "card_added",
            Self::CardUpdated { .. } => "card_updated",
            Self::CardDeleted { .. } => "card_deleted",
            Self::SelectionChanged { .. } => "selection_changed",
            Self::DesignGenerated { .. } => "design_generated",
            Self::SessionClosed { .. } => "session_closed",
        }
    }

    pub fn is_provider_call(&self) -> bool {
        matches!(self, Self::CompleteStructured { .. } | Self::GenerateImage { .. })
    }
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub session_id: SessionId,
    pub kind: String,
    pub payload_digest: String,
    pub detail: Value,
}

impl EventRecord {
    pub fn new(seq: u64, timestamp: DateTime<Utc>, session_id: SessionId, event: &SessionEvent) -> Self {
        let detail = serde_json::to_value(event).expect("events serialize");
        Self {
            seq,
            timestamp,
            session_id,
            kind: event.kind().to_owned(),
            payload_digest: canonical_digest(&detail),
            detail,
        }
    }

    pub fn event(&self) -> Result<SessionEvent, ReplayError> {
        serde_json::from_value(self.detail.clone())
            .map_err(|e| ReplayError::Malformed { seq: self.seq, reason: e.to_string() })
    }

    pub fn digest_ok(&self) -> bool {
        canonical_digest(&self.detail) == self.payload_digest
    }

    /// The detail with wall-clock and id fields that legitimately differ
    /// between equivalent runs removed.
    pub fn stable_detail(&self) -> Value {
        let mut detail = self.detail.clone();
        strip_volatile(&mut detail);
        if let Some(session) = detail.get_mut("session").and_then(Value::as_object_mut) {
            session.remove("id");
        }
        detail
    }
}

const VOLATILE_KEYS: [&str; 5] = ["timestamp", "created_at", "closed_at", "duration_ms", "session_id"];

fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("event log is empty")]
    Empty,
    #[error("event log does not start with session_created")]
    MissingHeader,
    #[error("event {seq} is malformed: {reason}")]
    Malformed { seq: u64, reason: String },
    #[error("event {seq} has a digest mismatch")]
    DigestMismatch { seq: u64 },
    #[error("event {seq} is out of order")]
    OutOfOrder { seq: u64 },
    #[error("event {seq} references unknown {what} {id}")]
    Dangling { seq: u64, what: &'static str, id: String },
}

fn place_card(session: &mut Session, card: ElementCard) {
    session.observe_id(card.id.as_str());
    let list = session.element_cards.entry(card.element_type).or_default();
    match list.iter_mut().find(|c| c.id == card.id) {
        Some(slot) => *slot = card,
        None => list.push(card),
    }
}

/// Applies one mutation to `session`. Provider-call and render events do
/// not change state.
pub fn apply(session: &mut Session, seq: u64, event: SessionEvent) -> Result<(), ReplayError> {
    match event {
        SessionEvent::SessionCreated { .. } => return Err(ReplayError::OutOfOrder { seq }),
        SessionEvent::RenderPrompt { .. }
        | SessionEvent::CompleteStructured { .. }
        | SessionEvent::GenerateImage { .. } => {}
        SessionEvent::RequirementsExtracted { brief_text, cards, deliverable_context } => {
            cards.iter().for_each(|e| session.observe_id(e.id.as_str()));
            session.brief_text = brief_text;
            session.requirement_cards = cards;
            session.deliverable_context = deliverable_context;
        }
        SessionEvent::ContextUpdated { deliverable_context } => session.deliverable_context = deliverable_context,
        SessionEvent::RequirementsRecommended { candidates, .. } => {
            candidates.iter().for_each(|e| session.observe_id(e.id.as_str()));
        }
        SessionEvent::EntryAdded { entry } | SessionEvent::EntryEdited { entry } => {
            session.observe_id(entry.id.as_str());
            session.requirement_cards.upsert_raw(entry);
        }
        SessionEvent::EntryDeleted { entry_id } => {
            session.requirement_cards.remove(&entry_id).map_err(|_| ReplayError::Dangling {
                seq,
                what: "entry",
                id: entry_id.to_string(),
            })?;
        }
        SessionEvent::CardsRecommended { cards, .. } => cards.into_iter().for_each(|c| place_card(session, c)),
        SessionEvent::CardAdded { card } | SessionEvent::CardUpdated { card, .. } => place_card(session, card),
        SessionEvent::CardDeleted { card_id } => {
            let list = session
                .element_cards
                .values_mut()
                .find(|l| l.iter().any(|c| c.id == card_id))
                .ok_or_else(|| ReplayError::Dangling { seq, what: "card", id: card_id.to_string() })?;
            list.retain(|c| c.id != card_id);
            session.selection.remove(&card_id);
        }
        SessionEvent::SelectionChanged { selection } => {
            for card in session.element_cards.values_mut().flatten() {
                card.selected = selection.contains(&card.id);
            }
            session.selection = selection;
        }
        SessionEvent::DesignGenerated { integrated_prompt, artifact } => {
            session.observe_id(integrated_prompt.id.as_str());
            session.observe_id(artifact.id.as_str());
            session.integrated_prompts.push(*integrated_prompt);
            session.history.push(artifact);
        }
        SessionEvent::SessionClosed { closed_at } => session.closed_at = Some(closed_at),
    }
    Ok(())
}

/// Rebuilds a session from its full event log.
pub fn replay(records: &[EventRecord]) -> Result<Session, ReplayError> {
    let first = records.first().ok_or(ReplayError::Empty)?;
    let mut session = match first.event()? {
        SessionEvent::SessionCreated { session } => *session,
        _ => return Err(ReplayError::MissingHeader),
    };
    let mut last_seq = first.seq;
    for record in &records[1..] {
        if record.seq <= last_seq {
            return Err(ReplayError::OutOfOrder { seq: record.seq });
        }
        if !record.digest_ok() {
            return Err(ReplayError::DigestMismatch { seq: record.seq });
        }
        last_seq = record.seq;
        apply(&mut session, record.seq, record.event()?)?;
    }
    Ok(session)
}

/// Counts derived from a replayed log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub session_id: SessionId,
    pub events: usize,
    pub requirement_entries: usize,
    pub cards_by_type: Vec<(ElementType, usize)>,
    pub total_revisions: u64,
    pub selection: SelectionSet,
    pub history: usize,
}

impl ReplaySummary {
    pub fn of(session: &Session, events: usize) -> Self {
        Self {
            session_id: session.id.clone(),
            events,
            requirement_entries: session.requirement_cards.len(),
            cards_by_type: ElementType::ALL.into_iter().map(|t| (t, session.cards_of(t).len())).collect(),
            total_revisions: session.cards().map(|c| c.revision as u64).sum(),
            selection: session.selection.clone(),
            history: session.history.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CardStatus, EntryOrigin};

    fn at() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2025-10-01T00:00:00Z").unwrap().with_timezone(&Utc)
    }

    fn record(seq: u64, e: SessionEvent) -> EventRecord {
        EventRecord::new(seq, at(), "s".into(), &e)
    }

    #[test]
    fn replay_rebuilds_cards_and_selection() {
        let base = Session::new("s".into(), "brief", "en", DeliverableContext::default(), at());
        let mut card = ElementCard::drafted("card-1".into(), ElementType::Composition, "grid", None, vec![]).unwrap();
        let text = ElementCard::drafted("card-2".into(), ElementType::Text, "Headline: Hi", None, vec![]).unwrap();
        let mut log = vec![
            record(1, SessionEvent::SessionCreated { session: Box::new(base) }),
            record(
                2,
                SessionEvent::CardsRecommended { element_type: ElementType::Composition, cards: vec![card.clone()] },
            ),
            record(3, SessionEvent::CardAdded { card: text.clone() }),
        ];
        card.revision = 1;
        card.status = CardStatus::Failed;
        log.push(record(4, SessionEvent::CardUpdated { reason: CardUpdateReason::Edited, card: card.clone() }));
        let selection = SelectionSet {
            composition_id: Some(card.id.clone()),
            text_ids: vec![text.id.clone()],
            ..Default::default()
        };
        log.push(record(5, SessionEvent::SelectionChanged { selection: selection.clone() }));
        log.push(record(
            6,
            SessionEvent::EntryAdded {
                entry: RequirementEntry {
                    id: "req-3".into(),
                    field: RequirementField::TargetAudience,
                    text: "students".into(),
                    origin: EntryOrigin::Manual,
                    created_at: at(),
                },
            },
        ));
        let s = replay(&log).unwrap();
        assert_eq!(s.card(&card.id).unwrap().revision, 1);
        assert!(s.card(&text.id).unwrap().selected);
        assert_eq!(s.selection, selection);
        assert_eq!(s.id_counter, 3);
        s.check_invariants().unwrap();

        log.push(record(7, SessionEvent::CardDeleted { card_id: text.id.clone() }));
        let s = replay(&log).unwrap();
        assert!(s.selection.text_ids.is_empty());
        assert_eq!(s.cards().count(), 1);
    }

    #[test]
    fn replay_rejects_bad_logs() {
        assert_eq!(replay(&[]), Err(ReplayError::Empty));
        let base = Session::new("s".into(), "", "en", DeliverableContext::default(), at());
        let header = record(1, SessionEvent::SessionCreated { session: Box::new(base) });
        let closed = record(2, SessionEvent::SessionClosed { closed_at: at() });
        assert_eq!(replay(std::slice::from_ref(&closed)), Err(ReplayError::MissingHeader));
        assert!(matches!(
            replay(&[header.clone(), closed.clone(), closed.clone()]),
            Err(ReplayError::OutOfOrder { .. })
        ));
        let mut tampered = closed.clone();
        tampered.detail["closed_at"] = Value::String("2030-01-01T00:00:00Z".into());
        assert_eq!(replay(&[header.clone(), tampered]), Err(ReplayError::DigestMismatch { seq: 2 }));
        let dangling = record(2, SessionEvent::CardDeleted { card_id: "card-9".into() });
        assert!(matches!(replay(&[header, dangling]), Err(ReplayError::Dangling { .. })));
    }

    #[test]
    fn stable_detail_drops_volatile_fields() {
        let call = |duration_ms| SessionEvent::CompleteStructured {
            template: PromptTemplateKind::EnhanceObject,
            schema: SchemaId::EnhancedLine,
            attempts: 1,
            duration_ms,
            prompt_digest: "d".into(),
            error: None,
        };
        let a = record(1, call(5));
        let b = record(1, call(9));
        assert_ne!(a.payload_digest, b.payload_digest);
        assert_eq!(a.stable_detail(), b.stable_detail());
        assert!(a.digest_ok());
    }
}
