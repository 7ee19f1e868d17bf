//! The three-step workflow over persisted sessions.
//!
//! Each [`Engine`] operation locks its session, loads it from the store,
//! mutates it while appending events, and saves it back. Operations on one
//! session are therefore serialized while distinct sessions run in parallel.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::{NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, CorpusItem, DiversityReport, SessionMetrics};
use crate::domain::{
    dedup_key, normalize_entry_text, validate_rough_prompt, CardId, CardStatus, DeliverableContext, DesignArtifact,
    DomainError, ElementCard, ElementType, EntryId, EntryOrigin, ImageRef, IntegratedPrompt, Orientation,
    RequirementCardSet, RequirementEntry, RequirementField, SelectionSet, Session, SessionId, ValidatedSelection,
};
use crate::events::{short_digest, CardUpdateReason, EventRecord, ImagePurpose, SessionEvent};
use crate::prompts::{self, EnhanceContext, PromptError, PromptTemplateKind, RenderedPrompt};
use crate::providers::{complete_structured, schema, ProviderError, Providers, RetryPolicy, StructuredSchema};
use crate::store::{FsStore, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("brief text is empty")]
    EmptyBrief,
    #[error("candidate count must be at least 1")]
    InvalidCount,
    #[error("operation not supported for text card {0}")]
    UnsupportedForText(String),
    #[error("no design has been generated yet")]
    NoPriorArtifact,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("auto run aborted in session {session_id}: {source}")]
    AutoAborted { session_id: SessionId, source: Box<PipelineError> },
}

impl PipelineError {
    /// The underlying error for [`PipelineError::AutoAborted`].
    pub fn root(&self) -> &PipelineError {
        match self {
            Self::AutoAborted { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_elements: usize,
    pub n_requirements: usize,
    pub preview_size: (u32, u32),
    /// Date passed to the element recommender; today when unset.
    pub current_date: Option<NaiveDate>,
    pub retry: RetryPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_elements: 4,
            n_requirements: 3,
            preview_size: (512, 512),
            current_date: None,
            retry: RetryPolicy::default(),
        }
    }
}

pub fn final_size(orientation: Orientation) -> (u32, u32) {
    match orientation {
        Orientation::Portrait => (768, 1152),
        Orientation::Landscape => (1152, 768),
        Orientation::Square => (1024, 1024),
    }
}

/// Collapses newline runs into single spaces so the prompt is one paragraph.
pub fn normalize_paragraph(text: &str) -> String {
    text.split(['\n', '\r']).map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

fn lineage(card: &ElementCard) -> String {
    format!("{}@{}", card.id, card.revision)
}

/// Batch-mode settings for [`Engine::run_auto`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoConfig {
    pub output_language: String,
    pub deliverable_context: DeliverableContext,
    pub n: usize,
}

impl Default for AutoConfig {
    fn default() -> Self {
        Self { output_language: "English".into(), deliverable_context: DeliverableContext::default(), n: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: SessionMetrics,
    /// Diversity of the integrated prompts behind the history; absent with
    /// fewer than two artifacts.
    pub prompt_diversity: Option<DiversityReport>,
}

pub const FALLBACK_DELIVERABLE_FORMAT: &str = "poster";

pub struct Engine {
    providers: Providers,
    store: Arc<FsStore>,
    config: PipelineConfig,
    locks: Mutex<HashMap<SessionId, Arc<Mutex<()>>>>,
}

/// A loaded session plus the engine, for the duration of one operation.
struct Tx<'e> {
    engine: &'e Engine,
    session: Session,
}

impl Tx<'_> {
    fn log(&mut self, event: SessionEvent) -> Result<(), PipelineError> {
        self.engine.store.append_event(&self.session.id, Utc::now(), &event)?;
        Ok(())
    }

    fn chat(&mut self, prompt: &RenderedPrompt, schema: StructuredSchema) -> Result<Value, PipelineError> {
        let prompt_digest = short_digest(&prompt.text);
        self.log(SessionEvent::RenderPrompt { template: prompt.kind, prompt_digest: prompt_digest.clone() })?;
        let start = Instant::now();
        let result = complete_structured(&*self.engine.providers.chat, prompt, &schema, self.engine.config.retry);
        let (attempts, error) = match &result {
            Ok(out) => (out.attempts, None),
            Err((e, attempts)) => (*attempts, Some(e.to_string())),
        };
        self.log(SessionEvent::CompleteStructured {
            template: prompt.kind,
            schema: schema.id,
            attempts,
            duration_ms: start.elapsed().as_millis() as u64,
            prompt_digest,
            error,
        })?;
        result.map(|o| o.payload).map_err(|(e, _)| e.into())
    }

    fn image(
        &mut self,
        purpose: ImagePurpose,
        prompt: &str,
        (width, height): (u32, u32),
        nonce: u64,
    ) -> Result<ImageRef, PipelineError> {
        let start = Instant::now();
        let result = self.engine.providers.images.generate(prompt, width, height, nonce).map_err(PipelineError::from);
        let stored = result.and_then(|img| Ok(self.engine.store.put_image(&img.bytes, &img.media_type)?));
        self.log(SessionEvent::GenerateImage {
            purpose,
            prompt_digest: short_digest(prompt),
            width,
            height,
            nonce,
            duration_ms: start.elapsed().as_millis() as u64,
            content_hash: stored.as_ref().ok().map(|r| r.content_hash.clone()),
            error: stored.as_ref().err().map(ToString::to_string),
        })?;
        stored
    }

    fn card(&self, id: &CardId) -> Result<&ElementCard, PipelineError> {
        Ok(self.session.card(id).ok_or_else(|| DomainError::UnknownCard(id.to_string()))?)
    }

    fn card_mut(&mut self, id: &CardId) -> Result<&mut ElementCard, PipelineError> {
        Ok(self.session.card_mut(id).ok_or_else(|| DomainError::UnknownCard(id.to_string()))?)
    }

    fn update_card(&mut self, id: &CardId, reason: CardUpdateReason) -> Result<ElementCard, PipelineError> {
        let card = self.card(id)?.clone();
        self.log(SessionEvent::CardUpdated { reason, card: card.clone() })?;
        Ok(card)
    }

    fn fail_card(&mut self, id: &CardId, err: PipelineError) -> PipelineError {
        if let Ok(card) = self.card_mut(id) {
            card.status = CardStatus::Failed;
            card.error = Some(err.to_string());
        }
        match self.update_card(id, CardUpdateReason::Failed) {
            Ok(_) => err,
            Err(log_err) => log_err,
        }
    }

    /// Enhancer then preview for a visual card; Text cards come back as is.
    fn enhance_and_preview(&mut self, id: &CardId) -> Result<ElementCard, PipelineError> {
        let card = self.card(id)?.clone();
        let Some(kind) = PromptTemplateKind::enhancer_for(card.element_type) else {
            return Ok(card);
        };
        match self.try_enhance(&card, kind) {
            Ok(card) => Ok(card),
            Err(e) => Err(self.fail_card(id, e)),
        }
    }

    fn try_enhance(&mut self, card: &ElementCard, kind: PromptTemplateKind) -> Result<ElementCard, PipelineError> {
        let ctx = EnhanceContext {
            output_language: &self.session.output_language,
            deliverable: &self.session.deliverable_context,
        };
        let prompt = prompts::render_enhancer(kind, &card.rough_prompt, ctx)?;
        let payload = self.chat(&prompt, StructuredSchema::enhanced_line())?;
        let enhanced = normalize_paragraph(&schema::text(&payload));
        {
            let c = self.card_mut(&card.id)?;
            c.enhanced_prompt = Some(enhanced.clone());
            c.preview_ref = None;
            c.status = CardStatus::Enhanced;
            c.error = None;
        }
        self.update_card(&card.id, CardUpdateReason::Enhanced)?;
        let preview =
            self.image(ImagePurpose::Preview, &enhanced, self.engine.config.preview_size, card.revision as u64)?;
        {
            let c = self.card_mut(&card.id)?;
            c.preview_ref = Some(preview);
            c.status = CardStatus::Previewed;
        }
        self.update_card(&card.id, CardUpdateReason::Previewed)
    }

    fn apply_selection(&mut self, selection: SelectionSet) -> Result<(), PipelineError> {
        for card in self.session.element_cards.values_mut().flatten() {
            card.selected = selection.contains(&card.id);
        }
        self.session.selection = selection.clone();
        self.log(SessionEvent::SelectionChanged { selection })
    }

    fn generate_design(&mut self) -> Result<DesignArtifact, PipelineError> {
        let selection: ValidatedSelection = self.session.validate_selection(&self.session.selection)?;
        let start = Instant::now();
        let prompt = prompts::render_integrator(&selection, &self.session.output_language)?;
        let payload = self.chat(&prompt, StructuredSchema::integrated_paragraph())?;
        let text = normalize_paragraph(&schema::text(&payload));
        let orientation = self.session.deliverable_context.orientation.unwrap_or_default();
        let nonce = self.session.history.len() as u64;
        let image_ref = self.image(ImagePurpose::Final, &text, final_size(orientation), nonce)?;
        let now = Utc::now();
        let integrated_prompt = IntegratedPrompt {
            id: self.session.next_id("prompt").into(),
            text,
            selection_snapshot: selection,
            created_at: now,
        };
        let artifact = DesignArtifact {
            id: self.session.next_id("art").into(),
            image_ref,
            integrated_prompt_id: integrated_prompt.id.clone(),
            duration_ms: start.elapsed().as_millis() as u64,
            created_at: now,
        };
        self.session.integrated_prompts.push(integrated_prompt.clone());
        self.session.history.push(artifact.clone());
        self.log(SessionEvent::DesignGenerated {
            integrated_prompt: Box::new(integrated_prompt),
            artifact: artifact.clone(),
        })?;
        Ok(artifact)
    }
}

impl Engine {
    pub fn new(providers: Providers, store: Arc<FsStore>, config: PipelineConfig) -> Self {
        Self { providers, store, config, locks: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &Arc<FsStore> {
        &self.store
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn current_date(&self) -> NaiveDate {
        self.config.current_date.unwrap_or_else(|| Utc::now().date_naive())
    }

    fn lock_for(&self, id: &SessionId) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.clone()).or_default().clone()
    }

    /// Runs `f` against the locked session and persists whatever state it
    /// leaves behind, including partial progress on failure.
    fn mutate<T>(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut Tx<'_>) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock();
        let session = self.store.load_session(id)?;
        if session.closed_at.is_some() {
            return Err(PipelineError::SessionClosed(id.to_string()));
        }
        let mut tx = Tx { engine: self, session };
        let out = f(&mut tx);
        debug_assert!(tx.session.check_invariants().is_ok(), "{:?}", tx.session.check_invariants());
        self.store.save_session(&tx.session)?;
        out
    }

    pub fn session(&self, id: &SessionId) -> Result<Session, PipelineError> {
        Ok(self.store.load_session(id)?)
    }

    pub fn events(&self, id: &SessionId) -> Result<Vec<EventRecord>, PipelineError> {
        Ok(self.store.load_events(id)?)
    }

    pub fn create_session(
        &self,
        brief_text: &str,
        output_language: &str,
        deliverable_context: DeliverableContext,
    ) -> Result<Session, PipelineError> {
        if output_language.trim().is_empty() {
            return Err(PromptError::InvalidInput("output_language is empty".into()).into());
        }
        let id = SessionId::new(format!("sess-{}", uuid::Uuid::new_v4().simple()));
        let session =
            Session::new(id.clone(), brief_text.trim(), output_language.trim(), deliverable_context, Utc::now());
        let lock = self.lock_for(&id);
        let _guard = lock.lock();
        self.store.save_session(&session)?;
        self.store.append_event(
            &id,
            session.created_at,
            &SessionEvent::SessionCreated { session: Box::new(session.clone()) },
        )?;
        Ok(session)
    }

    pub fn update_context(&self, id: &SessionId, ctx: DeliverableContext) -> Result<DeliverableContext, PipelineError> {
        self.mutate(id, |tx| {
            tx.session.deliverable_context = ctx.clone();
            tx.log(SessionEvent::ContextUpdated { deliverable_context: ctx.clone() })?;
            Ok(ctx)
        })
    }

    /// Replaces the card set with entries extracted from `brief_text`, or
    /// from the session's stored brief when `None`. A missing deliverable
    /// format is taken from the first extracted format entry.
    pub fn extract_requirements(
        &self,
        id: &SessionId,
        brief_text: Option<&str>,
    ) -> Result<RequirementCardSet, PipelineError> {
        self.mutate(id, |tx| {
            let brief = brief_text.unwrap_or(&tx.session.brief_text).trim().to_owned();
            if brief.is_empty() {
                return Err(PipelineError::EmptyBrief);
            }
            let prompt = prompts::render_requirement_extractor(
                &tx.session.output_language,
                &prompts::canonical_field_descriptions(),
                &brief,
            )?;
            let payload = tx.chat(&prompt, StructuredSchema::extracted_requirements())?;
            let mut cards = RequirementCardSet::new();
            let now = Utc::now();
            for (field, texts) in schema::extracted_requirements(&payload) {
                for text in texts {
                    if normalize_entry_text(&text).is_err() || cards.contains_text(field, &text) {
                        continue;
                    }
                    let id = tx.session.next_id("req").into();
                    cards.insert(RequirementEntry {
                        id,
                        field,
                        text,
                        origin: EntryOrigin::Extracted,
                        created_at: now,
                    })?;
                }
            }
            let mut ctx = tx.session.deliverable_context.clone();
            if ctx.deliverable_format.as_deref().is_none_or(|f| f.trim().is_empty()) {
                ctx.deliverable_format =
                    cards.entries(RequirementField::DeliverableFormat).first().map(|e| e.text.clone());
            }
            tx.session.brief_text = brief.clone();
            tx.session.requirement_cards = cards.clone();
            tx.session.deliverable_context = ctx.clone();
            tx.log(SessionEvent::RequirementsExtracted {
                brief_text: brief,
                cards: cards.clone(),
                deliverable_context: ctx,
            })?;
            Ok(cards)
        })
    }

    /// Up to `n` new candidates for `field`. Candidates duplicating an
    /// existing entry or each other are dropped. Nothing is added to the
    /// card set until a candidate is accepted.
    pub fn recommend_requirements(
        &self,
        id: &SessionId,
        field: RequirementField,
        n: usize,
    ) -> Result<Vec<RequirementEntry>, PipelineError> {
        if n == 0 {
            return Err(PipelineError::InvalidCount);
        }
        self.mutate(id, |tx| {
            let prompt = prompts::render_requirement_recommender(
                n,
                &tx.session.output_language,
                &tx.session.requirement_cards,
                field,
                field.description(),
            )?;
            let payload = tx.chat(&prompt, StructuredSchema::requirement_candidates(n))?;
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::new();
            let now = Utc::now();
            for c in schema::candidates(&payload) {
                let Ok(key) = dedup_key(&c.value) else { continue };
                if tx.session.requirement_cards.contains_text(field, &c.value) || !seen.insert(key) {
                    continue;
                }
                out.push(RequirementEntry {
                    id: tx.session.next_id("req").into(),
                    field,
                    text: normalize_entry_text(&c.value)?,
                    origin: EntryOrigin::Recommended,
                    created_at: now,
                });
            }
            tx.log(SessionEvent::RequirementsRecommended { field, candidates: out.clone() })?;
            Ok(out)
        })
    }

    fn insert_entry(&self, id: &SessionId, entry: RequirementEntry) -> Result<RequirementCardSet, PipelineError> {
        self.mutate(id, |tx| {
            if tx.session.requirement_cards.get(&entry.id).is_some() {
                return Err(PipelineError::InvalidState(format!("entry {} already exists", entry.id)));
            }
            let stored = tx.session.requirement_cards.insert(entry)?.clone();
            tx.session.observe_id(stored.id.as_str());
            tx.log(SessionEvent::EntryAdded { entry: stored })?;
            Ok(tx.session.requirement_cards.clone())
        })
    }

    pub fn accept_candidate(
        &self,
        id: &SessionId,
        candidate: RequirementEntry,
    ) -> Result<RequirementCardSet, PipelineError> {
        self.insert_entry(id, RequirementEntry { origin: EntryOrigin::Recommended, ..candidate })
    }

    pub fn add_manual_entry(
        &self,
        id: &SessionId,
        field: RequirementField,
        text: &str,
    ) -> Result<RequirementCardSet, PipelineError> {
        self.mutate(id, |tx| {
            if tx.session.requirement_cards.contains_text(field, text) {
                return Err(DomainError::DuplicateEntry { field, text: normalize_entry_text(text)? }.into());
            }
            normalize_entry_text(text)?;
            let entry = RequirementEntry {
                id: tx.session.next_id("req").into(),
                field,
                text: text.to_owned(),
                origin: EntryOrigin::Manual,
                created_at: Utc::now(),
            };
            let stored = tx.session.requirement_cards.insert(entry)?.clone();
            tx.log(SessionEvent::EntryAdded { entry: stored })?;
            Ok(tx.session.requirement_cards.clone())
        })
    }

    pub fn edit_entry(
        &self,
        id: &SessionId,
        entry_id: &EntryId,
        text: &str,
    ) -> Result<RequirementCardSet, PipelineError> {
        self.mutate(id, |tx| {
            let entry = tx.session.requirement_cards.edit(entry_id, text)?.clone();
            tx.log(SessionEvent::EntryEdited { entry })?;
            Ok(tx.session.requirement_cards.clone())
        })
    }

    pub fn delete_entry(&self, id: &SessionId, entry_id: &EntryId) -> Result<RequirementCardSet, PipelineError> {
        self.mutate(id, |tx| {
            tx.session.requirement_cards.remove(entry_id)?;
            tx.log(SessionEvent::EntryDeleted { entry_id: entry_id.clone() })?;
            Ok(tx.session.requirement_cards.clone())
        })
    }

    /// Drafts up to `n` cards of `ty`, passing the existing rough prompts
    /// of that type as values to avoid.
    pub fn recommend_elements(
        &self,
        id: &SessionId,
        ty: ElementType,
        n: usize,
    ) -> Result<Vec<ElementCard>, PipelineError> {
        if n == 0 {
            return Err(PipelineError::InvalidCount);
        }
        self.mutate(id, |tx| {
            let existing: Vec<String> = tx.session.cards_of(ty).iter().map(|c| c.rough_prompt.clone()).collect();
            let prompt = prompts::render_element_recommender(
                ty,
                n,
                &tx.session.output_language,
                self.current_date(),
                &tx.session.requirement_cards,
                &existing,
            )?;
            let payload = tx.chat(&prompt, StructuredSchema::element_candidates(n))?;
            let mut cards = Vec::new();
            for c in schema::candidates(&payload) {
                if validate_rough_prompt(ty, &c.value).is_err() {
                    tracing::warn!(value = %c.value, "skipping malformed {ty} candidate");
                    continue;
                }
                let card_id = tx.session.next_id("card").into();
                cards.push(ElementCard::drafted(card_id, ty, &c.value, Some(c.reasoning), c.influencing_fields)?);
            }
            tx.session.element_cards.entry(ty).or_default().extend(cards.iter().cloned());
            tx.log(SessionEvent::CardsRecommended { element_type: ty, cards: cards.clone() })?;
            Ok(cards)
        })
    }

    pub fn add_manual_card(
        &self,
        id: &SessionId,
        ty: ElementType,
        rough_prompt: &str,
    ) -> Result<ElementCard, PipelineError> {
        self.mutate(id, |tx| {
            validate_rough_prompt(ty, rough_prompt)?;
            let card = ElementCard::drafted(tx.session.next_id("card").into(), ty, rough_prompt, None, Vec::new())?;
            tx.session.element_cards.entry(ty).or_default().push(card.clone());
            tx.log(SessionEvent::CardAdded { card: card.clone() })?;
            Ok(card)
        })
    }

    pub fn enhance_and_preview(&self, id: &SessionId, card_id: &CardId) -> Result<ElementCard, PipelineError> {
        self.mutate(id, |tx| {
            let status = tx.card(card_id)?.status;
            if status == CardStatus::Previewed {
                return Err(PipelineError::InvalidState(format!("card {card_id} already has a preview")));
            }
            tx.enhance_and_preview(card_id)
        })
    }

    /// Recommendation followed by enhancement and preview of every new
    /// visual card. Failed cards are kept with their error.
    pub fn recommend_and_preview(
        &self,
        id: &SessionId,
        ty: ElementType,
        n: usize,
    ) -> Result<Vec<ElementCard>, PipelineError> {
        let cards = self.recommend_elements(id, ty, n)?;
        if !ty.is_visual() {
            return Ok(cards);
        }
        let mut out = Vec::with_capacity(cards.len());
        for card in cards {
            match self.enhance_and_preview(id, &card.id) {
                Ok(c) => out.push(c),
                Err(PipelineError::Provider(_) | PipelineError::Prompt(_)) => {
                    out.push(self.session(id)?.card(&card.id).cloned().expect("card just created"))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// New rough prompt; visual cards are re-enhanced automatically.
    pub fn edit_rough(
        &self,
        id: &SessionId,
        card_id: &CardId,
        rough_prompt: &str,
    ) -> Result<ElementCard, PipelineError> {
        self.mutate(id, |tx| {
            let card = tx.card_mut(card_id)?;
            let rough = validate_rough_prompt(card.element_type, rough_prompt)?;
            card.parent_id = Some(lineage(card));
            card.rough_prompt = rough;
            card.revision += 1;
            card.enhanced_prompt = None;
            card.preview_ref = None;
            card.status = CardStatus::Drafted;
            card.error = None;
            let card = tx.update_card(card_id, CardUpdateReason::Edited)?;
            if !card.element_type.is_visual() {
                return Ok(card);
            }
            tx.enhance_and_preview(card_id)
        })
    }

    /// Same rough prompt, fresh enhancement and preview sample.
    pub fn regenerate_preview(&self, id: &SessionId, card_id: &CardId) -> Result<ElementCard, PipelineError> {
        self.mutate(id, |tx| {
            let card = tx.card_mut(card_id)?;
            if !card.element_type.is_visual() {
                return Err(PipelineError::UnsupportedForText(card_id.to_string()));
            }
            if card.status == CardStatus::Drafted {
                return Err(PipelineError::InvalidState(format!("card {card_id} has not been enhanced yet")));
            }
            card.parent_id = Some(lineage(card));
            card.revision += 1;
            card.error = None;
            tx.update_card(card_id, CardUpdateReason::Regenerated)?;
            tx.enhance_and_preview(card_id)
        })
    }

    pub fn delete_card(&self, id: &SessionId, card_id: &CardId) -> Result<(), PipelineError> {
        self.mutate(id, |tx| {
            tx.card(card_id)?;
            if tx.session.selection.contains(card_id) {
                let mut selection = tx.session.selection.clone();
                selection.remove(card_id);
                tx.apply_selection(selection)?;
            }
            for list in tx.session.element_cards.values_mut() {
                list.retain(|c| &c.id != card_id);
            }
            tx.log(SessionEvent::CardDeleted { card_id: card_id.clone() })
        })
    }

    /// Toggles one card. Selecting a visual card replaces the previous
    /// occupant of its slot.
    pub fn set_selected(
        &self,
        id: &SessionId,
        card_id: &CardId,
        selected: bool,
    ) -> Result<SelectionSet, PipelineError> {
        self.mutate(id, |tx| {
            let ty = tx.card(card_id)?.element_type;
            let mut selection = tx.session.selection.clone();
            if selected {
                selection.place(ty, card_id.clone());
            } else {
                selection.remove(card_id);
            }
            tx.apply_selection(selection.clone())?;
            Ok(selection)
        })
    }

    /// Replaces the whole selection after validating it.
    pub fn set_selection(&self, id: &SessionId, selection: SelectionSet) -> Result<ValidatedSelection, PipelineError> {
        self.mutate(id, |tx| {
            let validated = tx.session.validate_selection(&selection)?;
            tx.apply_selection(validated.to_selection_set())?;
            Ok(validated)
        })
    }

    pub fn integrate_and_generate(&self, id: &SessionId) -> Result<DesignArtifact, PipelineError> {
        self.mutate(id, |tx| tx.generate_design())
    }

    /// Reruns integration and generation for the current selection.
    pub fn regenerate_design(&self, id: &SessionId) -> Result<DesignArtifact, PipelineError> {
        self.mutate(id, |tx| {
            if tx.session.history.is_empty() {
                return Err(PipelineError::NoPriorArtifact);
            }
            tx.generate_design()
        })
    }

    pub fn close_session(&self, id: &SessionId) -> Result<Session, PipelineError> {
        self.mutate(id, |tx| {
            let closed_at = Utc::now();
            tx.session.closed_at = Some(closed_at);
            tx.log(SessionEvent::SessionClosed { closed_at })?;
            Ok(tx.session.clone())
        })
    }

    /// Timing metrics plus prompt diversity over the history. Read-only.
    pub fn metrics(&self, id: &SessionId) -> Result<MetricsReport, PipelineError> {
        let session = self.session(id)?;
        let events = self.events(id)?;
        let metrics = analytics::session_metrics(&session, &events);
        let prompt_diversity = if session.history.len() >= 2 {
            let labels: Vec<String> = session.history.iter().map(|a| a.id.to_string()).collect();
            let items: Vec<CorpusItem<'_>> = session
                .history
                .iter()
                .filter_map(|a| session.integrated_prompt(&a.integrated_prompt_id))
                .map(|p| CorpusItem::Text(&p.text))
                .collect();
            Some(analytics::corpus_diversity(&labels, &items, &*self.providers.embedder)?)
        } else {
            None
        };
        Ok(MetricsReport { metrics, prompt_diversity })
    }

    /// Extract, recommend `n` per type, preview every visual card, select
    /// the first card of each visual type plus every text card, integrate.
    pub fn run_auto(&self, brief_text: &str, auto: &AutoConfig) -> Result<Session, PipelineError> {
        if brief_text.trim().is_empty() {
            return Err(PipelineError::EmptyBrief);
        }
        let mut ctx = auto.deliverable_context.clone();
        ctx.orientation.get_or_insert_with(Orientation::default);
        let session = self.create_session(brief_text, &auto.output_language, ctx)?;
        let id = session.id.clone();
        self.auto_steps(&id, auto.n)
            .map_err(|e| PipelineError::AutoAborted { session_id: id.clone(), source: Box::new(e) })?;
        self.session(&id)
    }

    fn auto_steps(&self, id: &SessionId, n: usize) -> Result<(), PipelineError> {
        self.extract_requirements(id, None)?;
        let ctx = self.session(id)?.deliverable_context;
        if ctx.deliverable_format.is_none() {
            self.update_context(
                id,
                DeliverableContext { deliverable_format: Some(FALLBACK_DELIVERABLE_FORMAT.into()), ..ctx },
            )?;
        }
        let mut selection = SelectionSet::default();
        for ty in ElementType::ALL {
            let cards = self.recommend_elements(id, ty, n)?;
            for card in &cards {
                self.enhance_and_preview(id, &card.id)?;
            }
            match cards.first() {
                None => return Err(PipelineError::InvalidState(format!("no {ty} candidates"))),
                Some(_) if ty == ElementType::Text => selection.text_ids = cards.iter().map(|c| c.id.clone()).collect(),
                Some(first) => {
                    selection.place(ty, first.id.clone());
                }
            }
        }
        self.set_selection(id, selection)?;
        self.integrate_and_generate(id)?;
        Ok(())
    }
}
