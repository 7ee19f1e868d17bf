//! Shared value types for the brief-to-design workflow.
//!
//! Everything here is plain data plus pure helpers. Mutation of a
//! [`Session`] happens only inside the pipeline, one operation at a time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("text entry has no colon; expected \"Role: content\"")]
    NoColon,
    #[error("text entry has an empty role or content")]
    EmptyPart,
    #[error("text is empty after trimming")]
    EmptyAfterTrim,
    #[error("duplicate entry in {field}: {text:?}")]
    DuplicateEntry { field: RequirementField, text: String },
    #[error("unknown requirement entry {0}")]
    UnknownEntry(String),
    #[error("unknown element card {0}")]
    UnknownCard(String),
    #[error("selection has no composition element")]
    MissingComposition,
    #[error("selection has no text element")]
    NoText,
    #[error("card {id} is a {actual} card but was placed in the {expected} slot")]
    TypeMismatch { id: String, expected: ElementType, actual: ElementType },
    #[error("card {0} appears more than once in the selection")]
    DuplicateSelection(String),
    #[error("invalid text card content {0:?}; expected \"Role: content\"")]
    InvalidTextFormat(String),
    #[error("unknown {kind} {value:?}")]
    UnknownVariant { kind: &'static str, value: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }
    };
}

id_type!(
    /// Session identifier, unique per store.
    SessionId
);
id_type!(EntryId);
id_type!(CardId);
id_type!(PromptId);
id_type!(ArtifactId);

/// The eight fixed requirement categories, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementField {
    DeliverableFormat,
    BusinessContext,
    TargetAudience,
    CreativeDirection,
    ToneAndManner,
    KeywordsAndMotifs,
    DesignSpecifications,
    Restrictions,
}

impl RequirementField {
    pub const ALL: [RequirementField; 8] = [
        RequirementField::DeliverableFormat,
        RequirementField::BusinessContext,
        RequirementField::TargetAudience,
        RequirementField::CreativeDirection,
        RequirementField::ToneAndManner,
        RequirementField::KeywordsAndMotifs,
        RequirementField::DesignSpecifications,
        RequirementField::Restrictions,
    ];

    /// Snake-case key used in structured output and URLs.
    pub fn key(self) -> &'static str {
        match self {
            Self::DeliverableFormat => "deliverable_format",
            Self::BusinessContext => "business_context",
            Self::TargetAudience => "target_audience",
            Self::CreativeDirection => "creative_direction",
            Self::ToneAndManner => "tone_and_manner",
            Self::KeywordsAndMotifs => "keywords_and_motifs",
            Self::DesignSpecifications => "design_specifications",
            Self::Restrictions => "restrictions",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::DeliverableFormat => "Deliverable Format",
            Self::BusinessContext => "Business Context",
            Self::TargetAudience => "Target Audience",
            Self::CreativeDirection => "Creative Direction",
            Self::ToneAndManner => "Tone and Manner",
            Self::KeywordsAndMotifs => "Keywords and Motifs",
            Self::DesignSpecifications => "Design Specifications",
            Self::Restrictions => "Restrictions",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::DeliverableFormat => "The medium, placement, and orientation of the final deliverable",
            Self::BusinessContext => "The client, product or event, and the business goal behind the design",
            Self::TargetAudience => "Who the design must reach, including demographics and mindset",
            Self::CreativeDirection => "The overall concept, visual approach, and key message",
            Self::ToneAndManner => "The mood, personality, and emotional register of the design",
            Self::KeywordsAndMotifs => "Words, symbols, and visual motifs to feature or evoke",
            Self::DesignSpecifications => "Concrete requirements such as colors, copy, logos, and layout constraints",
            Self::Restrictions => "Things to avoid and decisions that must remain open",
        }
    }
}

impl fmt::Display for RequirementField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RequirementField {
    type Err = DomainError;

    /// Accepts the snake-case key or the human label (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|f| f.key() == s || f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::UnknownVariant { kind: "requirement field", value: s.to_owned() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryOrigin {
    Extracted,
    Recommended,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementEntry {
    pub id: EntryId,
    pub field: RequirementField,
    pub text: String,
    pub origin: EntryOrigin,
    pub created_at: DateTime<Utc>,
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_entry_text(raw: &str) -> Result<String, DomainError> {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(DomainError::EmptyAfterTrim);
    }
    Ok(collapsed)
}

/// Equality key for requirement entries: normalized and case-folded.
pub fn dedup_key(raw: &str) -> Result<String, DomainError> {
    normalize_entry_text(raw).map(|s| s.to_lowercase())
}

/// The structured brief. Fields without entries are not stored, so two sets
/// with the same entries always compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementCardSet {
    entries_by_field: BTreeMap<RequirementField, Vec<RequirementEntry>>,
}

impl RequirementCardSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self, field: RequirementField) -> &[RequirementEntry] {
        self.entries_by_field.get(&field).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &RequirementEntry> {
        self.entries_by_field.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries_by_field.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries_by_field.is_empty()
    }

    pub fn get(&self, id: &EntryId) -> Option<&RequirementEntry> {
        self.iter().find(|e| &e.id == id)
    }

    /// True if `field` already holds an entry whose dedup key equals `text`'s.
    pub fn contains_text(&self, field: RequirementField, text: &str) -> bool {
        match dedup_key(text) {
            Ok(key) => self.entries(field).iter().any(|e| dedup_key(&e.text).as_deref() == Ok(key.as_str())),
            Err(_) => false,
        }
    }

    /// Appends an entry after normalizing its text. Duplicates are rejected.
    pub fn insert(&mut self, mut entry: RequirementEntry) -> Result<&RequirementEntry, DomainError> {
        entry.text = normalize_entry_text(&entry.text)?;
        if self.contains_text(entry.field, &entry.text) {
            return Err(DomainError::DuplicateEntry { field: entry.field, text: entry.text });
        }
        let list = self.entries_by_field.entry(entry.field).or_default();
        list.push(entry);
        Ok(list.last().expect("just pushed"))
    }

    /// Replaces an entry's text in place, keeping its position.
    pub fn edit(&mut self, id: &EntryId, text: &str) -> Result<&RequirementEntry, DomainError> {
        let text = normalize_entry_text(text)?;
        let key = text.to_lowercase();
        let field = self.get(id).ok_or_else(|| DomainError::UnknownEntry(id.to_string()))?.field;
        let list = self.entries_by_field.get_mut(&field).expect("field of existing entry");
        let clash = list.iter().any(|e| &e.id != id && dedup_key(&e.text).as_deref() == Ok(key.as_str()));
        if clash {
            return Err(DomainError::DuplicateEntry { field, text });
        }
        let entry = list.iter_mut().find(|e| &e.id == id).expect("entry located above");
        entry.text = text;
        Ok(entry)
    }

    /// Overwrites the stored copy of an entry (same id) or appends it.
    pub(crate) fn upsert_raw(&mut self, entry: RequirementEntry) {
        let list = self.entries_by_field.entry(entry.field).or_default();
        match list.iter_mut().find(|e| e.id == entry.id) {
            Some(slot) => *slot = entry,
            None => list.push(entry),
        }
    }

    pub fn remove(&mut self, id: &EntryId) -> Result<RequirementEntry, DomainError> {
        let field = self.get(id).ok_or_else(|| DomainError::UnknownEntry(id.to_string()))?.field;
        let list = self.entries_by_field.get_mut(&field).expect("field of existing entry");
        let pos = list.iter().position(|e| &e.id == id).expect("entry located above");
        let removed = list.remove(pos);
        if list.is_empty() {
            self.entries_by_field.remove(&field);
        }
        Ok(removed)
    }

    pub fn check_invariants(&self) -> Result<(), DomainError> {
        for (field, list) in &self.entries_by_field {
            if list.is_empty() {
                return Err(DomainError::Invariant(format!("empty list stored for {field}")));
            }
            let mut seen = std::collections::HashSet::new();
            for e in list {
                if e.field != *field {
                    return Err(DomainError::Invariant(format!("entry {} filed under {field}", e.id)));
                }
                if normalize_entry_text(&e.text).as_deref() != Ok(e.text.as_str()) {
                    return Err(DomainError::Invariant(format!("entry {} is not normalized", e.id)));
                }
                if !seen.insert(e.text.to_lowercase()) {
                    return Err(DomainError::Invariant(format!("duplicate entry text in {field}")));
                }
            }
        }
        Ok(())
    }
}

/// The five element categories. Every type except [`ElementType::Text`]
/// is visual and gets an enhanced prompt plus a preview image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementType {
    Object,
    Background,
    Text,
    Typography,
    Composition,
}

impl ElementType {
    pub const ALL: [ElementType; 5] = [
        ElementType::Object,
        ElementType::Background,
        ElementType::Text,
        ElementType::Typography,
        ElementType::Composition,
    ];

    pub fn is_visual(self) -> bool {
        self != ElementType::Text
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Object => "Object",
            Self::Background => "Background",
            Self::Text => "Text",
            Self::Typography => "Typography",
            Self::Composition => "Composition",
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ElementType {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::UnknownVariant { kind: "element type", value: s.to_owned() })
    }
}

/// Splits a Text element at its first colon into `(role, content)`.
pub fn parse_text_entry(raw: &str) -> Result<(String, String), DomainError> {
    let (role, content) = raw.trim().split_once(':').ok_or(DomainError::NoColon)?;
    let (role, content) = (role.trim(), content.trim());
    if role.is_empty() || content.is_empty() {
        return Err(DomainError::EmptyPart);
    }
    Ok((role.to_owned(), content.to_owned()))
}

pub fn format_text_entry(role: &str, content: &str) -> String {
    format!("{role}: {content}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardStatus {
    Drafted,
    Enhanced,
    Previewed,
    Failed,
}

/// Content-addressed reference to a stored image blob.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub content_hash: String,
    pub width: u32,
    pub height: u32,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCard {
    pub id: CardId,
    #[serde(rename = "type")]
    pub element_type: ElementType,
    pub rough_prompt: String,
    pub reasoning: Option<String>,
    pub influencing_fields: Vec<RequirementField>,
    pub enhanced_prompt: Option<String>,
    pub preview_ref: Option<ImageRef>,
    pub status: CardStatus,
    pub revision: u32,
    /// `<card id>@<revision>` of the revision this one was regenerated from.
    pub parent_id: Option<String>,
    pub selected: bool,
    pub error: Option<String>,
}

/// Checks that `rough` is acceptable as the rough prompt of a `ty` card.
pub fn validate_rough_prompt(ty: ElementType, rough: &str) -> Result<String, DomainError> {
    let trimmed = rough.trim();
    if trimmed.is_empty() {
        return Err(DomainError::EmptyAfterTrim);
    }
    if ty == ElementType::Text && parse_text_entry(trimmed).is_err() {
        return Err(DomainError::InvalidTextFormat(trimmed.to_owned()));
    }
    Ok(trimmed.to_owned())
}

impl ElementCard {
    pub fn drafted(
        id: CardId,
        element_type: ElementType,
        rough_prompt: &str,
        reasoning: Option<String>,
        influencing_fields: Vec<RequirementField>,
    ) -> Result<Self, DomainError> {
        Ok(Self {
            id,
            element_type,
            rough_prompt: validate_rough_prompt(element_type, rough_prompt)?,
            reasoning,
            influencing_fields,
            enhanced_prompt: None,
            preview_ref: None,
            status: CardStatus::Drafted,
            revision: 0,
            parent_id: None,
            selected: false,
            error: None,
        })
    }

    pub fn check_invariants(&self) -> Result<(), DomainError> {
        let fail = |msg: &str| Err(DomainError::Invariant(format!("card {}: {msg}", self.id)));
        if self.rough_prompt.trim().is_empty() {
            return fail("empty rough prompt");
        }
        if self.element_type == ElementType::Text {
            if self.enhanced_prompt.is_some() || self.preview_ref.is_some() {
                return fail("text card carries an enhanced prompt or preview");
            }
            if parse_text_entry(&self.rough_prompt).is_err() {
                return fail("text card is not \"Role: content\"");
            }
        }
        if self.status == CardStatus::Previewed && (self.enhanced_prompt.is_none() || self.preview_ref.is_none()) {
            return fail("previewed without enhanced prompt and preview");
        }
        if self.enhanced_prompt.as_deref().is_some_and(|p| p.contains('\n')) {
            return fail("enhanced prompt spans multiple lines");
        }
        Ok(())
    }
}

/// The user-curated selection as submitted. Slots may be empty while the
/// user is still choosing; [`Session::validate_selection`] enforces the
/// composition-plus-text requirement before integration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSet {
    #[serde(default)]
    pub composition_id: Option<CardId>,
    #[serde(default)]
    pub object_id: Option<CardId>,
    #[serde(default)]
    pub background_id: Option<CardId>,
    #[serde(default)]
    pub typography_id: Option<CardId>,
    #[serde(default)]
    pub text_ids: Vec<CardId>,
}

impl SelectionSet {
    pub fn is_empty(&self) -> bool {
        self.ids().next().is_none()
    }

    /// `(slot type, id)` for every referenced card, composition first.
    pub fn slots(&self) -> impl Iterator<Item = (ElementType, &CardId)> {
        let singles = [
            (ElementType::Composition, self.composition_id.as_ref()),
            (ElementType::Object, self.object_id.as_ref()),
            (ElementType::Background, self.background_id.as_ref()),
            (ElementType::Typography, self.typography_id.as_ref()),
        ];
        singles
            .into_iter()
            .filter_map(|(t, id)| id.map(|id| (t, id)))
            .chain(self.text_ids.iter().map(|id| (ElementType::Text, id)))
    }

    pub fn ids(&self) -> impl Iterator<Item = &CardId> {
        self.slots().map(|(_, id)| id)
    }

    pub fn contains(&self, id: &CardId) -> bool {
        self.ids().any(|i| i == id)
    }

    /// Removes `id` from whichever slot holds it.
    pub fn remove(&mut self, id: &CardId) {
        for slot in [&mut self.composition_id, &mut self.object_id, &mut self.background_id, &mut self.typography_id] {
            if slot.as_ref() == Some(id) {
                *slot = None;
            }
        }
        self.text_ids.retain(|t| t != id);
    }

    /// Puts `id` into the slot for `ty`. Single slots are replaced; the
    /// previous occupant is returned so its flag can be cleared.
    pub fn place(&mut self, ty: ElementType, id: CardId) -> Option<CardId> {
        let slot = match ty {
            ElementType::Composition => &mut self.composition_id,
            ElementType::Object => &mut self.object_id,
            ElementType::Background => &mut self.background_id,
            ElementType::Typography => &mut self.typography_id,
            ElementType::Text => {
                if !self.text_ids.contains(&id) {
                    self.text_ids.push(id);
                }
                return None;
            }
        };
        slot.replace(id.clone()).filter(|prev| *prev != id)
    }
}

/// A selection whose ids have been resolved to card snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedSelection {
    pub composition: ElementCard,
    pub object: Option<ElementCard>,
    pub background: Option<ElementCard>,
    pub typography: Option<ElementCard>,
    pub texts: Vec<ElementCard>,
}

impl ValidatedSelection {
    pub fn to_selection_set(&self) -> SelectionSet {
        SelectionSet {
            composition_id: Some(self.composition.id.clone()),
            object_id: self.object.as_ref().map(|c| c.id.clone()),
            background_id: self.background.as_ref().map(|c| c.id.clone()),
            typography_id: self.typography.as_ref().map(|c| c.id.clone()),
            text_ids: self.texts.iter().map(|c| c.id.clone()).collect(),
        }
    }

    pub fn cards(&self) -> impl Iterator<Item = &ElementCard> {
        std::iter::once(&self.composition)
            .chain(self.object.iter())
            .chain(self.background.iter())
            .chain(self.typography.iter())
            .chain(self.texts.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratedPrompt {
    pub id: PromptId,
    pub text: String,
    pub selection_snapshot: ValidatedSelection,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignArtifact {
    pub id: ArtifactId,
    pub image_ref: ImageRef,
    pub integrated_prompt_id: PromptId,
    pub duration_ms: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Portrait,
    Landscape,
    Square,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Portrait => "portrait",
            Self::Landscape => "landscape",
            Self::Square => "square",
        }
    }
}

impl FromStr for Orientation {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "portrait" | "vertical" => Ok(Self::Portrait),
            "landscape" | "horizontal" => Ok(Self::Landscape),
            "square" => Ok(Self::Square),
            other => Err(DomainError::UnknownVariant { kind: "orientation", value: other.to_owned() }),
        }
    }
}

/// Variables consumed by the Composition enhancer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliverableContext {
    pub deliverable_format: Option<String>,
    pub orientation: Option<Orientation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub created_at: DateTime<Utc>,
    pub brief_text: String,
    pub output_language: String,
    pub deliverable_context: DeliverableContext,
    pub requirement_cards: RequirementCardSet,
    pub element_cards: BTreeMap<ElementType, Vec<ElementCard>>,
    pub selection: SelectionSet,
    pub integrated_prompts: Vec<IntegratedPrompt>,
    pub history: Vec<DesignArtifact>,
    pub closed_at: Option<DateTime<Utc>>,
    /// Highest numeric suffix handed out by [`Session::next_id`].
    pub id_counter: u64,
}

impl Session {
    pub fn new(
        id: SessionId,
        brief_text: impl Into<String>,
        output_language: impl Into<String>,
        deliverable_context: DeliverableContext,
        created_at: DateTime<Utc>,
    ) -> Self {
        Self {
            id,
            created_at,
            brief_text: brief_text.into(),
            output_language: output_language.into(),
            deliverable_context,
            requirement_cards: RequirementCardSet::new(),
            element_cards: ElementType::ALL.into_iter().map(|t| (t, Vec::new())).collect(),
            selection: SelectionSet::default(),
            integrated_prompts: Vec::new(),
            history: Vec::new(),
            closed_at: None,
            id_counter: 0,
        }
    }

    /// Allocates a session-unique id such as `card-7`.
    pub fn next_id(&mut self, prefix: &str) -> String {
        self.id_counter += 1;
        format!("{prefix}-{}", self.id_counter)
    }

    /// Bumps the id counter past an id seen during replay.
    pub fn observe_id(&mut self, id: &str) {
        if let Some(n) = id.rsplit('-').next().and_then(|n| n.parse::<u64>().ok()) {
            self.id_counter = self.id_counter.max(n);
        }
    }

    pub fn cards(&self) -> impl Iterator<Item = &ElementCard> {
        self.element_cards.values().flatten()
    }

    pub fn cards_of(&self, ty: ElementType) -> &[ElementCard] {
        self.element_cards.get(&ty).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn card(&self, id: &CardId) -> Option<&ElementCard> {
        self.cards().find(|c| &c.id == id)
    }

    pub fn card_mut(&mut self, id: &CardId) -> Option<&mut ElementCard> {
        self.element_cards.values_mut().flatten().find(|c| &c.id == id)
    }

    pub fn integrated_prompt(&self, id: &PromptId) -> Option<&IntegratedPrompt> {
        self.integrated_prompts.iter().find(|p| &p.id == id)
    }

    /// Resolves every id of `sel` against this session's cards.
    pub fn validate_selection(&self, sel: &SelectionSet) -> Result<ValidatedSelection, DomainError> {
        if sel.composition_id.is_none() {
            return Err(DomainError::MissingComposition);
        }
        let mut seen = std::collections::HashSet::new();
        let mut resolve = |slot: ElementType, id: &CardId| -> Result<ElementCard, DomainError> {
            if !seen.insert(id.clone()) {
                return Err(DomainError::DuplicateSelection(id.to_string()));
            }
            let card = self.card(id).ok_or_else(|| DomainError::UnknownCard(id.to_string()))?;
            if card.element_type != slot {
                return Err(DomainError::TypeMismatch {
                    id: id.to_string(),
                    expected: slot,
                    actual: card.element_type,
                });
            }
            Ok(card.clone())
        };
        let composition = resolve(ElementType::Composition, sel.composition_id.as_ref().expect("checked"))?;
        let object = sel.object_id.as_ref().map(|id| resolve(ElementType::Object, id)).transpose()?;
        let background = sel.background_id.as_ref().map(|id| resolve(ElementType::Background, id)).transpose()?;
        let typography = sel.typography_id.as_ref().map(|id| resolve(ElementType::Typography, id)).transpose()?;
        let texts = sel.text_ids.iter().map(|id| resolve(ElementType::Text, id)).collect::<Result<Vec<_>, _>>()?;
        if texts.is_empty() {
            return Err(DomainError::NoText);
        }
        Ok(ValidatedSelection { composition, object, background, typography, texts })
    }

    /// Checks every invariant that must hold on any reachable state.
    pub fn check_invariants(&self) -> Result<(), DomainError> {
        self.requirement_cards.check_invariants()?;
        let mut ids = std::collections::HashSet::new();
        for (ty, cards) in &self.element_cards {
            for card in cards {
                if card.element_type != *ty {
                    return Err(DomainError::Invariant(format!("card {} filed under {ty}", card.id)));
                }
                if !ids.insert(card.id.clone()) {
                    return Err(DomainError::Invariant(format!("duplicate card id {}", card.id)));
                }
                card.check_invariants()?;
                if card.selected != self.selection.contains(&card.id) {
                    return Err(DomainError::Invariant(format!("card {} selection flag out of sync", card.id)));
                }
            }
        }
        for (slot, id) in self.selection.slots() {
            let card = self.card(id).ok_or_else(|| DomainError::UnknownCard(id.to_string()))?;
            if card.element_type != slot {
                return Err(DomainError::Invariant(format!("selection slot {slot} holds {}", card.element_type)));
            }
        }
        for prompt in &self.integrated_prompts {
            if prompt.text.contains('\n') {
                return Err(DomainError::Invariant(format!("integrated prompt {} has a newline", prompt.id)));
            }
        }
        for art in &self.history {
            if self.integrated_prompt(&art.integrated_prompt_id).is_none() {
                return Err(DomainError::Invariant(format!("artifact {} has no integrated prompt", art.id)));
            }
        }
        Ok(())
    }
}
