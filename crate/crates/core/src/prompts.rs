//! Prompt templates for every LLM call in the pipeline.
//!
//! Template bodies live in `templates/*.txt` and are compiled in with
//! `include_str!`. Slots are spelled `{name}`; rendering is single-pass and
//! strict: every slot must be supplied and no extra variables are accepted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::LazyLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    parse_text_entry, DeliverableContext, ElementCard, ElementType, RequirementCardSet, RequirementField,
    ValidatedSelection,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("field descriptions must cover all 8 fields in canonical order")]
    MissingField,
    #[error("missing context variable {0}")]
    MissingContext(&'static str),
    #[error("template {template} has no value for {{{name}}}")]
    MissingVariable { template: &'static str, name: String },
    #[error("template {template} does not declare {{{name}}}")]
    UnexpectedVariable { template: &'static str, name: String },
    #[error("invalid prompt input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptTemplateKind {
    RequirementExtractor,
    RequirementRecommender,
    ElementRecommender,
    EnhanceObject,
    EnhanceBackground,
    EnhanceTypography,
    EnhanceComposition,
    DesignIntegrator,
}

impl PromptTemplateKind {
    pub const ALL: [PromptTemplateKind; 8] = [
        Self::RequirementExtractor,
        Self::RequirementRecommender,
        Self::ElementRecommender,
        Self::EnhanceObject,
        Self::EnhanceBackground,
        Self::EnhanceTypography,
        Self::EnhanceComposition,
        Self::DesignIntegrator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RequirementExtractor => "RequirementExtractor",
            Self::RequirementRecommender => "RequirementRecommender",
            Self::ElementRecommender => "ElementRecommender",
            Self::EnhanceObject => "EnhanceObject",
            Self::EnhanceBackground => "EnhanceBackground",
            Self::EnhanceTypography => "EnhanceTypography",
            Self::EnhanceComposition => "EnhanceComposition",
            Self::DesignIntegrator => "DesignIntegrator",
        }
    }

    /// The enhancer for a visual element type. Text has none.
    pub fn enhancer_for(ty: ElementType) -> Option<Self> {
        match ty {
            ElementType::Object => Some(Self::EnhanceObject),
            ElementType::Background => Some(Self::EnhanceBackground),
            ElementType::Typography => Some(Self::EnhanceTypography),
            ElementType::Composition => Some(Self::EnhanceComposition),
            ElementType::Text => None,
        }
    }

    pub fn is_enhancer(self) -> bool {
        matches!(
            self,
            Self::EnhanceObject | Self::EnhanceBackground | Self::EnhanceTypography | Self::EnhanceComposition
        )
    }

    pub fn template(self) -> &'static Template {
        &TEMPLATES[self as usize]
    }
}

impl fmt::Display for PromptTemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// A parsed template body.
#[derive(Debug, Clone)]
pub struct Template {
    name: &'static str,
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &'static str, source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let slot = after
                .find('}')
                .map(|close| &after[..close])
                .filter(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_lowercase() || b == b'_'));
            match slot {
                Some(n) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(n.to_owned()));
                    rest = &after[n.len() + 1..];
                }
                None => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Self { name, source: source.to_owned(), segments }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// The template text with slots still in place.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, PromptError> {
        let declared = self.variables();
        if let Some(extra) = vars.keys().find(|k| !declared.contains(k.as_str())) {
            return Err(PromptError::UnexpectedVariable { template: self.name, name: extra.clone() });
        }
        let mut out = String::with_capacity(self.source.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Slot(n) => out.push_str(
                    vars.get(n).ok_or_else(|| PromptError::MissingVariable { template: self.name, name: n.clone() })?,
                ),
            }
        }
        Ok(out)
    }
}

fn body(raw: &str) -> &str {
    raw.strip_suffix('\n').unwrap_or(raw)
}

const ENHANCE_SHARED: &str = include_str!("../templates/enhance_shared.txt");

static TEMPLATES: LazyLock<Vec<Template>> = LazyLock::new(|| {
    let enhancer = |name, raw: &str| Template::parse(name, &format!("{}\n{}", body(raw), body(ENHANCE_SHARED)));
    // Order matches the discriminants of PromptTemplateKind.
    vec![
        Template::parse("RequirementExtractor", body(include_str!("../templates/requirement_extractor.txt"))),
        Template::parse("RequirementRecommender", body(include_str!("../templates/requirement_recommender.txt"))),
        Template::parse("ElementRecommender", body(include_str!("../templates/element_recommender.txt"))),
        enhancer("EnhanceObject", include_str!("../templates/enhance_object.txt")),
        enhancer("EnhanceBackground", include_str!("../templates/enhance_background.txt")),
        enhancer("EnhanceTypography", include_str!("../templates/enhance_typography.txt")),
        enhancer("EnhanceComposition", include_str!("../templates/enhance_composition.txt")),
        Template::parse("DesignIntegrator", body(include_str!("../templates/design_integrator.txt"))),
    ]
});

static GUIDELINES: LazyLock<BTreeMap<ElementType, Template>> = LazyLock::new(|| {
    BTreeMap::from([
        (
            ElementType::Object,
            Template::parse("guideline:Object", body(include_str!("../templates/guideline_object.txt"))),
        ),
        (
            ElementType::Background,
            Template::parse("guideline:Background", body(include_str!("../templates/guideline_background.txt"))),
        ),
        (ElementType::Text, Template::parse("guideline:Text", body(include_str!("../templates/guideline_text.txt")))),
        (
            ElementType::Typography,
            Template::parse("guideline:Typography", body(include_str!("../templates/guideline_typography.txt"))),
        ),
        (
            ElementType::Composition,
            Template::parse("guideline:Composition", body(include_str!("../templates/guideline_composition.txt"))),
        ),
    ])
});

/// Marker used in place of an empty requirement field.
pub const EMPTY_FIELD_MARKER: &str = "(none)";
/// Rendered in place of the predetermined section on a first recommendation.
pub const NO_PRIOR_RECOMMENDATIONS: &str = "(no prior recommendations)";
/// Heading that introduces existing rough prompts in the predetermined section.
pub const PREDETERMINED_HEADING: &str = "Existing values for this element:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptTemplateKind,
    pub text: String,
    pub variables_used: BTreeMap<String, String>,
}

impl RenderedPrompt {
    fn render(kind: PromptTemplateKind, vars: BTreeMap<String, String>) -> Result<Self, PromptError> {
        let text = kind.template().render(&vars)?;
        Ok(Self { kind, text, variables_used: vars })
    }

    pub fn var(&self, name: &str) -> Option<&str> {
        self.variables_used.get(name).map(String::as_str)
    }
}

fn vars<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Element guideline paragraph; `{output_language}` is filled for Typography.
pub fn guideline_for(ty: ElementType, output_language: &str) -> String {
    let template = &GUIDELINES[&ty];
    let mut values = BTreeMap::new();
    if template.variables().contains("output_language") {
        values.insert("output_language".to_owned(), output_language.to_owned());
    }
    template.render(&values).expect("guideline slots are fixed")
}

/// `(field, label, description)` for all eight fields in canonical order.
pub fn canonical_field_descriptions() -> Vec<(RequirementField, &'static str, &'static str)> {
    RequirementField::ALL.into_iter().map(|f| (f, f.label(), f.description())).collect()
}

/// Serializes requirement cards as `Label:` blocks in canonical field order.
pub fn serialize_requirements(cards: &RequirementCardSet) -> String {
    let blocks: Vec<String> = RequirementField::ALL
        .into_iter()
        .map(|field| {
            let entries = cards.entries(field);
            let lines = if entries.is_empty() {
                EMPTY_FIELD_MARKER.to_owned()
            } else {
                entries.iter().map(|e| format!("- {}", one_line(&e.text))).collect::<Vec<_>>().join("\n")
            };
            format!("{}:\n{lines}", field.label())
        })
        .collect();
    format!("\n{}", blocks.join("\n\n"))
}

fn predetermined_section(existing: &[String]) -> String {
    if existing.is_empty() {
        return format!("\n\n{NO_PRIOR_RECOMMENDATIONS}");
    }
    let lines: Vec<String> = existing.iter().map(|p| format!("- {}", one_line(p))).collect();
    format!("\n\n{PREDETERMINED_HEADING}\n{}", lines.join("\n"))
}

fn require_language(lang: &str) -> Result<String, PromptError> {
    let lang = lang.trim();
    if lang.is_empty() {
        return Err(PromptError::InvalidInput("output_language is empty".into()));
    }
    Ok(lang.to_owned())
}

pub fn render_requirement_extractor(
    output_language: &str,
    field_descriptions: &[(RequirementField, &str, &str)],
    user_input: &str,
) -> Result<RenderedPrompt, PromptError> {
    let order: Vec<_> = field_descriptions.iter().map(|(f, _, _)| *f).collect();
    if order != RequirementField::ALL {
        return Err(PromptError::MissingField);
    }
    if user_input.trim().is_empty() {
        return Err(PromptError::InvalidInput("user input is empty".into()));
    }
    let descriptions: String =
        field_descriptions.iter().map(|(f, label, desc)| format!("\n- {} ({label}): {desc}", f.key())).collect();
    RenderedPrompt::render(
        PromptTemplateKind::RequirementExtractor,
        vars([
            ("output_language", require_language(output_language)?),
            ("field_descriptions", descriptions),
            ("user_input", user_input.to_owned()),
        ]),
    )
}

pub fn render_requirement_recommender(
    num_candidates: usize,
    output_language: &str,
    known_requirements: &RequirementCardSet,
    target_field: RequirementField,
    field_description: &str,
) -> Result<RenderedPrompt, PromptError> {
    if num_candidates == 0 {
        return Err(PromptError::InvalidInput("num_candidates must be at least 1".into()));
    }
    RenderedPrompt::render(
        PromptTemplateKind::RequirementRecommender,
        vars([
            ("num_candidates", num_candidates.to_string()),
            ("output_language", require_language(output_language)?),
            ("known_requirements", serialize_requirements(known_requirements)),
            ("target_field", target_field.label().to_owned()),
            ("field_description", field_description.to_owned()),
        ]),
    )
}

pub fn render_element_recommender(
    element_type: ElementType,
    num_candidates: usize,
    output_language: &str,
    current_date: NaiveDate,
    requirements: &RequirementCardSet,
    predetermined: &[String],
) -> Result<RenderedPrompt, PromptError> {
    if num_candidates == 0 {
        return Err(PromptError::InvalidInput("num_candidates must be at least 1".into()));
    }
    let lang = require_language(output_language)?;
    RenderedPrompt::render(
        PromptTemplateKind::ElementRecommender,
        vars([
            ("num_candidates", num_candidates.to_string()),
            ("element_type", element_type.label().to_owned()),
            ("current_date", current_date.format("%Y-%m-%d").to_string()),
            ("requirements_text", serialize_requirements(requirements)),
            ("predetermined_section", predetermined_section(predetermined)),
            ("element_description", guideline_for(element_type, &lang)),
            ("output_language", lang),
        ]),
    )
}

/// Inputs shared by the four enhancers.
#[derive(Debug, Clone, Copy)]
pub struct EnhanceContext<'a> {
    pub output_language: &'a str,
    pub deliverable: &'a DeliverableContext,
}

pub fn render_enhancer(
    kind: PromptTemplateKind,
    rough_prompt: &str,
    ctx: EnhanceContext<'_>,
) -> Result<RenderedPrompt, PromptError> {
    if !kind.is_enhancer() {
        return Err(PromptError::InvalidInput(format!("{kind} is not an enhancer")));
    }
    if rough_prompt.trim().is_empty() {
        return Err(PromptError::InvalidInput("rough prompt is empty".into()));
    }
    let mut values = vars([
        ("rough_prompt", rough_prompt.trim().to_owned()),
        ("output_language", require_language(ctx.output_language)?),
    ]);
    if kind == PromptTemplateKind::EnhanceComposition {
        let format = ctx
            .deliverable
            .deliverable_format
            .as_deref()
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .ok_or(PromptError::MissingContext("deliverable_format"))?;
        let orientation = ctx.deliverable.orientation.ok_or(PromptError::MissingContext("orientation"))?;
        values.insert("deliverable_format".into(), format.to_owned());
        values.insert("orientation".into(), orientation.as_str().to_owned());
    }
    RenderedPrompt::render(kind, values)
}

/// Processing order used when listing selected elements for the integrator.
pub const INTEGRATION_ORDER: [ElementType; 5] = [
    ElementType::Composition,
    ElementType::Background,
    ElementType::Text,
    ElementType::Typography,
    ElementType::Object,
];

/// The prompt a visual card contributes: its enhanced prompt, or the rough
/// prompt when it was never enhanced.
pub fn visual_prompt(card: &ElementCard) -> String {
    one_line(card.enhanced_prompt.as_deref().unwrap_or(&card.rough_prompt))
}

/// `[Type]` blocks separated by blank lines, composition first.
pub fn serialize_selected_elements(sel: &ValidatedSelection) -> String {
    let mut blocks = Vec::new();
    for ty in INTEGRATION_ORDER {
        let body = match ty {
            ElementType::Text => sel
                .texts
                .iter()
                .map(|c| match parse_text_entry(&c.rough_prompt) {
                    Ok((role, content)) => format!("{role}: {}", one_line(&content)),
                    Err(_) => one_line(&c.rough_prompt),
                })
                .collect::<Vec<_>>()
                .join("\n"),
            ElementType::Composition => visual_prompt(&sel.composition),
            ElementType::Background => match &sel.background {
                Some(c) => visual_prompt(c),
                None => continue,
            },
            ElementType::Typography => match &sel.typography {
                Some(c) => visual_prompt(c),
                None => continue,
            },
            ElementType::Object => match &sel.object {
                Some(c) => visual_prompt(c),
                None => continue,
            },
        };
        blocks.push(format!("[{}]\n{body}", ty.label()));
    }
    format!("\n{}", blocks.join("\n\n"))
}

pub fn render_integrator(sel: &ValidatedSelection, output_language: &str) -> Result<RenderedPrompt, PromptError> {
    RenderedPrompt::render(
        PromptTemplateKind::DesignIntegrator,
        vars([
            ("selected_elements", serialize_selected_elements(sel)),
            ("output_language", require_language(output_language)?),
        ]),
    )
}

/// Declared slots of `kind` that still appear literally in `text`.
pub fn residual_placeholders(kind: PromptTemplateKind, text: &str) -> Vec<String> {
    kind.template().variables().into_iter().map(|v| format!("{{{v}}}")).filter(|p| text.contains(p.as_str())).collect()
}
