//! Fixtures and generators shared by the integration and acceptance suites.
//! Included by path from other crates, so it only depends on `b2d_core`,
//! `rand`, `rand_chacha` and `tempfile`.
#![allow(dead_code)]

use std::sync::Arc;

use b2d_core::domain::{
    CardStatus, DeliverableContext, ElementCard, ElementType, EntryOrigin, Orientation, RequirementCardSet,
    RequirementEntry, RequirementField, SelectionSet, ValidatedSelection,
};
use b2d_core::events::EventRecord;
use b2d_core::pipeline::{Engine, PipelineConfig};
use b2d_core::prompts::{self, EnhanceContext, PromptTemplateKind, RenderedPrompt};
use b2d_core::providers::mock::MockProviders;
use b2d_core::providers::{EmbeddingVector, Providers, RetryPolicy};
use b2d_core::store::FsStore;
use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const BRIEFS: [(&str, &str); 4] = [
    ("t1_cosmetics_signage", include_str!("../../fixtures/briefs/t1_cosmetics_signage.txt")),
    ("t2_gym_direct_mail", include_str!("../../fixtures/briefs/t2_gym_direct_mail.txt")),
    ("t3_music_festival_sns", include_str!("../../fixtures/briefs/t3_music_festival_sns.txt")),
    ("t4_restaurant_recruitment", include_str!("../../fixtures/briefs/t4_restaurant_recruitment.txt")),
];

pub const GOLDEN: [(PromptTemplateKind, &str); 8] = [
    (PromptTemplateKind::RequirementExtractor, include_str!("../golden/RequirementExtractor.txt")),
    (PromptTemplateKind::RequirementRecommender, include_str!("../golden/RequirementRecommender.txt")),
    (PromptTemplateKind::ElementRecommender, include_str!("../golden/ElementRecommender.txt")),
    (PromptTemplateKind::EnhanceObject, include_str!("../golden/EnhanceObject.txt")),
    (PromptTemplateKind::EnhanceBackground, include_str!("../golden/EnhanceBackground.txt")),
    (PromptTemplateKind::EnhanceTypography, include_str!("../golden/EnhanceTypography.txt")),
    (PromptTemplateKind::EnhanceComposition, include_str!("../golden/EnhanceComposition.txt")),
    (PromptTemplateKind::DesignIntegrator, include_str!("../golden/DesignIntegrator.txt")),
];

pub fn fixed_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 10, 1).unwrap()
}

fn at() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2025-10-01T09:00:00Z").unwrap().with_timezone(&Utc)
}

fn entry(id: &str, field: RequirementField, text: &str) -> RequirementEntry {
    RequirementEntry { id: id.into(), field, text: text.into(), origin: EntryOrigin::Extracted, created_at: at() }
}

pub fn golden_requirements() -> RequirementCardSet {
    let mut cards = RequirementCardSet::new();
    for e in [
        entry("req-1", RequirementField::DeliverableFormat, "vertical in-store digital signage"),
        entry("req-2", RequirementField::TargetAudience, "women in their 20s-30s"),
        entry("req-3", RequirementField::TargetAudience, "value a clean and elegant look"),
        entry("req-4", RequirementField::CreativeDirection, "white and light pink brand colors"),
    ] {
        cards.insert(e).unwrap();
    }
    cards
}

fn card(id: &str, ty: ElementType, rough: &str, enhanced: Option<&str>) -> ElementCard {
    let mut c = ElementCard::drafted(id.into(), ty, rough, None, vec![]).unwrap();
    if let Some(e) = enhanced {
        c.enhanced_prompt = Some(e.into());
        c.status = CardStatus::Enhanced;
    }
    c
}

pub fn golden_selection() -> ValidatedSelection {
    ValidatedSelection {
        composition: card(
            "card-1",
            ElementType::Composition,
            "product centered in the lower third",
            Some("A vertical layout with the serum bottle centered in the lower third and generous top margin"),
        ),
        object: Some(card("card-2", ElementType::Object, "a glass serum bottle", None)),
        background: Some(card(
            "card-3",
            ElementType::Background,
            "soft pink gradient",
            Some("A soft white-to-pink vertical gradient with faint bokeh"),
        )),
        typography: None,
        texts: vec![
            card("card-4", ElementType::Text, "Headline: Glow Lift", None),
            card("card-5", ElementType::Text, "Call to Action: Try it today", None),
        ],
    }
}

/// One deterministic rendering per template kind, matching the golden files.
pub fn golden_cases() -> Vec<(PromptTemplateKind, RenderedPrompt)> {
    let cards = golden_requirements();
    let ctx = DeliverableContext {
        deliverable_format: Some("digital signage".into()),
        orientation: Some(Orientation::Portrait),
    };
    let enhance = EnhanceContext { output_language: "English", deliverable: &ctx };
    let rough = |kind| match kind {
        PromptTemplateKind::EnhanceObject => "a glass serum bottle with a pink cap",
        PromptTemplateKind::EnhanceBackground => "soft pink gradient",
        PromptTemplateKind::EnhanceTypography => "thin elegant serif, white",
        _ => "product centered in the lower third",
    };
    PromptTemplateKind::ALL
        .into_iter()
        .map(|kind| {
            let p = match kind {
                PromptTemplateKind::RequirementExtractor => prompts::render_requirement_extractor(
                    "English",
                    &prompts::canonical_field_descriptions(),
                    BRIEFS[0].1,
                ),
                PromptTemplateKind::RequirementRecommender => prompts::render_requirement_recommender(
                    3,
                    "English",
                    &cards,
                    RequirementField::ToneAndManner,
                    RequirementField::ToneAndManner.description(),
                ),
                PromptTemplateKind::ElementRecommender => prompts::render_element_recommender(
                    ElementType::Object,
                    4,
                    "English",
                    fixed_date(),
                    &cards,
                    &["a glass serum bottle on a marble pedestal".into(), "a model holding the serum".into()],
                ),
                PromptTemplateKind::DesignIntegrator => prompts::render_integrator(&golden_selection(), "English"),
                enhancer => prompts::render_enhancer(enhancer, rough(enhancer), enhance),
            };
            (kind, p.unwrap())
        })
        .collect()
}

const WORDS: [&str; 12] =
    ["neon", "serum", "gym", "festival", "ramen", "bold", "pastel", "{braces}", "日本語", "a:b", "50%", "sale"];

fn phrase(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_cards(rng: &mut impl Rng) -> RequirementCardSet {
    let mut cards = RequirementCardSet::new();
    for i in 0..rng.random_range(0..8) {
        let field = *RequirementField::ALL.choose(rng).unwrap();
        let _ = cards.insert(entry(&format!("req-{i}"), field, &phrase(rng)));
    }
    cards
}

fn random_card(rng: &mut impl Rng, id: &str, ty: ElementType) -> ElementCard {
    let rough = if ty == ElementType::Text { format!("Headline: {}", phrase(rng)) } else { phrase(rng) };
    let enhanced = rng.random_bool(0.5).then(|| phrase(rng));
    card(id, ty, &rough, enhanced.as_deref())
}

/// A valid random context for `kind`, rendered.
pub fn random_prompt(rng: &mut impl Rng, kind: PromptTemplateKind) -> RenderedPrompt {
    let lang = *["English", "Japanese", "French"].choose(rng).unwrap();
    let n = rng.random_range(1..6);
    let ctx = DeliverableContext {
        deliverable_format: Some(phrase(rng)),
        orientation: Some(*[Orientation::Portrait, Orientation::Landscape, Orientation::Square].choose(rng).unwrap()),
    };
    let p = match kind {
        PromptTemplateKind::RequirementExtractor => {
            prompts::render_requirement_extractor(lang, &prompts::canonical_field_descriptions(), &phrase(rng))
        }
        PromptTemplateKind::RequirementRecommender => {
            let field = *RequirementField::ALL.choose(rng).unwrap();
            prompts::render_requirement_recommender(n, lang, &random_cards(rng), field, field.description())
        }
        PromptTemplateKind::ElementRecommender => {
            let prior: Vec<String> = (0..rng.random_range(0..4)).map(|_| phrase(rng)).collect();
            let ty = *ElementType::ALL.choose(rng).unwrap();
            prompts::render_element_recommender(ty, n, lang, fixed_date(), &random_cards(rng), &prior)
        }
        PromptTemplateKind::DesignIntegrator => {
            let sel = ValidatedSelection {
                composition: random_card(rng, "c", ElementType::Composition),
                object: rng.random_bool(0.5).then(|| random_card(rng, "o", ElementType::Object)),
                background: rng.random_bool(0.5).then(|| random_card(rng, "b", ElementType::Background)),
                typography: rng.random_bool(0.5).then(|| random_card(rng, "t", ElementType::Typography)),
                texts: (0..rng.random_range(1..4))
                    .map(|i| random_card(rng, &format!("x{i}"), ElementType::Text))
                    .collect(),
            };
            prompts::render_integrator(&sel, lang)
        }
        enhancer => prompts::render_enhancer(
            enhancer,
            &phrase(rng),
            EnhanceContext { output_language: lang, deliverable: &ctx },
        ),
    };
    p.unwrap()
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub mock: Arc<MockProviders>,
    pub engine: Engine,
}

pub fn test_config() -> PipelineConfig {
    PipelineConfig {
        current_date: Some(fixed_date()),
        retry: RetryPolicy { transport_retries: 1, backoff_ms: 0 },
        ..PipelineConfig::default()
    }
}

pub fn harness(seed: u64) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mock = Arc::new(MockProviders::new(seed));
    let store = Arc::new(FsStore::open(dir.path()).unwrap());
    let engine = Engine::new(Providers::from_mock(mock.clone()), store, test_config());
    Harness { dir, mock, engine }
}

/// The `(kind)` sequence of an event log.
pub fn kinds(events: &[EventRecord]) -> Vec<String> {
    events.iter().map(|r| r.kind.clone()).collect()
}

pub fn random_unit_vectors(rng: &mut impl Rng, count: usize, dims: usize) -> Vec<EmbeddingVector> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(e) = EmbeddingVector::new(v) {
                break e;
            }
        })
        .collect()
}

/// Double loop over ordered pairs `i < j`, computed independently of the
/// library: explicit cosine with norms.
pub fn brute_force_diversity(vectors: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            if i < j {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                let ni = vectors[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nj = vectors[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                total += 1.0 - dot / (ni * nj);
                pairs += 1;
            }
        }
    }
    total / pairs as f64
}

/// A random orthogonal matrix as a product of Householder reflections.
pub fn random_orthogonal(rng: &mut impl Rng, dims: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = (0..dims).map(|i| (0..dims).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..3 {
        let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv < 1e-12 {
            continue;
        }
        // q <- q (I - 2 v v^T / v^T v)
        for row in q.iter_mut() {
            let rv: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, vi) in row.iter_mut().zip(&v) {
                *x -= 2.0 * rv * vi / vv;
            }
        }
    }
    q
}

pub fn apply(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// A selection that validates when the session has a composition and a
/// text card; otherwise whatever can be filled.
pub fn greedy_selection(session: &b2d_core::Session) -> SelectionSet {
    let mut sel = SelectionSet::default();
    for ty in ElementType::ALL {
        if let Some(c) = session.cards_of(ty).first() {
            sel.place(ty, c.id.clone());
        }
    }
    sel
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> Option<&'a T> {
    items.choose(rng)
}

/// Applies `steps` random operations to a fresh session. Operation errors
/// are expected and ignored; violated properties are returned as `Err`.
pub fn random_session(h: &Harness, rng: &mut impl Rng, steps: usize) -> Result<b2d_core::domain::SessionId, String> {
    use std::sync::atomic::Ordering::Relaxed;
    let e = &h.engine;
    let ctx = DeliverableContext {
        deliverable_format: rng.random_bool(0.8).then(|| "poster".to_owned()),
        orientation: rng.random_bool(0.8).then_some(Orientation::Landscape),
    };
    let brief = BRIEFS.choose(rng).unwrap().1;
    let id = e.create_session(brief, "English", ctx).map_err(|e| e.to_string())?.id;
    let mut last_candidates = Vec::new();
    for _ in 0..steps {
        let before = e.session(&id).map_err(|e| e.to_string())?;
        let cards: Vec<ElementCard> = before.cards().cloned().collect();
        let entries: Vec<RequirementEntry> = before.requirement_cards.iter().cloned().collect();
        let fault = rng.random_range(0..20);
        h.mock.faults.image_transport.store(fault == 0, Relaxed);
        h.mock.faults.chat_schema.store(fault == 1, Relaxed);
        let ty = *ElementType::ALL.choose(rng).unwrap();
        let field = *RequirementField::ALL.choose(rng).unwrap();
        let _ = match rng.random_range(0..17) {
            0 => e.extract_requirements(&id, None).map(drop),
            1 => e.recommend_requirements(&id, field, rng.random_range(1..4)).map(|c| last_candidates = c),
            2 => match last_candidates.pop() {
                Some(c) => e.accept_candidate(&id, c).map(drop),
                None => Ok(()),
            },
            3 => e.add_manual_entry(&id, field, &phrase(rng)).map(drop),
            4 => match pick(rng, &entries) {
                Some(en) => e.edit_entry(&id, &en.id, &phrase(rng)).map(drop),
                None => Ok(()),
            },
            5 => match pick(rng, &entries) {
                Some(en) => e.delete_entry(&id, &en.id).map(drop),
                None => Ok(()),
            },
            6 => e.recommend_elements(&id, ty, rng.random_range(1..3)).map(drop),
            7 => e.recommend_and_preview(&id, ty, rng.random_range(1..3)).map(drop),
            8 => {
                let rough = if ty == ElementType::Text { format!("Body: {}", phrase(rng)) } else { phrase(rng) };
                e.add_manual_card(&id, ty, &rough).map(drop)
            }
            9 => match pick(rng, &cards) {
                Some(c) => e.enhance_and_preview(&id, &c.id).map(drop),
                None => Ok(()),
            },
            10 => match pick(rng, &cards) {
                Some(c) => {
                    let rough = match (c.element_type, rng.random_bool(0.2)) {
                        (ElementType::Text, false) => format!("Headline: {}", phrase(rng)),
                        _ => phrase(rng),
                    };
                    e.edit_rough(&id, &c.id, &rough).map(drop)
                }
                None => Ok(()),
            },
            11 => match pick(rng, &cards) {
                Some(c) => e.regenerate_preview(&id, &c.id).map(drop),
                None => Ok(()),
            },
            12 => match pick(rng, &cards) {
                Some(c) => e.delete_card(&id, &c.id),
                None => Ok(()),
            },
            13 => match pick(rng, &cards) {
                Some(c) => e.set_selected(&id, &c.id, !c.selected).map(drop),
                None => Ok(()),
            },
            14 => e.set_selection(&id, greedy_selection(&before)).map(drop),
            15 => e.integrate_and_generate(&id).map(drop),
            _ => e.regenerate_design(&id).map(drop),
        };
        h.mock.faults.image_transport.store(false, Relaxed);
        h.mock.faults.chat_schema.store(false, Relaxed);
        let after = e.session(&id).map_err(|e| e.to_string())?;
        if after.history.len() < before.history.len() || after.history[..before.history.len()] != before.history[..] {
            return Err(format!("history of {id} was not append-only"));
        }
        after.check_invariants().map_err(|e| e.to_string())?;
    }
    Ok(id)
}

/// Ordering properties over one session's event log:
/// every preview image follows an enhancement of a visual card, every final
/// image follows a successful integrator completion, and text cards are
/// never enhanced or previewed.
pub fn check_ordering(events: &[EventRecord]) -> Result<(), String> {
    let detail = |i: usize| &events[i].detail;
    for (i, r) in events.iter().enumerate() {
        match r.kind.as_str() {
            "generate_image" if detail(i)["purpose"] == "preview" => {
                let ok = i >= 2
                    && events[i - 1].kind == "card_updated"
                    && detail(i - 1)["reason"] == "enhanced"
                    && detail(i - 1)["card"]["type"] != "text"
                    && events[i - 2].kind == "complete_structured"
                    && detail(i - 2)["error"].is_null()
                    && detail(i - 2)["template"].as_str().is_some_and(|t| t.starts_with("Enhance"));
                if !ok {
                    return Err(format!("preview image at seq {} not preceded by an enhancement", r.seq));
                }
            }
            "generate_image" => {
                let ok = i >= 2
                    && events[i - 1].kind == "complete_structured"
                    && detail(i - 1)["template"] == "DesignIntegrator"
                    && detail(i - 1)["error"].is_null()
                    && events[i - 2].kind == "render_prompt"
                    && detail(i - 2)["template"] == "DesignIntegrator";
                if !ok {
                    return Err(format!("final image at seq {} not preceded by the integrator", r.seq));
                }
            }
            "card_updated" | "card_added" if detail(i)["card"]["type"] == "text" => {
                let card = &detail(i)["card"];
                if !card["enhanced_prompt"].is_null() || !card["preview_ref"].is_null() {
                    return Err(format!("text card enhanced at seq {}", r.seq));
                }
            }
            _ => {}
        }
    }
    Ok(())
}
