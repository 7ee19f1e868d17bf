mod support;

use b2d_core::domain::{CardStatus, ElementType, RequirementField};
use b2d_core::providers::mock::MockCall;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_sequences_respect_ordering() {
    let h = support::harness(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        h.mock.clear_calls();
        let id = support::random_session(&h, &mut rng, 20).unwrap();
        let events = h.engine.events(&id).unwrap();
        support::check_ordering(&events).unwrap();
        let image_events = events.iter().filter(|r| r.kind == "generate_image").count();
        assert_eq!(h.mock.image_calls(), image_events);
    }
}

#[test]
fn extraction_on_t2_fills_deliverable_format() {
    let h = support::harness(0);
    let s = h.engine.create_session(support::BRIEFS[1].1, "English", Default::default()).unwrap();
    let cards = h.engine.extract_requirements(&s.id, None).unwrap();
    assert!(!cards.entries(RequirementField::DeliverableFormat).is_empty());
    let again = h.engine.create_session(support::BRIEFS[1].1, "English", Default::default()).unwrap();
    let cards2 = h.engine.extract_requirements(&again.id, None).unwrap();
    let texts = |c: &b2d_core::RequirementCardSet| c.iter().map(|e| (e.field, e.text.clone())).collect::<Vec<_>>();
    assert_eq!(texts(&cards), texts(&cards2));
    assert!(h.engine.session(&s.id).unwrap().deliverable_context.deliverable_format.is_some());
}

#[test]
fn extra_recommendation_passes_prior_prompts() {
    let h = support::harness(0);
    let s = h.engine.create_session("brief", "English", Default::default()).unwrap();
    let first = h.engine.recommend_elements(&s.id, ElementType::Object, 4).unwrap();
    assert_eq!(first.len(), 4);
    h.mock.clear_calls();
    let second = h.engine.recommend_elements(&s.id, ElementType::Object, 4).unwrap();
    let MockCall::Chat { prompt, .. } = &h.mock.calls()[0] else { panic!("expected a chat call") };
    for c in &first {
        assert!(prompt.contains(&format!("- {}", c.rough_prompt)));
    }
    assert!(second.iter().all(|c| !first.iter().any(|f| f.rough_prompt == c.rough_prompt)));
    let texts = h.engine.recommend_elements(&s.id, ElementType::Text, 3).unwrap();
    assert!(texts.iter().all(|c| b2d_core::domain::parse_text_entry(&c.rough_prompt).is_ok()));
}

#[test]
fn failed_previews_are_retained_and_retryable() {
    use std::sync::atomic::Ordering::Relaxed;
    let h = support::harness(0);
    let s = h.engine.create_session("brief", "English", Default::default()).unwrap();
    h.mock.faults.image_transport.store(true, Relaxed);
    let cards = h.engine.recommend_and_preview(&s.id, ElementType::Background, 2).unwrap();
    assert!(cards.iter().all(|c| c.status == CardStatus::Failed && c.error.is_some()));
    h.mock.faults.image_transport.store(false, Relaxed);
    let fixed = h.engine.enhance_and_preview(&s.id, &cards[0].id).unwrap();
    assert_eq!(fixed.status, CardStatus::Previewed);
    assert!(fixed.error.is_none());
}
