//! Deterministic offline providers.
//!
//! Outputs are pure functions of the rendered prompt variables and the
//! configured seed, so whole pipeline runs are reproducible byte for byte.
//!
//! Chat rules:
//! - extraction: the brief is split into sentences and sentence `j` goes to
//!   field `j mod 8` in canonical order;
//! - requirement candidates: `mock-<abbr>-<i>` for `i = 1..=n`;
//! - element candidates: `mock-<Type>-<i>: <first 6 requirement words>`,
//!   numbered after the existing rough prompts; Text candidates are
//!   `<Role>: mock-Text-<i> <words>`;
//! - enhancement: `ENHANCED[<kind>]: <rough prompt>`;
//! - integration: `COMPOSITION: .. | BACKGROUND: .. | TEXTS: .. | TYPOGRAPHY: .. | OBJECT: ..`.
//!
//! Images are 8x8 tile mosaics coloured from `sha256(seed, prompt, size, nonce)`.
//! Text embeddings hash whitespace tokens into [`MOCK_EMBED_DIMS`] buckets.

use std::io::Cursor;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageBuffer, ImageEncoder, Rgb};
use parking_lot::Mutex;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{
    ChatModel, Embedder, EmbeddingVector, GeneratedImage, ImageModel, ProviderError, SchemaId, StructuredSchema,
};
use crate::domain::{ElementType, RequirementField};
use crate::prompts::{PromptTemplateKind, RenderedPrompt, EMPTY_FIELD_MARKER};

pub const MOCK_EMBED_DIMS: usize = 64;
pub const MOCK_DIGEST_WORDS: usize = 6;
pub const MOCK_TEXT_ROLES: [&str; 4] = ["Headline", "Subheadline", "Body", "Call to Action"];
const TILES: u32 = 8;

/// Short code used in mock requirement candidates.
pub fn field_abbreviation(field: RequirementField) -> &'static str {
    match field {
        RequirementField::DeliverableFormat => "df",
        RequirementField::BusinessContext => "bc",
        RequirementField::TargetAudience => "ta",
        RequirementField::CreativeDirection => "cd",
        RequirementField::ToneAndManner => "tm",
        RequirementField::KeywordsAndMotifs => "km",
        RequirementField::DesignSpecifications => "ds",
        RequirementField::Restrictions => "rs",
    }
}

/// Splits a brief into sentence-like fragments carrying at least one
/// alphanumeric character.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', '\n', '。'])
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .map(|s| s.trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace()).to_owned())
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

/// Bucket index of a whitespace token in the mock text embedding.
pub fn token_bucket(token: &str) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (head % MOCK_EMBED_DIMS as u64) as usize
}

/// Digest that determines the pixels of a mock image.
pub fn image_digest(seed: u64, prompt: &str, width: u32, height: u32, nonce: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update((prompt.len() as u64).to_be_bytes());
    h.update(prompt.as_bytes());
    h.update(width.to_be_bytes());
    h.update(height.to_be_bytes());
    h.update(nonce.to_be_bytes());
    h.finalize().into()
}

fn tile_palette(digest: [u8; 32]) -> Vec<[u8; 3]> {
    let mut bytes = Vec::with_capacity(192);
    let mut block = digest;
    while bytes.len() < (TILES * TILES * 3) as usize {
        bytes.extend_from_slice(&block);
        block = Sha256::digest(block).into();
    }
    bytes.chunks_exact(3).take((TILES * TILES) as usize).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Renders the mosaic for `digest` as PNG bytes.
pub fn render_mosaic(digest: [u8; 32], width: u32, height: u32) -> Vec<u8> {
    let palette = tile_palette(digest);
    let img = ImageBuffer::from_fn(width, height, |x, y| {
        let tx = (x as u64 * TILES as u64 / width as u64) as usize;
        let ty = (y as u64 * TILES as u64 / height as u64) as usize;
        Rgb(palette[ty * TILES as usize + tx])
    });
    let mut out = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::NoFilter)
        .write_image(img.as_raw(), width, height, image::ExtendedColorType::Rgb8)
        .expect("in-memory png encoding");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockCall {
    Chat { template: PromptTemplateKind, schema: SchemaId, prompt: String },
    Image { prompt: String, width: u32, height: u32, nonce: u64 },
    EmbedText { text: String },
    EmbedImage { bytes: usize },
}

/// Switches for fault injection. All default to off.
#[derive(Debug, Default)]
pub struct MockFaults {
    /// Chat returns payloads that fail schema validation.
    pub chat_schema: AtomicBool,
    /// Chat fails with a transport error.
    pub chat_transport: AtomicBool,
    /// Image generation fails with a transport error.
    pub image_transport: AtomicBool,
    /// Embedding fails with a transport error.
    pub embed_transport: AtomicBool,
}

pub struct MockProviders {
    seed: u64,
    pub faults: MockFaults,
    latency_ms: AtomicU64,
    calls: Mutex<Vec<MockCall>>,
}

impl MockProviders {
    pub fn new(seed: u64) -> Self {
        Self { seed, faults: MockFaults::default(), latency_ms: AtomicU64::new(0), calls: Mutex::new(Vec::new()) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Simulated latency added to every call.
    pub fn set_latency(&self, ms: u64) {
        self.latency_ms.store(ms, Ordering::Relaxed);
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().clone()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().clear();
    }

    pub fn image_calls(&self) -> usize {
        self.calls.lock().iter().filter(|c| matches!(c, MockCall::Image { .. })).count()
    }

    fn record(&self, call: MockCall) {
        self.calls.lock().push(call);
        let ms = self.latency_ms.load(Ordering::Relaxed);
        if ms > 0 {
            thread::sleep(Duration::from_millis(ms));
        }
    }

    fn respond(&self, prompt: &RenderedPrompt, schema: &StructuredSchema) -> Result<Value, ProviderError> {
        let var = |name: &str| {
            prompt
                .var(name)
                .ok_or_else(|| ProviderError::InvalidInput(format!("mock chat: prompt has no {name} variable")))
        };
        match schema.id {
            SchemaId::ExtractedRequirements => {
                let mut fields: Map<String, Value> =
                    RequirementField::ALL.iter().map(|f| (f.key().to_owned(), json!([]))).collect();
                for (j, sentence) in split_sentences(var("user_input")?).into_iter().enumerate() {
                    let key = RequirementField::ALL[j % RequirementField::ALL.len()].key();
                    fields[key].as_array_mut().expect("array").push(json!(sentence));
                }
                Ok(Value::Object(fields))
            }
            SchemaId::RequirementCandidates => {
                let field: RequirementField =
                    var("target_field")?.parse().map_err(|e| ProviderError::InvalidInput(format!("{e}")))?;
                let n = expected(schema)?;
                let candidates: Vec<Value> = (1..=n)
                    .map(|i| {
                        json!({
                            "value": format!("mock-{}-{i}", field_abbreviation(field)),
                            "reasoning": format!("mock recommendation {i} for {}", field.label()),
                            "influencing_fields": [field.key()],
                        })
                    })
                    .collect();
                Ok(json!({ "candidates": candidates }))
            }
            SchemaId::ElementCandidates => {
                let ty: ElementType =
                    var("element_type")?.parse().map_err(|e| ProviderError::InvalidInput(format!("{e}")))?;
                let n = expected(schema)?;
                let requirements = var("requirements_text")?;
                let words = requirement_words(requirements);
                let influencing = populated_fields(requirements);
                let offset = var("predetermined_section")?.lines().filter(|l| l.starts_with("- ")).count();
                let candidates: Vec<Value> = (offset + 1..=offset + n)
                    .map(|i| {
                        let value = match ty {
                            ElementType::Text => {
                                let role = MOCK_TEXT_ROLES[(i - 1) % MOCK_TEXT_ROLES.len()];
                                format!("{role}: mock-Text-{i} {words}")
                            }
                            _ => format!("mock-{}-{i}: {words}", ty.label()),
                        };
                        json!({
                            "value": value,
                            "reasoning": format!("mock {} candidate {i}", ty.label()),
                            "influencing_fields": influencing,
                        })
                    })
                    .collect();
                Ok(json!({ "element_type": ty.label(), "candidates": candidates }))
            }
            SchemaId::EnhancedLine => {
                let rough = join_newline_runs(var("rough_prompt")?, " ");
                Ok(json!({ "text": format!("ENHANCED[{}]: {rough}", prompt.kind.name()) }))
            }
            SchemaId::IntegratedParagraph => {
                let sections: Vec<String> = var("selected_elements")?
                    .trim_start_matches('\n')
                    .split("\n\n")
                    .filter_map(|block| {
                        let (header, body) = block.split_once('\n')?;
                        let label = header.trim().trim_start_matches('[').trim_end_matches(']');
                        let name = if label == "Text" { "TEXTS".to_owned() } else { label.to_uppercase() };
                        Some(format!("{name}: {}", join_newline_runs(body, " ")))
                    })
                    .collect();
                Ok(json!({ "text": sections.join(" | ") }))
            }
        }
    }
}

fn expected(schema: &StructuredSchema) -> Result<usize, ProviderError> {
    schema.expected_len.ok_or_else(|| ProviderError::InvalidInput("candidate schema without a length".into()))
}

/// Replaces every run of newline characters with `sep`.
fn join_newline_runs(s: &str, sep: &str) -> String {
    s.split(['\n', '\r']).filter(|p| !p.is_empty()).collect::<Vec<_>>().join(sep)
}

/// First words of the serialized requirement entries, in field order.
pub fn requirement_words(requirements_text: &str) -> String {
    let words: Vec<&str> = requirements_text
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .flat_map(str::split_whitespace)
        .take(MOCK_DIGEST_WORDS)
        .collect();
    if words.is_empty() {
        "general design".to_owned()
    } else {
        words.join(" ")
    }
}

fn populated_fields(requirements_text: &str) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut current = None;
    for line in requirements_text.lines() {
        if let Some(label) = line.strip_suffix(':') {
            current = label.parse::<RequirementField>().ok();
        } else if line.starts_with("- ") && line != EMPTY_FIELD_MARKER {
            if let Some(f) = current.take() {
                out.push(f.key());
            }
        }
    }
    out
}

impl ChatModel for MockProviders {
    fn complete(&self, prompt: &RenderedPrompt, schema: &StructuredSchema) -> Result<Value, ProviderError> {
        self.record(MockCall::Chat { template: prompt.kind, schema: schema.id, prompt: prompt.text.clone() });
        if self.faults.chat_transport.load(Ordering::Relaxed) {
            return Err(ProviderError::Transport("mock transport fault".into()));
        }
        if self.faults.chat_schema.load(Ordering::Relaxed) {
            return Ok(json!({ "mock_fault": true }));
        }
        self.respond(prompt, schema)
    }
}

impl ImageModel for MockProviders {
    fn generate(&self, prompt: &str, width: u32, height: u32, nonce: u64) -> Result<GeneratedImage, ProviderError> {
        self.record(MockCall::Image { prompt: prompt.to_owned(), width, height, nonce });
        if prompt.trim().is_empty() || width == 0 || height == 0 {
            return Err(ProviderError::InvalidInput("image prompt must be non-empty with positive size".into()));
        }
        if self.faults.image_transport.load(Ordering::Relaxed) {
            return Err(ProviderError::Transport("mock image fault".into()));
        }
        let digest = image_digest(self.seed, prompt, width, height, nonce);
        Ok(GeneratedImage {
            bytes: render_mosaic(digest, width, height),
            media_type: "image/png".into(),
            width,
            height,
        })
    }
}

impl Embedder for MockProviders {
    fn dims(&self) -> usize {
        MOCK_EMBED_DIMS
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.record(MockCall::EmbedText { text: text.to_owned() });
        if self.faults.embed_transport.load(Ordering::Relaxed) {
            return Err(ProviderError::Transport("mock embed fault".into()));
        }
        let mut counts = vec![0.0; MOCK_EMBED_DIMS];
        for token in text.split_whitespace() {
            counts[token_bucket(token)] += 1.0;
        }
        EmbeddingVector::new(counts).map_err(|_| ProviderError::InvalidInput("cannot embed empty text".into()))
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, ProviderError> {
        self.record(MockCall::EmbedImage { bytes: bytes.len() });
        if self.faults.embed_transport.load(Ordering::Relaxed) {
            return Err(ProviderError::Transport("mock embed fault".into()));
        }
        let img = image::load_from_memory(bytes)
            .map_err(|e| ProviderError::InvalidInput(format!("cannot decode image: {e}")))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let mut sums = vec![0.0f64; MOCK_EMBED_DIMS];
        let mut counts = vec![0u64; MOCK_EMBED_DIMS];
        for (x, y, p) in img.enumerate_pixels() {
            let tx = (x as u64 * TILES as u64 / w as u64) as usize;
            let ty = (y as u64 * TILES as u64 / h as u64) as usize;
            let idx = ty * TILES as usize + tx;
            sums[idx] += p.0[0] as f64;
            counts[idx] += 1;
        }
        // Offset keeps all-black images embeddable.
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 / 255.0 } + 1.0 / 255.0)
            .collect();
        EmbeddingVector::new(means)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RequirementCardSet;
    use crate::prompts::{render_element_recommender, render_requirement_recommender};
    use rand::{Rng, SeedableRng};

    fn chat(mock: &MockProviders, p: &RenderedPrompt, s: StructuredSchema) -> Value {
        let v = mock.complete(p, &s).unwrap();
        s.validate(&v).unwrap();
        v
    }

    #[test]
    fn element_candidates_follow_the_numbering_rule() {
        let mock = MockProviders::new(7);
        let date = chrono::NaiveDate::from_ymd_opt(2025, 10, 1).unwrap();
        let p =
            render_element_recommender(ElementType::Object, 3, "en", date, &RequirementCardSet::new(), &[]).unwrap();
        let v = chat(&mock, &p, StructuredSchema::element_candidates(3));
        let values: Vec<_> = v["candidates"].as_array().unwrap().iter().map(|c| c["value"].as_str().unwrap()).collect();
        assert_eq!(
            values,
            ["mock-Object-1: general design", "mock-Object-2: general design", "mock-Object-3: general design"]
        );
        let prior: Vec<String> = values.iter().map(|s| s.to_string()).collect();
        let p =
            render_element_recommender(ElementType::Text, 2, "en", date, &RequirementCardSet::new(), &prior).unwrap();
        let v = chat(&mock, &p, StructuredSchema::element_candidates(2));
        assert_eq!(v["candidates"][0]["value"], "Call to Action: mock-Text-4 general design");
        assert_eq!(v["candidates"][1]["value"], "Headline: mock-Text-5 general design");
    }

    #[test]
    fn requirement_candidates_use_field_abbreviation() {
        let mock = MockProviders::new(0);
        let p =
            render_requirement_recommender(2, "en", &RequirementCardSet::new(), RequirementField::TargetAudience, "d")
                .unwrap();
        let v = chat(&mock, &p, StructuredSchema::requirement_candidates(2));
        assert_eq!(v["candidates"][0]["value"], "mock-ta-1");
        assert_eq!(v["candidates"][1]["value"], "mock-ta-2");
    }

    #[test]
    fn requirement_words_take_first_six_entry_words() {
        let text = "\nDeliverable Format:\n- vertical poster for\n\nTarget Audience:\n(none)\n\nTone and Manner:\n- warm friendly clean look";
        assert_eq!(requirement_words(text), "vertical poster for warm friendly clean");
        assert_eq!(populated_fields(text), vec!["deliverable_format", "tone_and_manner"]);
    }

    #[test]
    fn sentences_round_robin() {
        assert_eq!(split_sentences("One two. \"Three!\" Four?\n\n. 'Five'"), vec!["One two", "Three", "Four", "Five"]);
    }

    #[test]
    fn images_are_deterministic_and_sized() {
        let mock = MockProviders::new(42);
        let a = mock.generate("p", 512, 768, 0).unwrap();
        let b = mock.generate("p", 512, 768, 0).unwrap();
        assert_eq!(a, b);
        let decoded = image::load_from_memory(&a.bytes).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (512, 768));
        // Pixels are a function of the digest: re-derive the top-left tile.
        let palette = tile_palette(image_digest(42, "p", 512, 768, 0));
        assert_eq!(decoded.to_rgb8().get_pixel(0, 0).0, palette[0]);
        assert_eq!(decoded.to_rgb8().get_pixel(511, 767).0, palette[63]);
        assert_ne!(mock.generate("p", 512, 768, 1).unwrap().bytes, a.bytes);
        assert_ne!(MockProviders::new(43).generate("p", 512, 768, 0).unwrap().bytes, a.bytes);
        assert!(mock.generate("p", 0, 768, 0).is_err());
    }

    #[test]
    fn text_embeddings_match_hand_counts() {
        let mock = MockProviders::new(0);
        let v = mock.embed_text("a b a").unwrap();
        let mut expected = vec![0.0; MOCK_EMBED_DIMS];
        expected[token_bucket("a")] += 2.0;
        expected[token_bucket("b")] += 1.0;
        let norm = (expected.iter().map(|x| x * x).sum::<f64>()).sqrt();
        for (got, want) in v.values().iter().zip(expected) {
            assert!((got - want / norm).abs() < 1e-15);
        }
        assert_eq!(mock.embed_text("a").unwrap(), mock.embed_text("a").unwrap());
        assert!(mock.embed_text("   ").is_err());
    }

    #[test]
    fn random_text_embeddings_are_unit_norm_with_fixed_dims() {
        let mock = MockProviders::new(0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let len = rng.random_range(1..40);
            let s: String = (0..len)
                .map(|_| if rng.random_bool(0.2) { ' ' } else { rng.random_range(b'a'..=b'z') as char })
                .collect::<String>()
                + "x";
            let v = mock.embed_text(&s).unwrap();
            assert_eq!(v.dims(), 64);
            let norm: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn image_embeddings_distinguish_mosaics() {
        let mock = MockProviders::new(1);
        let a = mock.generate("a", 64, 64, 0).unwrap();
        let b = mock.generate("b", 64, 64, 0).unwrap();
        let ea = mock.embed_image(&a.bytes).unwrap();
        assert_eq!(ea.dims(), MOCK_EMBED_DIMS);
        assert_eq!(ea, mock.embed_image(&a.bytes).unwrap());
        assert_ne!(ea, mock.embed_image(&b.bytes).unwrap());
        assert!(mock.embed_image(b"not an image").is_err());
    }

    #[test]
    fn faults_are_injectable() {
        let mock = MockProviders::new(0);
        mock.faults.image_transport.store(true, Ordering::Relaxed);
        assert!(matches!(mock.generate("p", 8, 8, 0), Err(ProviderError::Transport(_))));
        assert_eq!(mock.image_calls(), 1);
    }
}
