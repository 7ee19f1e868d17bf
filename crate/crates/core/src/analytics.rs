//! Diversity and timing metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Session;
use crate::events::{EventRecord, SessionEvent};
use crate::providers::{Embedder, EmbeddingVector, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// `1 - cos(u, v)` on unit vectors, in `[0, 2]`. Identical vectors give
/// exactly 0.
pub fn pairwise_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, AnalyticsError> {
    if u.dims() != v.dims() {
        return Err(AnalyticsError::DimensionMismatch(u.dims(), v.dims()));
    }
    if u.values() == v.values() {
        return Ok(0.0);
    }
    let cos: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    Ok((1.0 - cos.clamp(-1.0, 1.0)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub id_a: String,
    pub id_b: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub item_count: usize,
    pub pair_count: usize,
    pub mean_pairwise_distance: f64,
    pub per_pair: Vec<PairDistance>,
}

/// Mean distance over all unordered pairs; items are labelled by index.
pub fn diversity(vectors: &[EmbeddingVector]) -> Result<DiversityReport, AnalyticsError> {
    let labels: Vec<String> = (0..vectors.len()).map(|i| i.to_string()).collect();
    diversity_labeled(&labels, vectors)
}

/// Like [`diversity`] with caller-supplied item ids. Pairs are listed in
/// lexicographic index order `(0,1), (0,2), ..., (1,2), ...`.
pub fn diversity_labeled(labels: &[String], vectors: &[EmbeddingVector]) -> Result<DiversityReport, AnalyticsError> {
    assert_eq!(labels.len(), vectors.len(), "one label per vector");
    let n = vectors.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewItems(n));
    }
    let mut per_pair = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            per_pair.push(PairDistance {
                id_a: labels[i].clone(),
                id_b: labels[j].clone(),
                distance: pairwise_distance(&vectors[i], &vectors[j])?,
            });
        }
    }
    let mean = per_pair.iter().map(|p| p.distance).sum::<f64>() / per_pair.len() as f64;
    Ok(DiversityReport { item_count: n, pair_count: per_pair.len(), mean_pairwise_distance: mean, per_pair })
}

pub enum CorpusItem<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

pub fn corpus_diversity(
    labels: &[String],
    items: &[CorpusItem<'_>],
    embedder: &dyn Embedder,
) -> Result<DiversityReport, AnalyticsError> {
    if items.len() < 2 {
        return Err(AnalyticsError::TooFewItems(items.len()));
    }
    let vectors = items
        .iter()
        .map(|item| match item {
            CorpusItem::Text(t) => embedder.embed_text(t),
            CorpusItem::Image(b) => embedder.embed_image(b),
        })
        .collect::<Result<Vec<_>, _>>()?;
    diversity_labeled(labels, &vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub images_generated: usize,
    pub completion_time_s: Option<f64>,
    pub time_per_generation_s: Option<f64>,
}

impl SessionMetrics {
    pub fn new(images_generated: usize, completion_time_s: Option<f64>) -> Self {
        let time_per_generation_s = match (images_generated, completion_time_s) {
            (0, _) | (_, None) => None,
            (n, Some(t)) => Some(t / n as f64),
        };
        Self { images_generated, completion_time_s, time_per_generation_s }
    }
}

/// Completion time runs from session creation to the close event, or to
/// the last design generation while the session is still open.
pub fn session_metrics(session: &Session, events: &[EventRecord]) -> SessionMetrics {
    let end =
        events.iter().rev().find(|r| matches!(r.kind.as_str(), "session_closed" | "design_generated")).and_then(|r| {
            match r.event().ok()? {
                SessionEvent::SessionClosed { closed_at } => Some(closed_at),
                _ => Some(r.timestamp),
            }
        });
    let completion = end.map(|end| (end - session.created_at).num_milliseconds().max(0) as f64 / 1000.0);
    SessionMetrics::new(session.history.len(), completion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    HighPromptHighImage,
    HighPromptLowImage,
    LowPromptHighImage,
    LowPromptLowImage,
}

impl Quadrant {
    pub fn label(self) -> &'static str {
        match self {
            Self::HighPromptHighImage => "high prompt / high image divergence",
            Self::HighPromptLowImage => "high prompt / low image divergence",
            Self::LowPromptHighImage => "low prompt / high image divergence",
            Self::LowPromptLowImage => "low prompt / low image divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantEntry {
    pub id: String,
    pub prompt_distance: f64,
    pub image_distance: f64,
    pub quadrant: Quadrant,
    pub label: String,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Places each `(id, prompt_distance, image_distance)` point relative to the
/// medians of the set; strictly above the median counts as high.
pub fn quadrant_report(points: &[(String, f64, f64)]) -> Vec<QuadrantEntry> {
    if points.is_empty() {
        return Vec::new();
    }
    let prompt_mid = median(&mut points.iter().map(|p| p.1).collect::<Vec<_>>());
    let image_mid = median(&mut points.iter().map(|p| p.2).collect::<Vec<_>>());
    points
        .iter()
        .map(|(id, p, i)| {
            let quadrant = match (*p > prompt_mid, *i > image_mid) {
                (true, true) => Quadrant::HighPromptHighImage,
                (true, false) => Quadrant::HighPromptLowImage,
                (false, true) => Quadrant::LowPromptHighImage,
                (false, false) => Quadrant::LowPromptLowImage,
            };
            QuadrantEntry {
                id: id.clone(),
                prompt_distance: *p,
                image_distance: *i,
                quadrant,
                label: quadrant.label().to_owned(),
            }
        })
        .collect()
}
