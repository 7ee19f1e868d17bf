//! Core of the brief-to-design pipeline.
//!
//! A free-text design brief is structured into eight requirement fields,
//! expanded into per-type element cards with enhanced prompts and preview
//! images, and finally merged composition-first into a single integrated
//! prompt that drives the final image generation.
//!
//! - [`domain`]: value types shared by every other module.
//! - [`prompts`]: strict rendering of the LLM prompt templates.
//! - [`providers`]: chat/image/embedding interfaces plus deterministic mocks.
//! - [`pipeline`]: the three-step workflow over a [`domain::Session`].
//! - [`analytics`]: diversity and timing metrics.
//! - [`store`]: file-system persistence, event log and session bundles.

pub mod analytics;
pub mod config;
pub mod domain;
pub mod events;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod store;

pub use domain::{
    DomainError, ElementCard, ElementType, RequirementCardSet, RequirementEntry, RequirementField, SelectionSet,
    Session,
};
pub use pipeline::{AutoConfig, Engine, PipelineConfig, PipelineError};
