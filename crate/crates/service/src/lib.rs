//! HTTP API and command-line front end for the brief-to-design pipeline.
//!
//! Long-running operations (LLM and image calls) return a [`jobs::JobHandle`]
//! with status 202; clients poll `GET /jobs/{job_id}` until it is `done` or
//! `failed`. Everything else answers synchronously.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;

pub use api::{router, AppState};
pub use error::ApiError;
