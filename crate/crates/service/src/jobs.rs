//! Background job registry for long-running pipeline calls.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use crate::error::ApiError;

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Extract,
    RecommendRequirements,
    RecommendElements,
    EnhancePreview,
    Integrate,
    RegenerateDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub session_id: String,
    pub state: JobState,
    /// Serialized return value of the operation once `done`.
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub error: Option<ApiError>,
}

/// In-memory job table plus a bounded worker pool. Jobs run on the blocking
/// thread pool since the pipeline itself is synchronous.
pub struct JobRegistry {
    jobs: Mutex<HashMap<String, JobHandle>>,
    permits: Arc<Semaphore>,
}

impl Default for JobRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_WORKERS)
    }
}

impl JobRegistry {
    pub fn new(workers: usize) -> Self {
        Self { jobs: Mutex::new(HashMap::new()), permits: Arc::new(Semaphore::new(workers.max(1))) }
    }

    pub fn get(&self, job_id: &str) -> Option<JobHandle> {
        self.jobs.lock().unwrap().get(job_id).cloned()
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobHandle)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(job_id) {
            f(job);
        }
    }

    /// Queues `work` and returns its handle immediately. Must be called
    /// from within a tokio runtime.
    pub fn submit<F>(self: &Arc<Self>, kind: JobKind, session_id: &str, work: F) -> JobHandle
    where
        F: FnOnce() -> Result<Value, ApiError> + Send + 'static,
    {
        let handle = JobHandle {
            job_id: format!("job-{}", uuid::Uuid::new_v4().simple()),
            kind,
            session_id: session_id.to_owned(),
            state: JobState::Queued,
            result: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(handle.job_id.clone(), handle.clone());
        let registry = Arc::clone(self);
        let job_id = handle.job_id.clone();
        tokio::spawn(async move {
            let Ok(_permit) = registry.permits.clone().acquire_owned().await else { return };
            registry.update(&job_id, |j| j.state = JobState::Running);
            let outcome = tokio::task::spawn_blocking(work).await.unwrap_or_else(|e| {
                Err(ApiError::new(
                    axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    format!("job panicked: {e}"),
                ))
            });
            registry.update(&job_id, |j| match outcome {
                Ok(value) => {
                    j.state = JobState::Done;
                    j.result = Some(value);
                }
                Err(err) => {
                    tracing::warn!(job = %j.job_id, code = %err.code, "job failed");
                    j.state = JobState::Failed;
                    j.error = Some(err);
                }
            });
        });
        handle
    }
}
