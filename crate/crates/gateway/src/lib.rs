//! HTTP service around the generation engine: document parsing, a job
//! queue with a bounded worker pool, step-preview streaming over
//! server-sent events, and artifact download.

mod api;
mod artifacts;
mod config;
mod error;
mod jobs;

pub use api::{router, serve, IDEMPOTENCY_HEADER};
pub use artifacts::{zip_dir, IMAGE_FILE, PLAIN_IMAGE_FILE, TOKEN_MAP_DIR};
pub use config::{merge_json, GatewayConfig, DATA_DIR_ENV, WORKERS_ENV};
pub use error::ServiceError;
pub use jobs::{
    fixed_engine, toy_engines, EngineFactory, JobId, JobIdGenerator, JobService, JobState, JobView, ResultView,
    StreamEvent,
};
