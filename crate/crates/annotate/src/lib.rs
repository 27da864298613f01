//! Annotation service: hands comparison pairs to annotators, three per pair,
//! and records their judgments in an append-only log.
//!
//! Endpoints:
//!
//! - `GET /api/tasks/next?annotator=ID` returns a task, or 204 when nothing is left
//! - `POST /api/annotations` records a judgment (201)
//! - `GET /api/progress`
//! - `GET /api/results` returns the aggregate table over complete pairs

pub mod server;
pub mod store;

pub use server::{router, serve, ServerOptions, SharedStore};
pub use store::{
    load_pairs, system_clock, Clock, Progress, Store, StoreConfig, StoreError, Submission, Task, TaskMode,
    TaskResponse,
};
