//! Evidence-driven Plan-Act-Report agent engine.

pub mod gateway;
pub mod harness;
pub mod engine;
pub mod json;
pub mod memory;
pub mod model;
pub mod retrieval;
pub mod tools;
pub mod trajectory;
