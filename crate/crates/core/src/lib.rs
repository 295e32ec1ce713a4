//! Personalized picture-book episodes about a child's low-preference foods,
//! the rules that gate them, and the family loop that connects reading,
//! meals, feedback and behavior-informed endings.

pub mod config;
pub mod demo;
pub mod domain;
pub mod engine;
pub mod pipeline;
pub mod session;
pub mod store;
pub mod validate;
