//! Explainable course scheduling.
//!
//! A catalog of courses and degree requirements is compiled into a labeled
//! propositional knowledge base. Schedules are models of that base, and a
//! contrastive question ("why X instead of Y?") is answered either with an
//! alternative schedule or with a subset-minimal set of policy clauses that
//! rules the alternative out, rendered as English.

pub mod catalog;
pub mod encoder;
pub mod evalharness;
pub mod explainer;
pub mod llm_gateway;
pub mod propcore;
pub mod queryparse;
pub mod refiner;
pub mod scheduler;
pub mod service;
