//! Multi-agent LLM orchestration over a relevance-ranked communication graph.
//!
//! A run selects the agents best suited to a query, collects their initial
//! answers, lets them score each other, prunes and orders the resulting
//! graph, passes messages along it in both directions and pools the refined
//! answers into one.

pub mod backend;
pub mod bench;
pub mod edge_sampling;
pub mod error;
pub mod exec;
pub mod graph;
pub mod message_passing;
pub mod node_sampling;
pub mod pooling;
pub mod query;
pub mod registry;
pub mod response;
pub mod pipeline;
pub mod trace;
