//! Hierarchical multi-agent navigation: a manager plans centrally, conductors
//! and their sub-agent groups execute locally, all over a seeded grid world.

pub mod geometry;
pub mod goal;
pub mod ids;
pub mod map;
pub mod rng;
pub mod world;
pub mod memory;
pub mod mlm;
pub mod comms;
pub mod platform;
pub mod hierarchy;
pub mod tasks;
