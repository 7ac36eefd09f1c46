pub mod error;
pub mod rat;
pub mod rng;
pub mod graph;
pub mod polymer;
pub mod hardcore;
pub mod containers;
pub mod fptas;
pub mod cli;
