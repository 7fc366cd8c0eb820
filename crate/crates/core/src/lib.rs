pub mod assignment;
pub mod config;
pub mod corpus;
pub mod scoring;
pub mod stats;
pub mod experiment;
