pub mod domain;
pub mod gateway;
pub mod jsonl;
pub mod dialogue;
pub mod metrics;
pub mod synthetic;
pub mod analysis;
pub mod store;
pub mod pool;
pub mod forge;
pub mod report;
pub mod runner;
