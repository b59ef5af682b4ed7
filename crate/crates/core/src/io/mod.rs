//! Dataset ingestion, map persistence and export, evaluation, run harness.

pub mod bvh;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod export;
pub mod mapfile;
pub mod mesh;
pub mod ply;
pub mod report;
pub mod run;
pub mod synthetic;
