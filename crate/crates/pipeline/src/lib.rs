pub mod commands;
pub mod dataset;
pub mod dims;
pub mod evaluate;
pub mod infer;
pub mod manifest;
pub mod report;
pub mod run;
pub mod seeds;
pub mod synth;
pub mod validation;
