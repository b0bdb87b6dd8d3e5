pub mod features;
pub mod kgraph;
pub mod rfpa;
pub mod scoring;
pub mod synth;
pub mod pipeline;
