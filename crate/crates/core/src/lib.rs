pub mod enhancer;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;
