pub mod cli;
pub mod datasets;
pub mod evalsvc;
pub mod nets;
pub mod replearn;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod videoio;
