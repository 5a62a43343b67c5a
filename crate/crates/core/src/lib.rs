pub mod biscsm;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod training;
