pub mod ablation;
pub mod autodiff;
pub mod boundary;
pub mod geom;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod recover;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
