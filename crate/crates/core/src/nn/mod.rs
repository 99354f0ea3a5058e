//! Small neural-network substrate with exact analytic gradients.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod net;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use net::{EncoderKind, MemoryKind, MemoryState, NetSpec, PolicyInput, PolicyNet, StepCache, StepOutput};
pub use params::ParameterSet;

#[cfg(test)]
mod gradcheck;
