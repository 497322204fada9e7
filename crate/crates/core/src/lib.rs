pub mod env_model;
pub mod error;
pub mod lattice;
pub mod rng;
pub mod stats;
pub mod walk_sim;
pub mod exact_quenched;
pub mod renewal;
pub mod oned;
pub mod ballisticity;
pub mod ldp_rate;
pub mod harness;
