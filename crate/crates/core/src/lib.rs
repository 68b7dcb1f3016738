pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod montecarlo;
pub mod params;
pub mod protocols;
pub mod readout;
pub mod state;
