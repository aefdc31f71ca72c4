//! Config-driven front end for the mesh and particle simulators: TOML run
//! configurations, a rate table cache, replica ensembles, and CSV output.

pub mod config;
pub mod driver;
pub mod output;
