pub mod agents;
pub mod env;
pub mod experiment;
pub mod params;
pub mod schema;
pub mod runner;
pub mod herd;
pub mod reports;
pub mod service;
