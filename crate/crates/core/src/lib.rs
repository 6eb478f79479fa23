//! Pulsating traveling waves of KPP-type reaction–diffusion equations in periodic media:
//! principal eigenvalues, the dispersion relation and minimal speed, front simulation,
//! and stability-rate experiments.

pub mod discretization;
pub mod grid;
pub mod linalg;
pub mod medium;
pub mod report;
pub mod spectral;
pub mod dispersion;
pub mod optimize;
pub mod evolution;
pub mod waves;
pub mod experiments;
pub mod config;
pub mod cli;
