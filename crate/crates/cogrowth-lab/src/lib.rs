//! Computational laboratory for random walks, hitting measures and growth
//! exponents on free groups and free products.

pub mod annulus;
pub mod budget;
pub mod cli;
pub mod error;
pub mod freeproduct;
pub mod rng;
pub mod srs;
pub mod subgroup;
pub mod walk;
pub mod word;
