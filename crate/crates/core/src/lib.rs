pub mod ad;
pub mod deformation;
pub mod energy;
pub mod geometry;
pub mod material;
pub mod simulation;
pub mod training;
