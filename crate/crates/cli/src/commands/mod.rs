pub mod data;
pub mod eval;
pub mod gen;
pub mod model;
pub mod reconstruct;
pub mod train;
