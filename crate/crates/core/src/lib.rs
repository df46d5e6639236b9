pub mod eval;
pub mod geom;
pub mod mapping;
pub mod obs;
pub mod percept;
pub mod plan;
pub mod qnet;
pub mod sim;
pub mod train;
