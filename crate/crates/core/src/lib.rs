pub mod align;
pub mod eval;
pub mod frontend;
pub mod lattice;
pub mod pdg;
pub mod refine;
pub mod synth;
pub mod uapdg;
