pub mod corpus;
pub mod eval;
pub mod tiles;
pub mod train;
