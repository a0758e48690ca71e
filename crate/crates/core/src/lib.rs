pub mod config;
pub mod eval;
pub mod graph;
pub mod mcts;
pub mod net;
pub mod sim;
pub mod tensor;
pub mod train;
