pub mod core;
pub mod engine;
pub mod hard_example;
pub mod error;
pub mod linear_sa;
pub mod bounds;
pub mod moreau;
pub mod rl;
pub mod verify;
pub mod cli;
