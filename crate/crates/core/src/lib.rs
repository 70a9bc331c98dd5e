pub mod network;
pub mod control;
pub mod cascade;
pub mod dynamics;
pub mod partition;
pub mod case_io;
pub mod harness;
