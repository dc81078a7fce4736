pub mod command_fsm;
pub mod drone_sim;
pub mod gesture_net;
pub mod handpose;
pub mod session;
