//! Co-simulation workbench for feedback scheduling of multitasking control
//! systems: optimal sampling-period assignment under a CPU utilization
//! budget, a trained neural approximation of the optimizer, and an
//! event-driven kernel that runs the control tasks and the scheduler
//! together against simulated pendulum dynamics.

pub mod cost;
pub mod neural;
pub mod optimizer;
pub mod plant;
pub mod sim;
pub mod task;
