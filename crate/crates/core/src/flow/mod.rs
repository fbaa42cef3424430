//! Optical flow and flow-stack construction for the motion stream.

mod cache;
mod stack;
mod tvl1;

pub use cache::FlowCache;
pub use stack::{consecutive_flows, stack_flows, stack_from_pairs, FlowStack};
pub use tvl1::{tvl1_flow, tvl1_flow_traced, EnergyTrace, FlowField, FlowParams};
