//! Physical-layer security workbench for cooperative friendly jamming.
//!
//! A small wireless simulator (path loss, Rayleigh block fading, SINR),
//! secrecy metrics, an RL environment over per-AP transmit powers, and three
//! off-policy optimizers: a mixture-of-experts diffusion policy, a plain
//! diffusion policy and DDPG. A brute-force grid search over static power
//! allocations serves as ground truth on a frozen channel.

pub mod channel;
pub mod config;
pub mod critic;
pub mod diffusion;
pub mod env;
pub mod gradcheck;
pub mod moe;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod secrecy;
pub mod sweep;
pub mod trainer;
