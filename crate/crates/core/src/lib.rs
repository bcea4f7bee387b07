//! Hybrid quantum-classical Markov chain Monte Carlo for fair sampling of
//! degenerate ground states.
//!
//! The crate bundles everything needed to compare quantum-proposal MCMC
//! samplers against quantum heuristics and classical baselines:
//!
//! * [`ising`]: k-body Ising energy functions over bit-packed spin configurations.
//! * [`sat`]: CNF formulas, DIMACS I/O, random k-SAT generation, exact enumeration
//!   and the clause-penalty mapping to Ising models.
//! * [`qsim`]: dense statevector simulation (QAOA layers, fixed-Hamiltonian
//!   Trotter evolution, annealing integration).
//! * [`qaoa`]: parameter schedules, expectation values and quasi-Newton optimization.
//! * [`made`]: masked autoregressive density estimator used as a learned proposal.
//! * [`mcmc`]: Metropolis-Hastings engine with pluggable proposal kernels.
//! * [`baselines`]: parallel tempering with Houdayer cluster moves and WalkSAT.
//! * [`metrics`]: ground-state histograms, fairness ratios and enumeration step counts.
//! * [`experiment`]: configuration-driven pipelines that write self-describing
//!   result directories.
//!
//! Data-parallel loops go through [`exec`]; disabling the default `parallel`
//! feature swaps rayon for plain sequential iteration with identical results.

pub mod baselines;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod fixtures;
pub mod ising;
pub mod made;
pub mod mcmc;
pub mod metrics;
pub mod optim;
pub mod qaoa;
pub mod qsim;
pub mod sat;
pub mod validate;

pub use error::{Error, Result};
pub use ising::{IsingModel, IsingTerm, SpinConfig, Temperature};
