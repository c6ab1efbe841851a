//! A round-accounted simulator for the Broadcast CONGEST and Broadcast
//! Congested Clique models, together with the algorithm stack that runs on
//! it: probabilistic spanners, spectral sparsifiers, preconditioned
//! Laplacian/SDD solvers, an interior-point LP solver, and exact min-cost
//! max-flow.

pub mod graph;
pub mod lapsolve;
pub mod lpsolve;
pub mod mcmf;
pub mod netsim;
pub mod spanner;
pub mod sparsify;
