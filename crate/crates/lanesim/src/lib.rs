//! Deterministic simulation of GPU-aware allreduce algorithms on modeled
//! heterogeneous clusters.
//!
//! A cluster is described by a [`topology::TopologySpec`] (nodes, GPUs per
//! node, processes per GPU). Collective algorithms — ring, recursive
//! doubling, reduce-scatter/allgather compositions, node-aware lane
//! variants, and multi-process-per-GPU variants over shared device buffers —
//! are compiled into per-rank message-passing programs
//! ([`collectives`]), executed by a deterministic rendezvous engine
//! ([`simcore`]), and attributed modeled time by a locality-aware
//! latency-bandwidth cost model ([`costmodel`]).
//!
//! The [`runner`] module wires these pieces together: it allocates buffers,
//! runs an algorithm on a topology, and checks the result against a
//! brute-force oracle.

pub mod buffers;
pub mod chunks;
pub mod collectives;
pub mod costmodel;
pub mod runner;
pub mod simcore;
pub mod topology;
