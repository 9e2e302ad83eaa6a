//! Collective algorithms as rank-program generators.
//!
//! Every generator compiles a collective over a communicator (an ordered
//! rank list) into per-rank [`Action`](crate::simcore::Action) sequences.
//! Steps are numbered identically across ranks so one step index names one
//! algorithm round everywhere, and tags carry `(algorithm, stage, step)` so
//! adjacent stages can never match each other's messages.
//!
//! Zero-length chunks are transmitted as zero-length messages rather than
//! skipped, which keeps the per-rank message counts at their closed forms
//! (`2(n-1)` for ring, `log2 n` for recursive doubling) for every buffer
//! size.

mod flat;
mod lane;
mod oracle;
mod ppg;

pub use flat::{
    allgatherv_ring, rabenseifner_allreduce, recursive_doubling_allreduce, reduce_scatter_ring,
    ring_allreduce,
};
pub use lane::lane_allreduce;
pub use oracle::oracle_allreduce;
pub use ppg::{multi_ppg_lane, multi_ppg_standard};

use std::fmt;

use crate::buffers::{BufferError, Region};
use crate::simcore::{Action, RankProgram};

pub use crate::chunks::ChunkPlan;

/// Algorithms that run over a single flat communicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlatAlgorithm {
    Ring,
    RecursiveDoubling,
    Rabenseifner,
}

/// Inner algorithm for the inter-node stage of a lane allreduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneInner {
    Ring,
    RecursiveDoubling,
}

/// Per-member buffer assignment for a flat collective. `scratch` is only
/// required where the algorithm needs receive workspace (recursive
/// doubling, lane inter-node stage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberBufs {
    pub send: Region,
    pub recv: Region,
    pub scratch: Option<Region>,
}

impl MemberBufs {
    pub fn new(send: Region, recv: Region) -> Self {
        Self { send, recv, scratch: None }
    }

    pub fn with_scratch(send: Region, recv: Region, scratch: Region) -> Self {
        Self { send, recv, scratch: Some(scratch) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CollectiveError {
    EmptyCommunicator,
    /// A member passed a view whose length disagrees with the rest of the
    /// communicator.
    ViewLengthMismatch { member: usize, expected: usize, got: usize },
    /// Buffer list length does not match the member list.
    WrongBufCount { members: usize, bufs: usize },
    /// The chunk plan does not describe this communicator and view length.
    PlanMismatch { plan_members: usize, plan_total: usize, members: usize, view_len: usize },
    /// Recursive doubling only runs on power-of-two communicators.
    NotPowerOfTwo { size: usize },
    /// A member needs scratch space it was not given.
    MissingScratch { member: usize, needed: usize },
    /// A generated program addressed a rank outside the world.
    RankBeyondWorld { rank: usize, world_size: usize },
    Buffer(BufferError),
}

impl fmt::Display for CollectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyCommunicator => write!(f, "communicator has no members"),
            Self::ViewLengthMismatch { member, expected, got } => {
                write!(f, "member {member} passed a view of {got} elements, expected {expected}")
            }
            Self::WrongBufCount { members, bufs } => {
                write!(f, "{bufs} buffer assignments for {members} members")
            }
            Self::PlanMismatch { plan_members, plan_total, members, view_len } => write!(
                f,
                "plan for {plan_members} members / {plan_total} elements used with \
                 {members} members / {view_len} elements"
            ),
            Self::NotPowerOfTwo { size } => {
                write!(f, "recursive doubling needs a power-of-two communicator, got {size}")
            }
            Self::MissingScratch { member, needed } => {
                write!(f, "member {member} needs {needed} scratch elements")
            }
            Self::RankBeyondWorld { rank, world_size } => {
                write!(f, "program generated for rank {rank} beyond world size {world_size}")
            }
            Self::Buffer(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CollectiveError {}

impl From<BufferError> for CollectiveError {
    fn from(e: BufferError) -> Self {
        Self::Buffer(e)
    }
}

/// Accumulates per-rank programs as generators emit actions.
#[derive(Debug, Clone, Default)]
pub struct ProgramSet {
    programs: Vec<RankProgram>,
}

impl ProgramSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, rank: usize, action: Action) {
        if rank >= self.programs.len() {
            self.programs.resize_with(rank + 1, Vec::new);
        }
        self.programs[rank].push(action);
    }

    pub fn program(&self, rank: usize) -> &[Action] {
        self.programs.get(rank).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Finalize into one program per world rank (ranks without actions get
    /// empty programs).
    pub fn into_programs(mut self, world_size: usize) -> Result<Vec<RankProgram>, CollectiveError> {
        if self.programs.len() > world_size {
            return Err(CollectiveError::RankBeyondWorld {
                rank: self.programs.len() - 1,
                world_size,
            });
        }
        self.programs.resize_with(world_size, Vec::new);
        Ok(self.programs)
    }
}

/// Validate a communicator/buffer pairing and return the common view length
/// (send and recv regions must all agree).
fn common_view_len(members: &[usize], bufs: &[MemberBufs]) -> Result<usize, CollectiveError> {
    if members.is_empty() {
        return Err(CollectiveError::EmptyCommunicator);
    }
    if members.len() != bufs.len() {
        return Err(CollectiveError::WrongBufCount { members: members.len(), bufs: bufs.len() });
    }
    let expected = bufs[0].send.len;
    for (m, b) in members.iter().zip(bufs) {
        if b.send.len != expected || b.recv.len != expected {
            let got = if b.send.len != expected { b.send.len } else { b.recv.len };
            return Err(CollectiveError::ViewLengthMismatch { member: *m, expected, got });
        }
    }
    Ok(expected)
}
