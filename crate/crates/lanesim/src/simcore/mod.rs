//! Deterministic message-passing execution engine.
//!
//! Each rank runs a [`RankProgram`]: a fixed sequence of actions whose
//! control flow depends only on topology and element counts, never on
//! payload values. Sends use rendezvous semantics (they block until the
//! matching receive is posted), messages match on `(src, dst, tag)`, and
//! ranks are scheduled in a fixed round-robin order, so a run's
//! [`EventTrace`](trace::EventTrace) is identical across repetitions.

mod engine;
mod trace;

pub use engine::{copy_local, reduce_local, run};
pub use trace::{EventKind, EventTrace, TraceEvent};

use std::fmt;

use crate::buffers::{BufferError, Region};

/// Identifies which program generator produced an action, for tag hygiene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AlgorithmId {
    Ring = 1,
    RecursiveDoubling = 2,
    Rabenseifner = 3,
    Lane = 4,
}

/// Message tag: algorithm, stage, and step. Stages keep messages from
/// adjacent phases of one collective from matching each other; steps align
/// the same round across ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub alg: AlgorithmId,
    pub stage: u8,
    pub step: u32,
}

impl Tag {
    pub fn new(alg: AlgorithmId, stage: u8, step: u32) -> Self {
        Self { alg, stage, step }
    }

    /// Single-integer encoding used on the wire format.
    pub fn packed(&self) -> u64 {
        ((self.alg as u64) << 40) | ((self.stage as u64) << 32) | self.step as u64
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/s{}/t{}", self.alg, self.stage, self.step)
    }
}

/// How a message's endpoints relate in the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalityClass {
    IntraGpu,
    IntraNode,
    InterNode,
}

impl LocalityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::IntraGpu => "intra_gpu",
            Self::IntraNode => "intra_node",
            Self::InterNode => "inter_node",
        }
    }

    pub fn classify(a: &crate::topology::RankInfo, b: &crate::topology::RankInfo) -> Self {
        if a.node_id != b.node_id {
            Self::InterNode
        } else if a.gpu_id != b.gpu_id {
            Self::IntraNode
        } else {
            Self::IntraGpu
        }
    }
}

impl fmt::Display for LocalityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reduction operator applied elementwise. Sums of integer-valued floats
/// below 2^53 are exact, so reassociation cannot change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReduceOp {
    #[default]
    Sum,
}

impl ReduceOp {
    #[inline]
    pub fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Sum => a + b,
        }
    }
}

/// Outgoing half of a transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendPart {
    pub to: usize,
    pub range: Region,
}

/// Incoming half of a transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecvPart {
    pub from: usize,
    pub range: Region,
}

/// One step of a rank program.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// A send, a receive, or a fused send+receive. Fusing both halves into
    /// one action models `MPI_Sendrecv` (or `Isend`/`Irecv`/`Waitall`):
    /// neighbor exchanges complete without a posting-order deadlock.
    Transfer { send: Option<SendPart>, recv: Option<RecvPart> },
    /// `dst[i] <- dst[i] op src[i]`, recorded as a kernel event.
    Reduce { dst: Region, src: Region, op: ReduceOp },
    /// `dst[i] <- src[i]`, recorded as a kernel event.
    Copy { dst: Region, src: Region },
    /// Waits until `size` ranks have arrived at the same tag.
    Barrier { size: usize },
}

/// A tagged program step.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub tag: Tag,
    pub op: Op,
}

impl Action {
    pub fn send(tag: Tag, to: usize, range: Region) -> Self {
        Self { tag, op: Op::Transfer { send: Some(SendPart { to, range }), recv: None } }
    }

    pub fn recv(tag: Tag, from: usize, range: Region) -> Self {
        Self { tag, op: Op::Transfer { send: None, recv: Some(RecvPart { from, range }) } }
    }

    pub fn send_recv(
        tag: Tag,
        to: usize,
        send_range: Region,
        from: usize,
        recv_range: Region,
    ) -> Self {
        Self {
            tag,
            op: Op::Transfer {
                send: Some(SendPart { to, range: send_range }),
                recv: Some(RecvPart { from, range: recv_range }),
            },
        }
    }

    pub fn reduce(tag: Tag, dst: Region, src: Region, op: ReduceOp) -> Self {
        Self { tag, op: Op::Reduce { dst, src, op } }
    }

    pub fn copy(tag: Tag, dst: Region, src: Region) -> Self {
        Self { tag, op: Op::Copy { dst, src } }
    }

    pub fn barrier(tag: Tag, members: &[usize]) -> Self {
        Self { tag, op: Op::Barrier { size: members.len() } }
    }
}

/// The full action sequence for one rank.
pub type RankProgram = Vec<Action>;

/// Execution failures. Programs are static data, so every one of these
/// indicates a malformed program rather than a data-dependent fault.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    ProgramCountMismatch { programs: usize, world_size: usize },
    /// No rank could make progress. Lists each blocked rank with a
    /// description of its pending operation.
    Deadlock { blocked: Vec<(usize, String)> },
    /// A matched send/receive pair disagreed on element count.
    LengthMismatch { src: usize, dst: usize, tag: Tag, send_len: usize, recv_len: usize },
    /// Reduce or copy with unequal range lengths.
    LocalLengthMismatch { dst_len: usize, src_len: usize },
    /// Source and destination ranges alias each other.
    RegionOverlap { dst: Region, src: Region },
    SelfMessage { rank: usize, tag: Tag },
    Buffer(BufferError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ProgramCountMismatch { programs, world_size } => {
                write!(f, "{programs} programs supplied for world size {world_size}")
            }
            Self::Deadlock { blocked } => {
                write!(f, "deadlock; blocked ranks:")?;
                for (rank, what) in blocked {
                    write!(f, " [rank {rank}: {what}]")?;
                }
                Ok(())
            }
            Self::LengthMismatch { src, dst, tag, send_len, recv_len } => write!(
                f,
                "message {src}->{dst} tag {tag}: send length {send_len} != recv length {recv_len}"
            ),
            Self::LocalLengthMismatch { dst_len, src_len } => {
                write!(f, "local op length mismatch: dst {dst_len} != src {src_len}")
            }
            Self::RegionOverlap { dst, src } => write!(
                f,
                "aliasing ranges: dst {}[{}..{}] overlaps src {}[{}..{}]",
                dst.buffer,
                dst.offset,
                dst.end(),
                src.buffer,
                src.offset,
                src.end()
            ),
            Self::SelfMessage { rank, tag } => {
                write!(f, "rank {rank} addressed a message to itself (tag {tag})")
            }
            Self::Buffer(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<BufferError> for SimError {
    fn from(e: BufferError) -> Self {
        Self::Buffer(e)
    }
}
