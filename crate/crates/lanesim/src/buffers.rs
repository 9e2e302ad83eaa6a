//! GPU-resident reduction buffers, leader ownership, and the simulated
//! IPC handle sharing that lets the processes of one GPU window a single
//! device buffer at per-process offsets.
//!
//! The leader process (local rank 0) allocates a buffer and publishes it in
//! an [`IpcRegistry`] keyed by `(node_id, gpu_id)`; co-located non-leaders
//! resolve the published buffer and open a [`BufferView`] over their slice.
//! Resolving before the leader has published is an error, which preserves
//! the handle-broadcast ordering without modeling the broadcast itself.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chunks::ChunkPlan;
use crate::topology::RankInfo;

/// Handle to a buffer in a [`BufferStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub usize);

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "buf{}", self.0)
    }
}

/// A contiguous element range inside one buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub buffer: BufferId,
    pub offset: usize,
    pub len: usize,
}

impl Region {
    pub fn new(buffer: BufferId, offset: usize, len: usize) -> Self {
        Self { buffer, offset, len }
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    /// True when both regions address the same buffer and their element
    /// ranges intersect. Zero-length regions never overlap anything.
    pub fn overlaps(&self, other: &Region) -> bool {
        self.buffer == other.buffer
            && self.len > 0
            && other.len > 0
            && self.offset < other.end()
            && other.offset < self.end()
    }

    /// Sub-range relative to this region's start.
    pub fn sub(&self, offset: usize, len: usize) -> Region {
        debug_assert!(offset + len <= self.len);
        Region::new(self.buffer, self.offset + offset, len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferError {
    /// Only the leader process of a GPU may allocate its shared buffer.
    NotLeader { rank: usize },
    EmptyAllocation,
    /// A buffer was already published for this GPU.
    AlreadyPublished { node_id: usize, gpu_id: usize },
    /// No buffer has been published for this GPU yet.
    Unpublished { node_id: usize, gpu_id: usize },
    UnknownBuffer { buffer: BufferId },
    OutOfBounds { buffer: BufferId, offset: usize, len: usize, size: usize },
}

impl fmt::Display for BufferError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotLeader { rank } => {
                write!(f, "rank {rank} is not a leader and may not allocate a shared buffer")
            }
            Self::EmptyAllocation => write!(f, "buffers must hold at least one element"),
            Self::AlreadyPublished { node_id, gpu_id } => {
                write!(f, "a buffer is already published for node {node_id} gpu {gpu_id}")
            }
            Self::Unpublished { node_id, gpu_id } => {
                write!(f, "no buffer published for node {node_id} gpu {gpu_id}")
            }
            Self::UnknownBuffer { buffer } => write!(f, "unknown buffer {buffer}"),
            Self::OutOfBounds { buffer, offset, len, size } => write!(
                f,
                "range [{offset}, {}) exceeds {buffer} of {size} elements",
                offset + len
            ),
        }
    }
}

impl std::error::Error for BufferError {}

/// Buffer fill generators. `RandInt` draws uniform integers in `[0, 2^20)`
/// stored as floats, so sums stay exact under any reduction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillPattern {
    Ones,
    Ramp,
    RandInt,
}

impl FillPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ones" => Some(Self::Ones),
            "ramp" => Some(Self::Ramp),
            "rand" => Some(Self::RandInt),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ones => "ones",
            Self::Ramp => "ramp",
            Self::RandInt => "rand",
        }
    }
}

/// A fill generator bound to a seed. `stream` distinguishes buffers so each
/// participant gets its own reproducible values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill {
    pub pattern: FillPattern,
    pub seed: u64,
}

impl Fill {
    pub fn new(pattern: FillPattern, seed: u64) -> Self {
        Self { pattern, seed }
    }

    pub fn generate(&self, count: usize, stream: u64) -> Vec<f64> {
        match self.pattern {
            FillPattern::Ones => vec![1.0; count],
            FillPattern::Ramp => (0..count).map(|i| i as f64).collect(),
            FillPattern::RandInt => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                (0..count).map(|_| rng.random_range(0..1u64 << 20) as f64).collect()
            }
        }
    }
}

/// A device buffer and the leader that allocated it.
#[derive(Debug, Clone)]
pub struct SharedBuffer {
    id: BufferId,
    owner: RankInfo,
    data: Vec<f64>,
}

impl SharedBuffer {
    pub fn id(&self) -> BufferId {
        self.id
    }

    pub fn owner(&self) -> &RankInfo {
        &self.owner
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A window over a shared buffer held by one process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferView {
    pub buffer: BufferId,
    pub offset: usize,
    pub len: usize,
    pub holder: RankInfo,
}

impl BufferView {
    pub fn region(&self) -> Region {
        Region::new(self.buffer, self.offset, self.len)
    }
}

/// Maps each GPU to its published buffer. One registry tracks one buffer
/// role (e.g. send buffers); use separate registries for separate roles.
#[derive(Debug, Clone, Default)]
pub struct IpcRegistry {
    published: HashMap<(usize, usize), BufferId>,
}

impl IpcRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn publish(&mut self, owner: &RankInfo, id: BufferId) -> Result<(), BufferError> {
        let key = (owner.node_id, owner.gpu_id);
        if self.published.contains_key(&key) {
            return Err(BufferError::AlreadyPublished { node_id: key.0, gpu_id: key.1 });
        }
        self.published.insert(key, id);
        Ok(())
    }

    /// Resolve the buffer published for `holder`'s GPU. A process can only
    /// ever reach buffers on its own `(node, gpu)`.
    pub fn resolve(&self, holder: &RankInfo) -> Result<BufferId, BufferError> {
        self.published.get(&(holder.node_id, holder.gpu_id)).copied().ok_or(
            BufferError::Unpublished { node_id: holder.node_id, gpu_id: holder.gpu_id },
        )
    }

    /// Open `holder`'s window over its GPU's published buffer: the buffer is
    /// partitioned across `ppg` local ranks with the remainder-first rule,
    /// and the view selects the slice at `holder.local_rank`.
    pub fn open_view(
        &self,
        store: &BufferStore,
        holder: RankInfo,
        ppg: usize,
    ) -> Result<BufferView, BufferError> {
        let id = self.resolve(&holder)?;
        let buf = store.buffer(id)?;
        let plan = ChunkPlan::new(buf.element_count(), ppg);
        Ok(BufferView {
            buffer: id,
            offset: plan.displ(holder.local_rank),
            len: plan.count(holder.local_rank),
            holder,
        })
    }
}

/// Owns every buffer in one simulation run.
#[derive(Debug, Clone, Default)]
pub struct BufferStore {
    buffers: Vec<SharedBuffer>,
}

impl BufferStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a GPU-shared buffer and publish it for `owner`'s GPU.
    /// Only the leader process may do this, and only once per registry.
    pub fn allocate_shared(
        &mut self,
        registry: &mut IpcRegistry,
        owner: RankInfo,
        data: Vec<f64>,
    ) -> Result<BufferId, BufferError> {
        if !owner.is_leader() {
            return Err(BufferError::NotLeader { rank: owner.rank });
        }
        if data.is_empty() {
            return Err(BufferError::EmptyAllocation);
        }
        let id = BufferId(self.buffers.len());
        registry.publish(&owner, id)?;
        self.buffers.push(SharedBuffer { id, owner, data });
        Ok(id)
    }

    /// Allocate a process-private buffer (per-rank inputs, scratch space).
    /// Not published; any rank may own one.
    pub fn allocate_private(&mut self, owner: RankInfo, data: Vec<f64>) -> BufferId {
        let id = BufferId(self.buffers.len());
        self.buffers.push(SharedBuffer { id, owner, data });
        id
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn buffer(&self, id: BufferId) -> Result<&SharedBuffer, BufferError> {
        self.buffers.get(id.0).ok_or(BufferError::UnknownBuffer { buffer: id })
    }

    pub fn check_region(&self, region: &Region) -> Result<(), BufferError> {
        let buf = self.buffer(region.buffer)?;
        if region.end() > buf.element_count() {
            return Err(BufferError::OutOfBounds {
                buffer: region.buffer,
                offset: region.offset,
                len: region.len,
                size: buf.element_count(),
            });
        }
        Ok(())
    }

    /// Read-only slice of a validated region.
    pub fn slice(&self, region: &Region) -> Result<&[f64], BufferError> {
        self.check_region(region)?;
        Ok(&self.buffers[region.buffer.0].data[region.offset..region.end()])
    }

    pub(crate) fn data_mut(&mut self, id: BufferId) -> &mut Vec<f64> {
        &mut self.buffers[id.0].data
    }

    /// Mutable access to two distinct buffers at once.
    pub(crate) fn pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut Vec<f64>, &mut Vec<f64>) {
        assert_ne!(a, b, "pair_mut needs distinct buffers");
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0].data, &mut hi[0].data)
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0].data, &mut lo[b.0].data)
        }
    }
}
