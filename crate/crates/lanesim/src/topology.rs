//! Cluster shape, per-process locality coordinates, and the communicators
//! the collective algorithms operate on.
//!
//! The canonical rank layout is node-major, then GPU, then local rank:
//! `rank = ((node_id * gpus_per_node) + gpu_id) * ppg + local_rank`. With
//! this layout, ring neighbors are intra-node wherever possible.

use std::fmt;

/// Errors from topology construction and rank lookups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    /// A configuration field was zero; every factor must be at least 1.
    InvalidField { field: &'static str },
    /// A rank outside `[0, world_size)` was requested.
    RankOutOfRange { rank: usize, world_size: usize },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidField { field } => {
                write!(f, "invalid topology: `{field}` must be at least 1")
            }
            Self::RankOutOfRange { rank, world_size } => {
                write!(f, "rank {rank} out of range for world size {world_size}")
            }
        }
    }
}

impl std::error::Error for TopologyError {}

/// The shape of the modeled cluster: how many nodes, GPUs per node, and
/// processes per GPU. World size is always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TopologySpec {
    nodes: usize,
    gpus_per_node: usize,
    ppg: usize,
}

impl TopologySpec {
    /// Validate and build a topology. Every factor must be at least 1.
    pub fn new(nodes: usize, gpus_per_node: usize, ppg: usize) -> Result<Self, TopologyError> {
        if nodes == 0 {
            return Err(TopologyError::InvalidField { field: "nodes" });
        }
        if gpus_per_node == 0 {
            return Err(TopologyError::InvalidField { field: "gpus_per_node" });
        }
        if ppg == 0 {
            return Err(TopologyError::InvalidField { field: "ppg" });
        }
        Ok(Self { nodes, gpus_per_node, ppg })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn gpus_per_node(&self) -> usize {
        self.gpus_per_node
    }

    pub fn ppg(&self) -> usize {
        self.ppg
    }

    /// Total process count: `nodes * gpus_per_node * ppg`.
    pub fn world_size(&self) -> usize {
        self.nodes * self.gpus_per_node * self.ppg
    }

    /// Total GPU count: `nodes * gpus_per_node`.
    pub fn gpu_count(&self) -> usize {
        self.nodes * self.gpus_per_node
    }

    /// Processes per node.
    pub fn processes_per_node(&self) -> usize {
        self.gpus_per_node * self.ppg
    }

    /// Locality coordinates of a global rank under the canonical layout.
    pub fn rank_info(&self, rank: usize) -> Result<RankInfo, TopologyError> {
        let world_size = self.world_size();
        if rank >= world_size {
            return Err(TopologyError::RankOutOfRange { rank, world_size });
        }
        let local_rank = rank % self.ppg;
        let gpu_id = (rank / self.ppg) % self.gpus_per_node;
        let node_id = rank / (self.ppg * self.gpus_per_node);
        Ok(RankInfo { rank, node_id, gpu_id, local_rank })
    }

    /// Inverse of [`rank_info`](Self::rank_info).
    pub fn rank_of(&self, node_id: usize, gpu_id: usize, local_rank: usize) -> usize {
        ((node_id * self.gpus_per_node) + gpu_id) * self.ppg + local_rank
    }

    /// The rank of the leader process (local rank 0) of one GPU.
    pub fn leader_of(&self, node_id: usize, gpu_id: usize) -> usize {
        self.rank_of(node_id, gpu_id, 0)
    }
}

/// A process's locality coordinates: which node and GPU it lives on, and
/// its index among the processes sharing that GPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RankInfo {
    pub rank: usize,
    pub node_id: usize,
    pub gpu_id: usize,
    pub local_rank: usize,
}

impl RankInfo {
    /// The leader (local rank 0) owns its GPU's buffers.
    pub fn is_leader(&self) -> bool {
        self.local_rank == 0
    }

    /// True when both processes share a GPU.
    pub fn same_gpu(&self, other: &RankInfo) -> bool {
        self.node_id == other.node_id && self.gpu_id == other.gpu_id
    }
}

/// The communicators derived from a topology.
///
/// * `new_comm(l)` — all ranks with local rank `l`, one per GPU.
/// * `comm_group(r)` — ranks with `r`'s local rank on `r`'s node.
/// * `comm_lane(r)` — ranks with `r`'s local rank and GPU index across nodes.
/// * `node_members(n)` — every rank on node `n`.
///
/// All member lists are in ascending canonical rank order, so "next process
/// in ring" is well-defined and locality-favorable.
#[derive(Debug, Clone)]
pub struct CommunicatorMap {
    spec: TopologySpec,
    world: Vec<usize>,
    new_comms: Vec<Vec<usize>>,   // indexed by local rank
    group_comms: Vec<Vec<usize>>, // indexed by node * ppg + local rank
    lane_comms: Vec<Vec<usize>>,  // indexed by gpu * ppg + local rank
    node_comms: Vec<Vec<usize>>,  // indexed by node
}

impl CommunicatorMap {
    pub fn build(spec: &TopologySpec) -> Self {
        let spec = *spec;
        let (nodes, gpus, ppg) = (spec.nodes(), spec.gpus_per_node(), spec.ppg());
        let world: Vec<usize> = (0..spec.world_size()).collect();

        let mut new_comms = vec![Vec::with_capacity(nodes * gpus); ppg];
        let mut group_comms = vec![Vec::with_capacity(gpus); nodes * ppg];
        let mut lane_comms = vec![Vec::with_capacity(nodes); gpus * ppg];
        let mut node_comms = vec![Vec::with_capacity(gpus * ppg); nodes];

        for &rank in &world {
            let info = spec.rank_info(rank).expect("world rank in range");
            new_comms[info.local_rank].push(rank);
            group_comms[info.node_id * ppg + info.local_rank].push(rank);
            lane_comms[info.gpu_id * ppg + info.local_rank].push(rank);
            node_comms[info.node_id].push(rank);
        }

        Self { spec, world, new_comms, group_comms, lane_comms, node_comms }
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn world(&self) -> &[usize] {
        &self.world
    }

    /// All ranks sharing local rank `l`, across every GPU.
    pub fn new_comm(&self, local_rank: usize) -> &[usize] {
        &self.new_comms[local_rank]
    }

    /// Same-local-rank ranks on `rank`'s own node (one per GPU).
    pub fn comm_group(&self, rank: usize) -> &[usize] {
        let info = self.spec.rank_info(rank).expect("rank in range");
        &self.group_comms[info.node_id * self.spec.ppg() + info.local_rank]
    }

    /// Same-local-rank, same-GPU-index ranks across nodes.
    pub fn comm_lane(&self, rank: usize) -> &[usize] {
        let info = self.spec.rank_info(rank).expect("rank in range");
        &self.lane_comms[info.gpu_id * self.spec.ppg() + info.local_rank]
    }

    /// Every rank on one node, in ascending order.
    pub fn node_members(&self, node_id: usize) -> &[usize] {
        &self.node_comms[node_id]
    }
}
