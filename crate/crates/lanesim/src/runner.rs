//! End-to-end execution: allocate buffers for an algorithm on a topology,
//! compile and run its programs, and verify results against the oracle.
//!
//! Two participant models exist. Per-rank algorithms (`ring`, `rd`,
//! `rabenseifner`, `lane`) give every process its own send/recv pair, and
//! the result is the sum over all processes. Per-GPU algorithms
//! (`ppg-standard`, `ppg-lane`) allocate one shared send/recv pair per GPU
//! through the IPC registries, window them across the GPU's processes, and
//! the result on every GPU is the sum over GPUs.

use std::fmt;

use crate::buffers::{BufferError, BufferId, BufferStore, Fill, IpcRegistry, Region};
use crate::chunks::ChunkPlan;
use crate::collectives::{
    lane_allreduce, multi_ppg_lane, multi_ppg_standard, oracle_allreduce, rabenseifner_allreduce,
    recursive_doubling_allreduce, ring_allreduce, CollectiveError, FlatAlgorithm, LaneInner,
    MemberBufs,
};
use crate::costmodel::CostError;
use crate::simcore::{run, EventTrace, SimError};
use crate::topology::{CommunicatorMap, TopologyError, TopologySpec};

/// A runnable algorithm choice, including the inner variant for composed
/// algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Flat(FlatAlgorithm),
    Lane(LaneInner),
    PpgStandard(FlatAlgorithm),
    PpgLane(LaneInner),
}

impl Algorithm {
    /// The six selector strings accepted by configs and the CLI. Composed
    /// algorithms default to a ring inner stage.
    pub fn from_selector(s: &str) -> Option<Self> {
        match s {
            "ring" => Some(Self::Flat(FlatAlgorithm::Ring)),
            "rd" => Some(Self::Flat(FlatAlgorithm::RecursiveDoubling)),
            "rabenseifner" => Some(Self::Flat(FlatAlgorithm::Rabenseifner)),
            "lane" => Some(Self::Lane(LaneInner::Ring)),
            "ppg-standard" => Some(Self::PpgStandard(FlatAlgorithm::Ring)),
            "ppg-lane" => Some(Self::PpgLane(LaneInner::Ring)),
            _ => None,
        }
    }

    pub fn selector(&self) -> &'static str {
        match self {
            Self::Flat(FlatAlgorithm::Ring) => "ring",
            Self::Flat(FlatAlgorithm::RecursiveDoubling) => "rd",
            Self::Flat(FlatAlgorithm::Rabenseifner) => "rabenseifner",
            Self::Lane(_) => "lane",
            Self::PpgStandard(_) => "ppg-standard",
            Self::PpgLane(_) => "ppg-lane",
        }
    }

    /// All six algorithms with default inner stages.
    pub fn all() -> [Self; 6] {
        [
            Self::Flat(FlatAlgorithm::Ring),
            Self::Flat(FlatAlgorithm::RecursiveDoubling),
            Self::Flat(FlatAlgorithm::Rabenseifner),
            Self::Lane(LaneInner::Ring),
            Self::PpgStandard(FlatAlgorithm::Ring),
            Self::PpgLane(LaneInner::Ring),
        ]
    }

    /// Replace the inter-node inner stage of lane-structured variants.
    pub fn with_lane_inner(self, inner: LaneInner) -> Self {
        match self {
            Self::Lane(_) => Self::Lane(inner),
            Self::PpgLane(_) => Self::PpgLane(inner),
            other => other,
        }
    }

    /// Replace the per-communicator algorithm of the standard PPG variant.
    pub fn with_ppg_inner(self, inner: FlatAlgorithm) -> Self {
        match self {
            Self::PpgStandard(_) => Self::PpgStandard(inner),
            other => other,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.selector())
    }
}

/// Whose buffers take part in the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticipantModel {
    PerRank,
    PerGpu,
}

/// One reduction participant and its buffer pair.
#[derive(Debug, Clone, Copy)]
pub struct Participant {
    pub index: usize,
    pub send: BufferId,
    pub recv: BufferId,
}

/// Everything a finished run exposes: the trace, the buffer store, and the
/// participant table for reading inputs and results.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: TopologySpec,
    pub algorithm: Algorithm,
    pub count: usize,
    pub model: ParticipantModel,
    pub trace: EventTrace,
    store: BufferStore,
    participants: Vec<Participant>,
}

impl RunOutput {
    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    /// A participant's original send buffer.
    pub fn input(&self, participant: usize) -> &[f64] {
        self.store.buffer(self.participants[participant].send).expect("valid id").data()
    }

    /// A participant's final recv buffer.
    pub fn result(&self, participant: usize) -> &[f64] {
        self.store.buffer(self.participants[participant].recv).expect("valid id").data()
    }

    pub fn digest(&self) -> String {
        self.trace.digest()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    ZeroCount,
    EmptyAxis { axis: &'static str },
    Topology(TopologyError),
    Buffer(BufferError),
    Collective(CollectiveError),
    Sim(SimError),
    Cost(CostError),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroCount => write!(f, "runs need at least one element per buffer"),
            Self::EmptyAxis { axis } => write!(f, "sweep axis `{axis}` is empty"),
            Self::Topology(e) => write!(f, "{e}"),
            Self::Buffer(e) => write!(f, "{e}"),
            Self::Collective(e) => write!(f, "{e}"),
            Self::Sim(e) => write!(f, "{e}"),
            Self::Cost(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<TopologyError> for RunError {
    fn from(e: TopologyError) -> Self {
        Self::Topology(e)
    }
}
impl From<BufferError> for RunError {
    fn from(e: BufferError) -> Self {
        Self::Buffer(e)
    }
}
impl From<CollectiveError> for RunError {
    fn from(e: CollectiveError) -> Self {
        Self::Collective(e)
    }
}
impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        Self::Sim(e)
    }
}
impl From<CostError> for RunError {
    fn from(e: CostError) -> Self {
        Self::Cost(e)
    }
}

/// Run `algorithm` over `spec` with `count`-element buffers filled by
/// `fill` (participant index selects the fill stream). Deterministic: equal
/// arguments produce byte-identical traces and results.
pub fn execute(
    spec: &TopologySpec,
    algorithm: Algorithm,
    count: usize,
    fill: &Fill,
) -> Result<RunOutput, RunError> {
    if count == 0 {
        return Err(RunError::ZeroCount);
    }
    let cmap = CommunicatorMap::build(spec);
    let mut store = BufferStore::new();

    let (participants, set, model) = match algorithm {
        Algorithm::Flat(flat) => {
            let (participants, bufs) = per_rank_buffers(spec, &mut store, count, fill, flat_scratch(flat, count));
            let members: Vec<usize> = (0..spec.world_size()).collect();
            let set = match flat {
                FlatAlgorithm::Ring => ring_allreduce(&members, &bufs)?,
                FlatAlgorithm::RecursiveDoubling => recursive_doubling_allreduce(&members, &bufs)?,
                FlatAlgorithm::Rabenseifner => rabenseifner_allreduce(&members, &bufs)?,
            };
            (participants, set, ParticipantModel::PerRank)
        }
        Algorithm::Lane(inner) => {
            let chunk = ChunkPlan::new(count, spec.processes_per_node()).count(0);
            let (participants, bufs) =
                per_rank_buffers(spec, &mut store, count, fill, Some(chunk.max(1)));
            let set = lane_allreduce(spec, &cmap, &bufs, inner)?;
            (participants, set, ParticipantModel::PerRank)
        }
        Algorithm::PpgStandard(inner) => {
            let (participants, send_reg, recv_reg) =
                per_gpu_buffers(spec, &mut store, count, fill)?;
            let scratch = match inner {
                FlatAlgorithm::RecursiveDoubling => {
                    Some(window_scratch(spec, &mut store, count, |wlen| wlen))
                }
                _ => None,
            };
            let set = multi_ppg_standard(
                spec,
                &cmap,
                &store,
                &send_reg,
                &recv_reg,
                scratch.as_deref(),
                inner,
            )?;
            (participants, set, ParticipantModel::PerGpu)
        }
        Algorithm::PpgLane(inner) => {
            let (participants, send_reg, recv_reg) =
                per_gpu_buffers(spec, &mut store, count, fill)?;
            let gpus = spec.gpus_per_node();
            let scratch =
                window_scratch(spec, &mut store, count, |wlen| ChunkPlan::new(wlen, gpus).count(0));
            let set =
                multi_ppg_lane(spec, &cmap, &store, &send_reg, &recv_reg, &scratch, inner)?;
            (participants, set, ParticipantModel::PerGpu)
        }
    };

    let programs = set.into_programs(spec.world_size())?;
    let trace = run(spec, &mut store, &programs)?;
    Ok(RunOutput {
        spec: *spec,
        algorithm,
        count,
        model,
        trace,
        store,
        participants,
    })
}

fn flat_scratch(flat: FlatAlgorithm, count: usize) -> Option<usize> {
    match flat {
        FlatAlgorithm::RecursiveDoubling => Some(count),
        _ => None,
    }
}

/// One private send/recv pair per rank, plus optional scratch of
/// `scratch_len` elements.
fn per_rank_buffers(
    spec: &TopologySpec,
    store: &mut BufferStore,
    count: usize,
    fill: &Fill,
    scratch_len: Option<usize>,
) -> (Vec<Participant>, Vec<MemberBufs>) {
    let mut participants = Vec::with_capacity(spec.world_size());
    let mut bufs = Vec::with_capacity(spec.world_size());
    for rank in 0..spec.world_size() {
        let info = spec.rank_info(rank).expect("rank in range");
        let send = store.allocate_private(info, fill.generate(count, rank as u64));
        let recv = store.allocate_private(info, vec![0.0; count]);
        participants.push(Participant { index: rank, send, recv });
        bufs.push(MemberBufs::new(Region::new(send, 0, count), Region::new(recv, 0, count)));
    }
    if let Some(len) = scratch_len {
        for (rank, buf) in bufs.iter_mut().enumerate() {
            let info = spec.rank_info(rank).expect("rank in range");
            let id = store.allocate_private(info, vec![0.0; len]);
            buf.scratch = Some(Region::new(id, 0, len));
        }
    }
    (participants, bufs)
}

/// One shared send/recv pair per GPU, published through fresh registries.
fn per_gpu_buffers(
    spec: &TopologySpec,
    store: &mut BufferStore,
    count: usize,
    fill: &Fill,
) -> Result<(Vec<Participant>, IpcRegistry, IpcRegistry), RunError> {
    let mut send_reg = IpcRegistry::new();
    let mut recv_reg = IpcRegistry::new();
    let mut participants = Vec::with_capacity(spec.gpu_count());
    for node in 0..spec.nodes() {
        for gpu in 0..spec.gpus_per_node() {
            let leader = spec.rank_info(spec.leader_of(node, gpu))?;
            let index = node * spec.gpus_per_node() + gpu;
            let send =
                store.allocate_shared(&mut send_reg, leader, fill.generate(count, index as u64))?;
            let recv = store.allocate_shared(&mut recv_reg, leader, vec![0.0; count])?;
            participants.push(Participant { index, send, recv });
        }
    }
    Ok((participants, send_reg, recv_reg))
}

/// Per-rank private scratch sized from the rank's window length.
fn window_scratch(
    spec: &TopologySpec,
    store: &mut BufferStore,
    count: usize,
    len_of: impl Fn(usize) -> usize,
) -> Vec<Region> {
    let plan = ChunkPlan::new(count, spec.ppg());
    let mut scratch = Vec::with_capacity(spec.world_size());
    for rank in 0..spec.world_size() {
        let info = spec.rank_info(rank).expect("rank in range");
        let len = len_of(plan.count(info.local_rank)).max(1);
        let id = store.allocate_private(info, vec![0.0; len]);
        scratch.push(Region::new(id, 0, len));
    }
    scratch
}

/// First mismatch between a run's results and the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyFailure {
    pub algorithm: &'static str,
    pub nodes: usize,
    pub gpus_per_node: usize,
    pub ppg: usize,
    pub count: usize,
    pub participant: usize,
    pub element: usize,
    pub got: f64,
    pub want: f64,
}

impl fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on nodes={} gpus={} ppg={} count={}: participant {} element {}: got {}, want {}",
            self.algorithm,
            self.nodes,
            self.gpus_per_node,
            self.ppg,
            self.count,
            self.participant,
            self.element,
            self.got,
            self.want
        )
    }
}

impl std::error::Error for VerifyFailure {}

/// Compare every participant's result against the brute-force oracle,
/// exactly. Returns the first differing cell on failure.
pub fn verify(output: &RunOutput) -> Result<(), Box<VerifyFailure>> {
    let inputs: Vec<&[f64]> =
        (0..output.participants().len()).map(|p| output.input(p)).collect();
    let want = oracle_allreduce(&inputs).expect("equal lengths by construction");
    for p in 0..output.participants().len() {
        let got = output.result(p);
        if let Some(element) = (0..want.len()).find(|&i| got[i] != want[i]) {
            return Err(Box::new(VerifyFailure {
                algorithm: output.algorithm.selector(),
                nodes: output.spec.nodes(),
                gpus_per_node: output.spec.gpus_per_node(),
                ppg: output.spec.ppg(),
                count: output.count,
                participant: p,
                element,
                got: got[element],
                want: want[element],
            }));
        }
    }
    Ok(())
}
