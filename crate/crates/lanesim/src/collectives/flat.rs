//! Flat (single-communicator) allreduce algorithms.
//!
//! All ring variants send to the next member and receive from the previous
//! member in communicator order. Chunk indexes rotate downward each step,
//! so the chunk a member accumulates in one step is the chunk it forwards
//! in the next.

use crate::buffers::Region;
use crate::chunks::ChunkPlan;
use crate::simcore::{Action, AlgorithmId, ReduceOp, Tag};

use super::{common_view_len, CollectiveError, FlatAlgorithm, MemberBufs, ProgramSet};

/// Fused ring allreduce: a reduce-scatter rotation followed by an allgather
/// rotation over the same chunk plan. `2(n-1)` sends and `n-1` reduction
/// kernels per member; a single member copies send to recv.
pub fn ring_allreduce(
    members: &[usize],
    bufs: &[MemberBufs],
) -> Result<ProgramSet, CollectiveError> {
    let mut set = ProgramSet::new();
    emit_flat(&mut set, members, bufs, FlatAlgorithm::Ring, 0)?;
    Ok(set)
}

/// Recursive doubling: `log2(n)` exchanges of the full view with partners at
/// stride 1, 2, 4, ... Requires a power-of-two communicator and per-member
/// scratch of the view length.
pub fn recursive_doubling_allreduce(
    members: &[usize],
    bufs: &[MemberBufs],
) -> Result<ProgramSet, CollectiveError> {
    let mut set = ProgramSet::new();
    emit_flat(&mut set, members, bufs, FlatAlgorithm::RecursiveDoubling, 0)?;
    Ok(set)
}

/// Reduce-scatter + allgatherv composition over ring rotations. Same message
/// counts as [`ring_allreduce`]; the chunk each member finishes with is its
/// own index rather than the ring-shifted one.
pub fn rabenseifner_allreduce(
    members: &[usize],
    bufs: &[MemberBufs],
) -> Result<ProgramSet, CollectiveError> {
    let mut set = ProgramSet::new();
    emit_flat(&mut set, members, bufs, FlatAlgorithm::Rabenseifner, 0)?;
    Ok(set)
}

/// Ring reduce-scatter: member `i` ends with the fully reduced chunk `i` of
/// `plan` at displacement `D[i]` of its recv view. `n-1` sends per member.
pub fn reduce_scatter_ring(
    members: &[usize],
    bufs: &[MemberBufs],
    plan: &ChunkPlan,
) -> Result<ProgramSet, CollectiveError> {
    let view_len = common_view_len(members, bufs)?;
    check_plan(plan, members.len(), view_len)?;
    let mut set = ProgramSet::new();
    emit_reduce_scatter_ring(&mut set, members, bufs, plan, AlgorithmId::Rabenseifner, 1, 0);
    Ok(set)
}

/// Ring allgatherv: member `i` starts with valid data in chunk `i` of its
/// view; all members end with every chunk. `n-1` sends per member.
pub fn allgatherv_ring(
    members: &[usize],
    views: &[Region],
    plan: &ChunkPlan,
) -> Result<ProgramSet, CollectiveError> {
    if members.is_empty() {
        return Err(CollectiveError::EmptyCommunicator);
    }
    if members.len() != views.len() {
        return Err(CollectiveError::WrongBufCount { members: members.len(), bufs: views.len() });
    }
    for (m, v) in members.iter().zip(views) {
        if v.len != views[0].len {
            return Err(CollectiveError::ViewLengthMismatch {
                member: *m,
                expected: views[0].len,
                got: v.len,
            });
        }
    }
    check_plan(plan, members.len(), views[0].len)?;
    let mut set = ProgramSet::new();
    emit_allgatherv_ring(&mut set, members, views, plan, AlgorithmId::Rabenseifner, 1, 0);
    Ok(set)
}

fn check_plan(plan: &ChunkPlan, members: usize, view_len: usize) -> Result<(), CollectiveError> {
    if plan.members() != members || plan.total() != view_len {
        return Err(CollectiveError::PlanMismatch {
            plan_members: plan.members(),
            plan_total: plan.total(),
            members,
            view_len,
        });
    }
    Ok(())
}

/// Emit one flat algorithm starting at `step_base`; returns steps consumed.
/// Stage ids: 1 for the reduce phase, 2 for the gather phase (recursive
/// doubling is single-stage).
pub(crate) fn emit_flat(
    set: &mut ProgramSet,
    members: &[usize],
    bufs: &[MemberBufs],
    algorithm: FlatAlgorithm,
    step_base: u32,
) -> Result<u32, CollectiveError> {
    let view_len = common_view_len(members, bufs)?;
    let n = members.len();
    match algorithm {
        FlatAlgorithm::Ring => {
            if n == 1 {
                emit_full_copy(set, members[0], &bufs[0], AlgorithmId::Ring, 1, step_base);
                return Ok(1);
            }
            let plan = ChunkPlan::new(view_len, n);
            emit_reduce_scatter_rotation(
                set,
                members,
                bufs,
                &plan,
                RotationTarget::RingShifted,
                AlgorithmId::Ring,
                1,
                step_base,
            );
            emit_gather_rotation(
                set,
                members,
                &recv_regions(bufs),
                &plan,
                RotationTarget::RingShifted,
                AlgorithmId::Ring,
                2,
                step_base + (n as u32 - 1),
            );
            Ok(2 * (n as u32 - 1))
        }
        FlatAlgorithm::RecursiveDoubling => {
            if !n.is_power_of_two() {
                return Err(CollectiveError::NotPowerOfTwo { size: n });
            }
            for (pos, member) in members.iter().enumerate() {
                emit_full_copy(
                    set,
                    *member,
                    &bufs[pos],
                    AlgorithmId::RecursiveDoubling,
                    1,
                    step_base,
                );
            }
            if n == 1 {
                return Ok(1);
            }
            let data = recv_regions(bufs);
            let scratch = scratch_regions(members, bufs, view_len)?;
            let steps = emit_recursive_doubling_inplace(
                set,
                members,
                &data,
                &scratch,
                AlgorithmId::RecursiveDoubling,
                1,
                step_base + 1,
            )?;
            Ok(1 + steps)
        }
        FlatAlgorithm::Rabenseifner => {
            let plan = ChunkPlan::new(view_len, n);
            emit_reduce_scatter_ring(
                set,
                members,
                bufs,
                &plan,
                AlgorithmId::Rabenseifner,
                1,
                step_base,
            );
            let stage1 = if n == 1 { 1 } else { n as u32 - 1 };
            emit_allgatherv_ring(
                set,
                members,
                &recv_regions(bufs),
                &plan,
                AlgorithmId::Rabenseifner,
                2,
                step_base + stage1,
            );
            Ok(stage1 + (n as u32 - 1))
        }
    }
}

fn recv_regions(bufs: &[MemberBufs]) -> Vec<Region> {
    bufs.iter().map(|b| b.recv).collect()
}

fn scratch_regions(
    members: &[usize],
    bufs: &[MemberBufs],
    needed: usize,
) -> Result<Vec<Region>, CollectiveError> {
    members
        .iter()
        .zip(bufs)
        .map(|(m, b)| match b.scratch {
            Some(s) if s.len >= needed => Ok(s),
            _ => Err(CollectiveError::MissingScratch { member: *m, needed }),
        })
        .collect()
}

fn emit_full_copy(
    set: &mut ProgramSet,
    member: usize,
    bufs: &MemberBufs,
    alg: AlgorithmId,
    stage: u8,
    step: u32,
) {
    if bufs.recv != bufs.send {
        set.push(member, Action::copy(Tag::new(alg, stage, step), bufs.recv, bufs.send));
    }
}

/// Which chunk each member finishes the reduce rotation with.
#[derive(Clone, Copy, PartialEq)]
enum RotationTarget {
    /// Member `m` ends with chunk `(m + 1) % n` (fused ring allreduce).
    RingShifted,
    /// Member `m` ends with chunk `m` (reduce-scatter contract).
    OwnChunk,
}

impl RotationTarget {
    /// Chunk sent by member `m` at step `s` of the reduce rotation; the
    /// chunk received is the next one down.
    fn send_chunk(&self, m: usize, s: usize, n: usize) -> usize {
        match self {
            Self::RingShifted => (m + n - s % n) % n,
            Self::OwnChunk => (m + 2 * n - s % n - 1) % n,
        }
    }
}

/// The reduce rotation: `n-1` fused send+recv steps, each followed by a
/// local reduction of the received chunk with the member's own send data.
#[allow(clippy::too_many_arguments)]
fn emit_reduce_scatter_rotation(
    set: &mut ProgramSet,
    members: &[usize],
    bufs: &[MemberBufs],
    plan: &ChunkPlan,
    target: RotationTarget,
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) {
    let n = members.len();
    for s in 0..n - 1 {
        let tag = Tag::new(alg, stage, step_base + s as u32);
        for (m, &member) in members.iter().enumerate() {
            let send_chunk = target.send_chunk(m, s, n);
            let recv_chunk = (send_chunk + n - 1) % n;
            let source = if s == 0 { bufs[m].send } else { bufs[m].recv };
            set.push(
                member,
                Action::send_recv(
                    tag,
                    members[(m + 1) % n],
                    source.sub(plan.displ(send_chunk), plan.count(send_chunk)),
                    members[(m + n - 1) % n],
                    bufs[m].recv.sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                ),
            );
            set.push(
                member,
                Action::reduce(
                    tag,
                    bufs[m].recv.sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                    bufs[m].send.sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                    ReduceOp::Sum,
                ),
            );
        }
    }
}

/// The gather rotation: each member forwards the chunk it most recently
/// completed or received; after `n-1` steps everyone holds every chunk.
#[allow(clippy::too_many_arguments)]
fn emit_gather_rotation(
    set: &mut ProgramSet,
    members: &[usize],
    views: &[Region],
    plan: &ChunkPlan,
    target: RotationTarget,
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) {
    let n = members.len();
    // The gather starts from the chunk the reduce rotation finished with.
    let start = match target {
        RotationTarget::RingShifted => 1,
        RotationTarget::OwnChunk => 0,
    };
    for s in 0..n - 1 {
        let tag = Tag::new(alg, stage, step_base + s as u32);
        for (m, &member) in members.iter().enumerate() {
            let send_chunk = (m + start + n - s % n) % n;
            let recv_chunk = (send_chunk + n - 1) % n;
            set.push(
                member,
                Action::send_recv(
                    tag,
                    members[(m + 1) % n],
                    views[m].sub(plan.displ(send_chunk), plan.count(send_chunk)),
                    members[(m + n - 1) % n],
                    views[m].sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                ),
            );
        }
    }
}

/// Reduce-scatter leaving member `i` with chunk `i`. A single member copies
/// its whole view (one chunk covering everything).
pub(crate) fn emit_reduce_scatter_ring(
    set: &mut ProgramSet,
    members: &[usize],
    bufs: &[MemberBufs],
    plan: &ChunkPlan,
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) {
    if members.len() == 1 {
        emit_full_copy(set, members[0], &bufs[0], alg, stage, step_base);
        return;
    }
    emit_reduce_scatter_rotation(
        set,
        members,
        bufs,
        plan,
        RotationTarget::OwnChunk,
        alg,
        stage,
        step_base,
    );
}

pub(crate) fn emit_allgatherv_ring(
    set: &mut ProgramSet,
    members: &[usize],
    views: &[Region],
    plan: &ChunkPlan,
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) {
    if members.len() == 1 {
        return;
    }
    emit_gather_rotation(
        set,
        members,
        views,
        plan,
        RotationTarget::OwnChunk,
        alg,
        stage,
        step_base,
    );
}

/// In-place allreduce of `data[m]` across `members` by recursive doubling:
/// each round exchanges the full range with the partner at stride `2^k` and
/// folds the received copy in from scratch. Returns steps consumed.
pub(crate) fn emit_recursive_doubling_inplace(
    set: &mut ProgramSet,
    members: &[usize],
    data: &[Region],
    scratch: &[Region],
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) -> Result<u32, CollectiveError> {
    let n = members.len();
    if n == 1 {
        return Ok(0);
    }
    if !n.is_power_of_two() {
        return Err(CollectiveError::NotPowerOfTwo { size: n });
    }
    let len = data[0].len;
    let rounds = n.trailing_zeros();
    for k in 0..rounds {
        let tag = Tag::new(alg, stage, step_base + k);
        for (m, &member) in members.iter().enumerate() {
            let partner = members[m ^ (1 << k)];
            let landing = scratch[m].sub(0, len);
            set.push(member, Action::send_recv(tag, partner, data[m], partner, landing));
            set.push(member, Action::reduce(tag, data[m], landing, ReduceOp::Sum));
        }
    }
    Ok(rounds)
}

/// In-place ring allreduce of `data[m]` across `members`: a reduce-scatter
/// rotation accumulating into scratch, one copy landing the member's own
/// completed chunk, then a gather rotation. Returns steps consumed
/// (`2(n-1) + 1`, message count `2(n-1)` per member).
pub(crate) fn emit_ring_inplace(
    set: &mut ProgramSet,
    members: &[usize],
    data: &[Region],
    scratch: &[Region],
    alg: AlgorithmId,
    stage: u8,
    step_base: u32,
) -> u32 {
    let n = members.len();
    if n == 1 {
        return 0;
    }
    let len = data[0].len;
    let plan = ChunkPlan::new(len, n);

    for s in 0..n - 1 {
        let tag = Tag::new(alg, stage, step_base + s as u32);
        for (m, &member) in members.iter().enumerate() {
            let send_chunk = (m + 2 * n - s - 1) % n;
            let recv_chunk = (send_chunk + n - 1) % n;
            let source = if s == 0 { data[m] } else { scratch[m] };
            set.push(
                member,
                Action::send_recv(
                    tag,
                    members[(m + 1) % n],
                    source.sub(plan.displ(send_chunk), plan.count(send_chunk)),
                    members[(m + n - 1) % n],
                    scratch[m].sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                ),
            );
            set.push(
                member,
                Action::reduce(
                    tag,
                    scratch[m].sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                    data[m].sub(plan.displ(recv_chunk), plan.count(recv_chunk)),
                    ReduceOp::Sum,
                ),
            );
        }
    }

    // Land each member's completed chunk back in the live range.
    let copy_step = step_base + (n as u32 - 1);
    for (m, &member) in members.iter().enumerate() {
        let tag = Tag::new(alg, stage, copy_step);
        set.push(
            member,
            Action::copy(
                tag,
                data[m].sub(plan.displ(m), plan.count(m)),
                scratch[m].sub(plan.displ(m), plan.count(m)),
            ),
        );
    }

    emit_gather_rotation(
        set,
        members,
        data,
        &plan,
        RotationTarget::OwnChunk,
        alg,
        stage,
        copy_step + 1,
    );
    2 * (n as u32 - 1) + 1
}
