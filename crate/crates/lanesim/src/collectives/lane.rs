//! Node-aware lane allreduce.
//!
//! Three stages: (1) reduce-scatter inside each group, leaving member `j`
//! with group chunk `j`; (2) allreduce of that chunk across the member's
//! lane (the same-position processes on every other node), which is the
//! only stage that crosses nodes; (3) allgatherv inside each group. Every
//! process per node carries one lane of the inter-node reduction, so each
//! lane moves `view_len / group_size` elements instead of the full view.

use crate::buffers::Region;
use crate::chunks::ChunkPlan;
use crate::simcore::AlgorithmId;
use crate::topology::{CommunicatorMap, TopologySpec};

use super::flat::{
    emit_allgatherv_ring, emit_recursive_doubling_inplace, emit_reduce_scatter_ring,
    emit_ring_inplace,
};
use super::{common_view_len, CollectiveError, LaneInner, MemberBufs, ProgramSet};

/// Lane allreduce over the whole topology: groups are whole nodes, lanes
/// connect equal node-local positions across nodes. `bufs` is indexed by
/// rank; scratch must hold each member's stage-2 chunk (`view_len /
/// group_size`, rounded up) wherever lanes have more than one member.
pub fn lane_allreduce(
    topo: &TopologySpec,
    cmap: &CommunicatorMap,
    bufs: &[MemberBufs],
    inner: LaneInner,
) -> Result<ProgramSet, CollectiveError> {
    if bufs.len() != topo.world_size() {
        return Err(CollectiveError::WrongBufCount {
            members: topo.world_size(),
            bufs: bufs.len(),
        });
    }
    let groups: Vec<&[usize]> = (0..topo.nodes()).map(|n| cmap.node_members(n)).collect();
    // Rank j on node 0 has node-local position j, so comm_lane(j) enumerates
    // the lane for position j.
    let lanes: Vec<&[usize]> =
        (0..topo.processes_per_node()).map(|j| cmap.comm_lane(j)).collect();
    let mut set = ProgramSet::new();
    emit_lane_allreduce(&mut set, &groups, &lanes, bufs, inner)?;
    Ok(set)
}

/// Shared three-stage emitter, parameterized over the group/lane structure.
/// Groups must be disjoint and equally sized; lanes must be disjoint,
/// equally sized, and connect equal group positions. `bufs` is indexed by
/// rank.
pub(crate) fn emit_lane_allreduce(
    set: &mut ProgramSet,
    groups: &[&[usize]],
    lanes: &[&[usize]],
    bufs: &[MemberBufs],
    inner: LaneInner,
) -> Result<(), CollectiveError> {
    if groups.is_empty() || groups[0].is_empty() {
        return Err(CollectiveError::EmptyCommunicator);
    }
    let group_size = groups[0].len();

    // Per-group chunk plans plus each rank's (plan, position).
    let mut plans = Vec::with_capacity(groups.len());
    let mut position = std::collections::HashMap::new();
    for (g, members) in groups.iter().enumerate() {
        debug_assert_eq!(members.len(), group_size, "groups must be equally sized");
        let member_bufs: Vec<MemberBufs> = members.iter().map(|&r| bufs[r]).collect();
        let view_len = common_view_len(members, &member_bufs)?;
        plans.push(ChunkPlan::new(view_len, group_size));
        for (j, &r) in members.iter().enumerate() {
            position.insert(r, (g, j));
        }
    }

    // Stage 1: intra-group reduce-scatter.
    let stage1_steps = if group_size == 1 { 1 } else { group_size as u32 - 1 };
    for (g, members) in groups.iter().enumerate() {
        let member_bufs: Vec<MemberBufs> = members.iter().map(|&r| bufs[r]).collect();
        emit_reduce_scatter_ring(set, members, &member_bufs, &plans[g], AlgorithmId::Lane, 1, 0);
    }

    // Stage 2: inter-node allreduce of each member's own chunk, one lane at
    // a time. Only this stage crosses nodes.
    let mut stage2_steps = 0;
    for lane_members in lanes {
        if lane_members.len() <= 1 {
            continue;
        }
        let mut data = Vec::with_capacity(lane_members.len());
        let mut scratch = Vec::with_capacity(lane_members.len());
        let mut chunk_len = None;
        for &r in *lane_members {
            let (g, j) = position[&r];
            let (displ, count) = (plans[g].displ(j), plans[g].count(j));
            match chunk_len {
                None => chunk_len = Some(count),
                Some(expected) if expected != count => {
                    return Err(CollectiveError::ViewLengthMismatch {
                        member: r,
                        expected,
                        got: count,
                    })
                }
                _ => {}
            }
            let chunk = bufs[r].recv.sub(displ, count);
            data.push(chunk);
            scratch.push(if count == 0 {
                chunk
            } else {
                match bufs[r].scratch {
                    Some(s) if s.len >= count => s.sub(0, count),
                    _ => return Err(CollectiveError::MissingScratch { member: r, needed: count }),
                }
            });
        }
        let steps = match inner {
            LaneInner::Ring => {
                emit_ring_inplace(set, lane_members, &data, &scratch, AlgorithmId::Lane, 2, stage1_steps)
            }
            LaneInner::RecursiveDoubling => emit_recursive_doubling_inplace(
                set,
                lane_members,
                &data,
                &scratch,
                AlgorithmId::Lane,
                2,
                stage1_steps,
            )?,
        };
        debug_assert!(stage2_steps == 0 || stage2_steps == steps);
        stage2_steps = steps;
    }

    // Stage 3: intra-group allgatherv.
    let stage3_base = stage1_steps + stage2_steps;
    for (g, members) in groups.iter().enumerate() {
        let views: Vec<Region> = members.iter().map(|&r| bufs[r].recv).collect();
        emit_allgatherv_ring(set, members, &views, &plans[g], AlgorithmId::Lane, 3, stage3_base);
    }
    Ok(())
}
