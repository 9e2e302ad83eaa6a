//! Multi-process-per-GPU allreduce variants.
//!
//! Each GPU's leader allocates one send and one recv buffer; the `ppg`
//! processes of that GPU window them at their local-rank offsets via the
//! IPC registries. The windows for equal local ranks are then reduced
//! across GPUs: either independently per `new_comm` with a flat algorithm
//! (standard variant), or with the three-stage lane structure over
//! `comm_group`/`comm_lane` (lane variant). Message count scales by `ppg`
//! while per-message size scales by `1/ppg`; total volume is unchanged.

use crate::buffers::{BufferStore, IpcRegistry, Region};
use crate::topology::{CommunicatorMap, TopologySpec};

use super::flat::emit_flat;
use super::lane::emit_lane_allreduce;
use super::{CollectiveError, FlatAlgorithm, LaneInner, MemberBufs, ProgramSet};

fn windowed_bufs(
    topo: &TopologySpec,
    store: &BufferStore,
    send_reg: &IpcRegistry,
    recv_reg: &IpcRegistry,
    scratch: Option<&[Region]>,
) -> Result<Vec<MemberBufs>, CollectiveError> {
    let ppg = topo.ppg();
    let mut bufs = Vec::with_capacity(topo.world_size());
    for rank in 0..topo.world_size() {
        let info = topo.rank_info(rank).expect("rank in range");
        let send = send_reg.open_view(store, info, ppg)?;
        let recv = recv_reg.open_view(store, info, ppg)?;
        bufs.push(MemberBufs {
            send: send.region(),
            recv: recv.region(),
            scratch: scratch.and_then(|s| s.get(rank)).copied(),
        });
    }
    Ok(bufs)
}

/// Standard multi-PPG allreduce: every `new_comm` (the ranks sharing one
/// local rank, one per GPU) independently runs `inner` over its members'
/// windows. With `ppg = 1` this degenerates to the plain flat algorithm
/// and produces an identical trace.
///
/// `scratch` is required (one region per rank, window-sized) only when
/// `inner` needs receive workspace.
pub fn multi_ppg_standard(
    topo: &TopologySpec,
    cmap: &CommunicatorMap,
    store: &BufferStore,
    send_reg: &IpcRegistry,
    recv_reg: &IpcRegistry,
    scratch: Option<&[Region]>,
    inner: FlatAlgorithm,
) -> Result<ProgramSet, CollectiveError> {
    let bufs = windowed_bufs(topo, store, send_reg, recv_reg, scratch)?;
    let mut set = ProgramSet::new();
    for local_rank in 0..topo.ppg() {
        let members = cmap.new_comm(local_rank);
        let member_bufs: Vec<MemberBufs> = members.iter().map(|&r| bufs[r]).collect();
        emit_flat(&mut set, members, &member_bufs, inner, 0)?;
    }
    Ok(set)
}

/// Multi-PPG lane allreduce: groups are the same-local-rank processes of
/// one node (one per GPU), lanes the same-local-rank, same-GPU processes
/// across nodes. Inter-node traffic per rank drops to
/// `c_buf / (ppg * gpus_per_node)` chunk exchanges.
///
/// `scratch` is indexed by rank and must hold each rank's stage-2 chunk
/// (`window_len / gpus_per_node`, rounded up).
pub fn multi_ppg_lane(
    topo: &TopologySpec,
    cmap: &CommunicatorMap,
    store: &BufferStore,
    send_reg: &IpcRegistry,
    recv_reg: &IpcRegistry,
    scratch: &[Region],
    inner: LaneInner,
) -> Result<ProgramSet, CollectiveError> {
    let bufs = windowed_bufs(topo, store, send_reg, recv_reg, Some(scratch))?;
    let mut groups = Vec::with_capacity(topo.nodes() * topo.ppg());
    for node in 0..topo.nodes() {
        for local_rank in 0..topo.ppg() {
            groups.push(cmap.comm_group(topo.rank_of(node, 0, local_rank)));
        }
    }
    let mut lanes = Vec::with_capacity(topo.gpus_per_node() * topo.ppg());
    for gpu in 0..topo.gpus_per_node() {
        for local_rank in 0..topo.ppg() {
            lanes.push(cmap.comm_lane(topo.rank_of(0, gpu, local_rank)));
        }
    }
    let mut set = ProgramSet::new();
    emit_lane_allreduce(&mut set, &groups, &lanes, &bufs, inner)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::FlatWorld;
    use super::super::{oracle_allreduce, ring_allreduce};
    use super::*;
    use crate::buffers::{Fill, FillPattern};
    use crate::simcore::{run, EventTrace, LocalityClass};

    /// Shared-buffer world: one send and one recv buffer per GPU, published
    /// through registries, plus window-sized private scratch per rank.
    struct PpgWorld {
        spec: TopologySpec,
        cmap: CommunicatorMap,
        store: BufferStore,
        send_reg: IpcRegistry,
        recv_reg: IpcRegistry,
        scratch: Vec<Region>,
        gpu_send: Vec<crate::buffers::BufferId>,
        gpu_recv: Vec<crate::buffers::BufferId>,
    }

    impl PpgWorld {
        fn new(spec: TopologySpec, count: usize, fill: Fill) -> Self {
            let cmap = CommunicatorMap::build(&spec);
            let mut store = BufferStore::new();
            let mut send_reg = IpcRegistry::new();
            let mut recv_reg = IpcRegistry::new();
            let mut gpu_send = Vec::new();
            let mut gpu_recv = Vec::new();
            for node in 0..spec.nodes() {
                for gpu in 0..spec.gpus_per_node() {
                    let leader = spec.rank_info(spec.leader_of(node, gpu)).unwrap();
                    let stream = (node * spec.gpus_per_node() + gpu) as u64;
                    gpu_send.push(
                        store
                            .allocate_shared(&mut send_reg, leader, fill.generate(count, stream))
                            .unwrap(),
                    );
                    gpu_recv.push(
                        store.allocate_shared(&mut recv_reg, leader, vec![0.0; count]).unwrap(),
                    );
                }
            }
            let mut scratch = Vec::new();
            for rank in 0..spec.world_size() {
                let info = spec.rank_info(rank).unwrap();
                let wlen = send_reg.open_view(&store, info, spec.ppg()).unwrap().len;
                let id = store.allocate_private(info, vec![0.0; wlen.max(1)]);
                scratch.push(Region::new(id, 0, wlen.max(1)));
            }
            Self { spec, cmap, store, send_reg, recv_reg, scratch, gpu_send, gpu_recv }
        }

        fn run(&mut self, set: ProgramSet) -> EventTrace {
            let programs = set.into_programs(self.spec.world_size()).unwrap();
            run(&self.spec, &mut self.store, &programs).unwrap()
        }

        fn inputs(&self) -> Vec<Vec<f64>> {
            self.gpu_send
                .iter()
                .map(|&id| self.store.buffer(id).unwrap().data().to_vec())
                .collect()
        }

        fn gpu_result(&self, gpu: usize) -> Vec<f64> {
            self.store.buffer(self.gpu_recv[gpu]).unwrap().data().to_vec()
        }
    }

    fn oracle(inputs: &[Vec<f64>]) -> Vec<f64> {
        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        oracle_allreduce(&refs).unwrap()
    }

    #[test]
    fn single_ppg_standard_traces_identically_to_plain_ring() {
        let spec = TopologySpec::new(2, 2, 1).unwrap();
        let fill = Fill::new(FillPattern::RandInt, 42);
        let mut ppg_world = PpgWorld::new(spec, 12, fill);
        let set = multi_ppg_standard(
            &spec,
            &ppg_world.cmap,
            &ppg_world.store,
            &ppg_world.send_reg,
            &ppg_world.recv_reg,
            None,
            FlatAlgorithm::Ring,
        )
        .unwrap();
        let ppg_trace = ppg_world.run(set);

        let inputs: Vec<Vec<f64>> = (0..4).map(|r| fill.generate(12, r as u64)).collect();
        let mut flat = FlatWorld::on(spec, &inputs);
        let set = ring_allreduce(&flat.members(), &flat.bufs).unwrap();
        let flat_trace = flat.run(set);

        assert_eq!(ppg_trace.to_jsonl(), flat_trace.to_jsonl());
        let expect = oracle(&inputs);
        for gpu in 0..4 {
            assert_eq!(ppg_world.gpu_result(gpu), expect);
        }
    }

    #[test]
    fn standard_ones_reduce_to_gpu_count() {
        let spec = TopologySpec::new(2, 2, 2).unwrap();
        let mut world = PpgWorld::new(spec, 16, Fill::new(FillPattern::Ones, 0));
        let set = multi_ppg_standard(
            &spec,
            &world.cmap,
            &world.store,
            &world.send_reg,
            &world.recv_reg,
            None,
            FlatAlgorithm::Ring,
        )
        .unwrap();
        world.run(set);
        for gpu in 0..4 {
            assert_eq!(world.gpu_result(gpu), vec![4.0; 16]);
        }
    }

    #[test]
    fn message_count_scales_with_ppg_and_sizes_shrink() {
        let spec1 = TopologySpec::new(2, 4, 1).unwrap();
        let spec4 = TopologySpec::new(2, 4, 4).unwrap();
        let fill = Fill::new(FillPattern::RandInt, 7);
        let count = 1 << 10;

        let run_of = |spec: TopologySpec| {
            let mut world = PpgWorld::new(spec, count, fill);
            let set = multi_ppg_standard(
                &spec,
                &world.cmap,
                &world.store,
                &world.send_reg,
                &world.recv_reg,
                None,
                FlatAlgorithm::Ring,
            )
            .unwrap();
            let trace = world.run(set);
            let expect = oracle(&world.inputs());
            for gpu in 0..spec.gpu_count() {
                assert_eq!(world.gpu_result(gpu), expect);
            }
            let volume: usize = trace.messages().map(|m| m.count).sum();
            (trace.messages().count(), volume)
        };

        let (messages1, volume1) = run_of(spec1);
        let (messages4, volume4) = run_of(spec4);
        assert_eq!(messages4, 4 * messages1);
        assert_eq!(volume4, volume1);
    }

    #[test]
    fn standard_rd_inner_uses_windows() {
        let spec = TopologySpec::new(2, 2, 2).unwrap();
        let mut world = PpgWorld::new(spec, 24, Fill::new(FillPattern::RandInt, 3));
        let set = multi_ppg_standard(
            &spec,
            &world.cmap,
            &world.store,
            &world.send_reg,
            &world.recv_reg,
            Some(&world.scratch.clone()),
            FlatAlgorithm::RecursiveDoubling,
        )
        .unwrap();
        let trace = world.run(set);
        let expect = oracle(&world.inputs());
        for gpu in 0..4 {
            assert_eq!(world.gpu_result(gpu), expect);
        }
        // log2(4) sends per rank, each a full window of 12 elements.
        assert_eq!(trace.sends_per_rank(), vec![2; 8]);
        assert!(trace.messages().all(|m| m.count == 12));
    }

    #[test]
    fn lane_single_node_has_no_internode_traffic() {
        let spec = TopologySpec::new(1, 4, 2).unwrap();
        let mut world = PpgWorld::new(spec, 32, Fill::new(FillPattern::RandInt, 9));
        let set = multi_ppg_lane(
            &spec,
            &world.cmap,
            &world.store,
            &world.send_reg,
            &world.recv_reg,
            &world.scratch.clone(),
            LaneInner::Ring,
        )
        .unwrap();
        let trace = world.run(set);
        let expect = oracle(&world.inputs());
        for gpu in 0..4 {
            assert_eq!(world.gpu_result(gpu), expect);
        }
        assert_eq!(trace.elements_by_class().2, 0);
    }

    #[test]
    fn lane_stage_two_chunk_matches_ppg_partition() {
        let spec = TopologySpec::new(2, 4, 2).unwrap();
        let count = 1 << 10;
        for inner in [LaneInner::Ring, LaneInner::RecursiveDoubling] {
            let mut world = PpgWorld::new(spec, count, Fill::new(FillPattern::RandInt, 5));
            let set = multi_ppg_lane(
                &spec,
                &world.cmap,
                &world.store,
                &world.send_reg,
                &world.recv_reg,
                &world.scratch.clone(),
                inner,
            )
            .unwrap();
            let trace = world.run(set);
            let expect = oracle(&world.inputs());
            for gpu in 0..8 {
                assert_eq!(world.gpu_result(gpu), expect);
            }
            // Stage-2 chunk per rank: 1024 / (2 * 4) = 128 elements; with
            // two nodes each rank sends exactly one chunk's worth.
            let chunk = count / (2 * 4);
            for rank in 0..spec.world_size() {
                let sent: usize = trace
                    .messages()
                    .filter(|m| m.tag.stage == 2 && m.src == rank)
                    .map(|m| m.count)
                    .sum();
                assert_eq!(sent, chunk);
            }
        }
    }

    #[test]
    fn lane_internode_messages_only_in_stage_two() {
        let spec = TopologySpec::new(2, 2, 2).unwrap();
        let mut world = PpgWorld::new(spec, 64, Fill::new(FillPattern::RandInt, 1));
        let set = multi_ppg_lane(
            &spec,
            &world.cmap,
            &world.store,
            &world.send_reg,
            &world.recv_reg,
            &world.scratch.clone(),
            LaneInner::Ring,
        )
        .unwrap();
        let trace = world.run(set);
        for m in trace.messages() {
            assert_eq!(m.locality == LocalityClass::InterNode, m.tag.stage == 2);
        }
    }

    #[test]
    fn rd_inner_rejects_non_power_of_two_new_comm() {
        let spec = TopologySpec::new(3, 2, 1).unwrap();
        let world = PpgWorld::new(spec, 12, Fill::new(FillPattern::Ones, 0));
        let err = multi_ppg_standard(
            &spec,
            &world.cmap,
            &world.store,
            &world.send_reg,
            &world.recv_reg,
            Some(&world.scratch),
            FlatAlgorithm::RecursiveDoubling,
        )
        .unwrap_err();
        assert_eq!(err, CollectiveError::NotPowerOfTwo { size: 6 });
    }
}
