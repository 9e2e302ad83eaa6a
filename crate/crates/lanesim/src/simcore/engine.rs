//! Round-robin rendezvous scheduler.
//!
//! Programs are payload-independent and messages match on `(src, dst, tag)`,
//! so any fair schedule yields the same trace; a fixed round-robin sweep is
//! used for reproducibility. Sends block until the matching receive is the
//! destination's current action (large-message rendezvous semantics).

use std::collections::HashMap;

use crate::buffers::{BufferStore, Region};
use crate::topology::{RankInfo, TopologySpec};

use super::trace::{EventKind, EventTrace, TraceEvent};
use super::{Action, LocalityClass, Op, RecvPart, ReduceOp, SendPart, SimError};

/// `dst[i] <- dst[i] op src[i]`. Ranges must have equal length and must not
/// alias; zero-length ranges are a no-op.
pub fn reduce_local(
    store: &mut BufferStore,
    dst: Region,
    src: Region,
    op: ReduceOp,
) -> Result<(), SimError> {
    store.check_region(&dst)?;
    store.check_region(&src)?;
    if dst.len != src.len {
        return Err(SimError::LocalLengthMismatch { dst_len: dst.len, src_len: src.len });
    }
    if dst.len == 0 {
        return Ok(());
    }
    if dst.buffer == src.buffer {
        if dst.overlaps(&src) {
            return Err(SimError::RegionOverlap { dst, src });
        }
        let data = store.data_mut(dst.buffer);
        let (d_off, s_off) = (dst.offset, src.offset);
        if d_off < s_off {
            let (lo, hi) = data.split_at_mut(s_off);
            apply(op, &mut lo[d_off..d_off + dst.len], &hi[..src.len]);
        } else {
            let (lo, hi) = data.split_at_mut(d_off);
            apply(op, &mut hi[..dst.len], &lo[s_off..s_off + src.len]);
        }
    } else {
        let (d, s) = store.pair_mut(dst.buffer, src.buffer);
        apply(op, &mut d[dst.offset..dst.end()], &s[src.offset..src.end()]);
    }
    Ok(())
}

#[inline]
fn apply(op: ReduceOp, dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = op.apply(*d, *s);
    }
}

/// `dst[i] <- src[i]`. Same contract as [`reduce_local`].
pub fn copy_local(store: &mut BufferStore, dst: Region, src: Region) -> Result<(), SimError> {
    store.check_region(&dst)?;
    store.check_region(&src)?;
    if dst.len != src.len {
        return Err(SimError::LocalLengthMismatch { dst_len: dst.len, src_len: src.len });
    }
    if dst.len == 0 {
        return Ok(());
    }
    if dst.buffer == src.buffer {
        if dst.overlaps(&src) {
            return Err(SimError::RegionOverlap { dst, src });
        }
        store.data_mut(dst.buffer).copy_within(src.offset..src.end(), dst.offset);
    } else {
        let (d, s) = store.pair_mut(dst.buffer, src.buffer);
        d[dst.offset..dst.end()].copy_from_slice(&s[src.offset..src.end()]);
    }
    Ok(())
}

struct Engine<'a> {
    infos: Vec<RankInfo>,
    programs: &'a [Vec<Action>],
    pc: Vec<usize>,
    sent: Vec<bool>,
    received: Vec<bool>,
    arrived: Vec<bool>,
    barrier_arrivals: HashMap<u64, usize>,
    trace: EventTrace,
}

/// Run one program per rank to completion and return the event trace.
///
/// Fails with a deadlock error naming every blocked rank and its pending
/// operation if no rank can make progress, and with a protocol error if a
/// matched send/receive pair disagrees on length.
pub fn run(
    spec: &TopologySpec,
    store: &mut BufferStore,
    programs: &[Vec<Action>],
) -> Result<EventTrace, SimError> {
    let world_size = spec.world_size();
    if programs.len() != world_size {
        return Err(SimError::ProgramCountMismatch { programs: programs.len(), world_size });
    }
    let infos: Vec<RankInfo> =
        (0..world_size).map(|r| spec.rank_info(r).expect("rank in range")).collect();

    let mut engine = Engine {
        infos,
        programs,
        pc: vec![0; world_size],
        sent: vec![false; world_size],
        received: vec![false; world_size],
        arrived: vec![false; world_size],
        barrier_arrivals: HashMap::new(),
        trace: EventTrace::new(world_size),
    };

    loop {
        let mut progressed = false;
        for rank in 0..world_size {
            while engine.try_step(rank, store)? {
                progressed = true;
            }
        }
        if (0..world_size).all(|r| engine.pc[r] == programs[r].len()) {
            return Ok(engine.trace);
        }
        if !progressed {
            return Err(SimError::Deadlock { blocked: engine.blocked() });
        }
    }
}

impl<'a> Engine<'a> {
    fn current(&self, rank: usize) -> Option<&'a Action> {
        self.programs[rank].get(self.pc[rank])
    }

    fn advance(&mut self, rank: usize) {
        self.pc[rank] += 1;
        self.sent[rank] = false;
        self.received[rank] = false;
        self.trace.count_step(rank);
    }

    fn transfer_done(&self, rank: usize, send: &Option<SendPart>, recv: &Option<RecvPart>) -> bool {
        (send.is_none() || self.sent[rank]) && (recv.is_none() || self.received[rank])
    }

    /// Execute at most one unit of progress for `rank`. Returns true if
    /// anything changed (an action ran, a message matched, or a barrier
    /// arrival was recorded).
    fn try_step(&mut self, rank: usize, store: &mut BufferStore) -> Result<bool, SimError> {
        let Some(action) = self.current(rank) else {
            return Ok(false);
        };
        let action = action.clone();
        match &action.op {
            Op::Reduce { dst, src, op } => {
                reduce_local(store, *dst, *src, *op)?;
                self.record_local(rank, &action, dst.len);
                self.advance(rank);
                Ok(true)
            }
            Op::Copy { dst, src } => {
                copy_local(store, *dst, *src)?;
                self.record_local(rank, &action, dst.len);
                self.advance(rank);
                Ok(true)
            }
            Op::Barrier { size } => {
                let key = action.tag.packed();
                let mut progressed = false;
                if !self.arrived[rank] {
                    self.arrived[rank] = true;
                    *self.barrier_arrivals.entry(key).or_insert(0) += 1;
                    progressed = true;
                }
                if self.barrier_arrivals.get(&key) == Some(size) {
                    self.trace.push(TraceEvent {
                        step: action.tag.step,
                        kind: EventKind::Barrier,
                        src: rank,
                        dst: rank,
                        tag: action.tag,
                        count: 0,
                        locality: LocalityClass::IntraGpu,
                    });
                    self.arrived[rank] = false;
                    self.advance(rank);
                    progressed = true;
                }
                Ok(progressed)
            }
            Op::Transfer { send, recv } => {
                let mut progressed = false;
                if let Some(s) = send {
                    if !self.sent[rank] && self.try_send(rank, &action, s, store)? {
                        progressed = true;
                    }
                }
                if let Some(r) = recv {
                    if !self.received[rank] && self.try_recv(rank, &action, r, store)? {
                        progressed = true;
                    }
                }
                if self.transfer_done(rank, send, recv) {
                    self.advance(rank);
                    progressed = true;
                }
                Ok(progressed)
            }
        }
    }

    /// Try to match `rank`'s pending send against the destination's
    /// current receive.
    fn try_send(
        &mut self,
        rank: usize,
        action: &Action,
        send: &SendPart,
        store: &mut BufferStore,
    ) -> Result<bool, SimError> {
        let dst = send.to;
        if dst == rank {
            return Err(SimError::SelfMessage { rank, tag: action.tag });
        }
        let Some(partner) = self.current(dst) else {
            return Ok(false);
        };
        let Op::Transfer { recv: Some(recv), send: partner_send } = &partner.op else {
            return Ok(false);
        };
        if self.received[dst] || recv.from != rank || partner.tag != action.tag {
            return Ok(false);
        }
        let (recv, partner_send) = (*recv, *partner_send);
        self.deliver(rank, dst, action.tag, send.range, recv.range, store)?;
        self.sent[rank] = true;
        self.received[dst] = true;
        if self.transfer_done(dst, &partner_send, &Some(recv)) {
            self.advance(dst);
        }
        Ok(true)
    }

    /// Try to match `rank`'s pending receive against the source's
    /// current send.
    fn try_recv(
        &mut self,
        rank: usize,
        action: &Action,
        recv: &RecvPart,
        store: &mut BufferStore,
    ) -> Result<bool, SimError> {
        let src = recv.from;
        if src == rank {
            return Err(SimError::SelfMessage { rank, tag: action.tag });
        }
        let Some(partner) = self.current(src) else {
            return Ok(false);
        };
        let Op::Transfer { send: Some(send), recv: partner_recv } = &partner.op else {
            return Ok(false);
        };
        if self.sent[src] || send.to != rank || partner.tag != action.tag {
            return Ok(false);
        }
        let (send, partner_recv) = (*send, *partner_recv);
        self.deliver(src, rank, action.tag, send.range, recv.range, store)?;
        self.sent[src] = true;
        self.received[rank] = true;
        if self.transfer_done(src, &Some(send), &partner_recv) {
            self.advance(src);
        }
        Ok(true)
    }

    /// Move a matched message's payload and record it.
    fn deliver(
        &mut self,
        src: usize,
        dst: usize,
        tag: super::Tag,
        send_range: Region,
        recv_range: Region,
        store: &mut BufferStore,
    ) -> Result<(), SimError> {
        if send_range.len != recv_range.len {
            return Err(SimError::LengthMismatch {
                src,
                dst,
                tag,
                send_len: send_range.len,
                recv_len: recv_range.len,
            });
        }
        if send_range.len > 0 {
            copy_local(store, recv_range, send_range)?;
        } else {
            store.check_region(&send_range)?;
            store.check_region(&recv_range)?;
        }
        self.trace.push(TraceEvent {
            step: tag.step,
            kind: EventKind::Message,
            src,
            dst,
            tag,
            count: send_range.len,
            locality: LocalityClass::classify(&self.infos[src], &self.infos[dst]),
        });
        Ok(())
    }

    fn record_local(&mut self, rank: usize, action: &Action, count: usize) {
        self.trace.push(TraceEvent {
            step: action.tag.step,
            kind: EventKind::Kernel,
            src: rank,
            dst: rank,
            tag: action.tag,
            count,
            locality: LocalityClass::IntraGpu,
        });
    }

    fn blocked(&self) -> Vec<(usize, String)> {
        let mut blocked = Vec::new();
        for rank in 0..self.programs.len() {
            let Some(action) = self.current(rank) else {
                continue;
            };
            let what = match &action.op {
                Op::Transfer { send, recv } => {
                    let mut parts = Vec::new();
                    if let Some(s) = send {
                        if !self.sent[rank] {
                            parts.push(format!("send to {} ({} elems)", s.to, s.range.len));
                        }
                    }
                    if let Some(r) = recv {
                        if !self.received[rank] {
                            parts.push(format!("recv from {} ({} elems)", r.from, r.range.len));
                        }
                    }
                    format!("{} pending, tag {}", parts.join(" + "), action.tag)
                }
                Op::Barrier { size } => format!("barrier of {size} pending, tag {}", action.tag),
                op => format!("unreachable local op {op:?}"),
            };
            blocked.push((rank, what));
        }
        blocked
    }
}
