//! Event traces: the complete, deterministic record of one run.

use sha2::{Digest, Sha256};

use super::{LocalityClass, Tag};

/// What a trace entry records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A matched point-to-point message (one entry per matched pair).
    Message,
    /// A local kernel launch (reduction or copy).
    Kernel,
    /// A barrier passage.
    Barrier,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Message => "msg",
            Self::Kernel => "kernel",
            Self::Barrier => "barrier",
        }
    }
}

/// One trace entry. For kernel and barrier events `src == dst == rank`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub step: u32,
    pub kind: EventKind,
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub count: usize,
    pub locality: LocalityClass,
}

/// Ordered event list plus per-rank step counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    events: Vec<TraceEvent>,
    steps_per_rank: Vec<u32>,
}

impl EventTrace {
    pub(crate) fn new(world_size: usize) -> Self {
        Self { events: Vec::new(), steps_per_rank: vec![0; world_size] }
    }

    pub(crate) fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub(crate) fn count_step(&mut self, rank: usize) {
        self.steps_per_rank[rank] += 1;
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Actions executed per rank.
    pub fn steps_per_rank(&self) -> &[u32] {
        &self.steps_per_rank
    }

    pub fn world_size(&self) -> usize {
        self.steps_per_rank.len()
    }

    pub fn messages(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Message)
    }

    pub fn kernels(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Kernel)
    }

    /// Messages sent by each rank.
    pub fn sends_per_rank(&self) -> Vec<usize> {
        let mut sends = vec![0; self.world_size()];
        for m in self.messages() {
            sends[m.src] += 1;
        }
        sends
    }

    /// Total message payload elements per locality class
    /// `(intra_gpu, intra_node, inter_node)`, each message counted once.
    pub fn elements_by_class(&self) -> (usize, usize, usize) {
        let mut totals = (0, 0, 0);
        for m in self.messages() {
            match m.locality {
                LocalityClass::IntraGpu => totals.0 += m.count,
                LocalityClass::IntraNode => totals.1 += m.count,
                LocalityClass::InterNode => totals.2 += m.count,
            }
        }
        totals
    }

    /// JSON-lines serialization, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 96);
        for e in &self.events {
            out.push_str(&format!(
                "{{\"step\":{},\"kind\":\"{}\",\"src\":{},\"dst\":{},\"tag\":{},\"count\":{},\"locality_class\":\"{}\"}}\n",
                e.step,
                e.kind.as_str(),
                e.src,
                e.dst,
                e.tag.packed(),
                e.count,
                e.locality.as_str()
            ));
        }
        out
    }

    /// SHA-256 of the JSON-lines serialization, hex-encoded. Two runs are
    /// byte-identical iff their digests match.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
