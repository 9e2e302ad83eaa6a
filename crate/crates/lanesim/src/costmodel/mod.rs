//! Locality-aware latency-bandwidth cost model.
//!
//! A trace is priced step by step, bulk-synchronously: within one step each
//! rank pays the most expensive message it touches (send and receive
//! overlap, as in a fused exchange) plus the sum of its kernel launches;
//! the step costs the maximum over ranks; the run costs the sum over steps.
//!
//! A message of `L` elements costs `alpha(class) + L * beta(class) *
//! contention`, where contention applies only to inter-node messages: the
//! messages leaving one node in one step share that node's NICs, so beta is
//! scaled by `max(1, concurrent / nics_per_node)`. A kernel of `L` elements
//! costs `kappa_kernel + L * gamma_reduce`.

mod sweep;

pub use sweep::{rows_to_csv, sweep, SweepAxes, SweepRow, CSV_HEADER};

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::simcore::{EventKind, EventTrace, LocalityClass, TraceEvent};
use crate::topology::TopologySpec;

/// Model parameters. All times are seconds; betas and gamma are seconds per
/// element (of the 8-byte element type).
///
/// The defaults are order-of-magnitude placeholders chosen to reproduce
/// algorithm orderings, not absolute times on any machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub alpha_intra_gpu: f64,
    pub alpha_intra_node: f64,
    pub alpha_inter_node: f64,
    pub beta_intra_gpu: f64,
    pub beta_intra_node: f64,
    pub beta_inter_node: f64,
    pub nics_per_node: usize,
    pub gamma_reduce: f64,
    pub kappa_kernel: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha_intra_gpu: 0.0,
            alpha_intra_node: 1e-6,
            alpha_inter_node: 2e-6,
            beta_intra_gpu: 1e-11,
            beta_intra_node: 5e-11,
            beta_inter_node: 4e-10,
            nics_per_node: 1,
            gamma_reduce: 1e-11,
            kappa_kernel: 5e-6,
        }
    }
}

impl CostParams {
    /// Locality must lower cost: alpha ordering is enforced, everything
    /// must be finite and nonnegative, and at least one NIC must exist.
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("alpha_intra_gpu", self.alpha_intra_gpu),
            ("alpha_intra_node", self.alpha_intra_node),
            ("alpha_inter_node", self.alpha_inter_node),
            ("beta_intra_gpu", self.beta_intra_gpu),
            ("beta_intra_node", self.beta_intra_node),
            ("beta_inter_node", self.beta_inter_node),
            ("gamma_reduce", self.gamma_reduce),
            ("kappa_kernel", self.kappa_kernel),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(CostError::InvalidParams(format!(
                    "{name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if self.nics_per_node == 0 {
            return Err(CostError::InvalidParams("nics_per_node must be at least 1".into()));
        }
        if self.alpha_inter_node < self.alpha_intra_node
            || self.alpha_intra_node < self.alpha_intra_gpu
        {
            return Err(CostError::InvalidParams(
                "alpha must satisfy inter_node >= intra_node >= intra_gpu".into(),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self, class: LocalityClass) -> f64 {
        match class {
            LocalityClass::IntraGpu => self.alpha_intra_gpu,
            LocalityClass::IntraNode => self.alpha_intra_node,
            LocalityClass::InterNode => self.alpha_inter_node,
        }
    }

    pub fn beta(&self, class: LocalityClass) -> f64 {
        match class {
            LocalityClass::IntraGpu => self.beta_intra_gpu,
            LocalityClass::IntraNode => self.beta_intra_node,
            LocalityClass::InterNode => self.beta_inter_node,
        }
    }

    /// Set one parameter by name.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CostError> {
        let float = || -> Result<f64, CostError> {
            value.parse().map_err(|e| CostError::ParseError {
                line: 0,
                message: format!("bad float `{value}` for `{key}`: {e}"),
            })
        };
        match key {
            "alpha_intra_gpu" => self.alpha_intra_gpu = float()?,
            "alpha_intra_node" => self.alpha_intra_node = float()?,
            "alpha_inter_node" => self.alpha_inter_node = float()?,
            "beta_intra_gpu" => self.beta_intra_gpu = float()?,
            "beta_intra_node" => self.beta_intra_node = float()?,
            "beta_inter_node" => self.beta_inter_node = float()?,
            "gamma_reduce" => self.gamma_reduce = float()?,
            "kappa_kernel" => self.kappa_kernel = float()?,
            "nics_per_node" => {
                self.nics_per_node = value.parse().map_err(|e| CostError::ParseError {
                    line: 0,
                    message: format!("bad integer `{value}` for `{key}`: {e}"),
                })?;
            }
            other => return Err(CostError::UnknownKey { line: 0, key: other.to_string() }),
        }
        Ok(())
    }

    /// Parse `key=value` lines over the defaults. `#` starts a comment.
    pub fn from_key_values(text: &str) -> Result<Self, CostError> {
        let mut params = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CostError::ParseError {
                    line,
                    message: format!("expected key=value, got `{content}`"),
                });
            };
            params.apply(key.trim(), value.trim()).map_err(|e| match e {
                CostError::ParseError { message, .. } => CostError::ParseError { line, message },
                CostError::UnknownKey { key, .. } => CostError::UnknownKey { line, key },
                other => other,
            })?;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostError {
    InvalidParams(String),
    MalformedTrace(String),
    ParseError { line: usize, message: String },
    UnknownKey { line: usize, key: String },
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParams(msg) => write!(f, "invalid cost parameters: {msg}"),
            Self::MalformedTrace(msg) => write!(f, "malformed trace: {msg}"),
            Self::ParseError { line: 0, message } => write!(f, "{message}"),
            Self::ParseError { line, message } => write!(f, "cost config line {line}: {message}"),
            Self::UnknownKey { line: 0, key } => write!(f, "unknown cost parameter `{key}`"),
            Self::UnknownKey { line, key } => {
                write!(f, "cost config line {line}: unknown key `{key}`")
            }
        }
    }
}

impl std::error::Error for CostError {}

/// Message and payload totals for one locality class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassTotals {
    pub messages: usize,
    pub elements: usize,
    pub bytes: usize,
}

/// Modeled time and accounting for one trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeledTime {
    pub total_seconds: f64,
    /// Seconds attributed to each stage id, ascending.
    pub stage_seconds: Vec<(u8, f64)>,
    pub intra_gpu: ClassTotals,
    pub intra_node: ClassTotals,
    pub inter_node: ClassTotals,
    pub kernels_total: usize,
    /// Number of distinct bulk-synchronous steps.
    pub critical_path_steps: usize,
}

impl ModeledTime {
    pub fn class(&self, class: LocalityClass) -> &ClassTotals {
        match class {
            LocalityClass::IntraGpu => &self.intra_gpu,
            LocalityClass::IntraNode => &self.intra_node,
            LocalityClass::InterNode => &self.inter_node,
        }
    }

    pub fn messages_total(&self) -> usize {
        self.intra_gpu.messages + self.intra_node.messages + self.inter_node.messages
    }

    pub fn stage(&self, stage: u8) -> f64 {
        self.stage_seconds
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, t)| *t)
            .unwrap_or(0.0)
    }
}

/// Attribute modeled time to a trace under `params`.
pub fn evaluate(
    trace: &EventTrace,
    spec: &TopologySpec,
    params: &CostParams,
) -> Result<ModeledTime, CostError> {
    params.validate()?;
    let world_size = spec.world_size();
    if trace.world_size() != world_size {
        return Err(CostError::MalformedTrace(format!(
            "trace covers {} ranks, topology has {world_size}",
            trace.world_size()
        )));
    }

    let mut by_step: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
    for event in trace.events() {
        check_event(event, spec)?;
        by_step.entry(event.step).or_default().push(event);
    }

    let mut out = ModeledTime {
        total_seconds: 0.0,
        stage_seconds: Vec::new(),
        intra_gpu: ClassTotals::default(),
        intra_node: ClassTotals::default(),
        inter_node: ClassTotals::default(),
        kernels_total: 0,
        critical_path_steps: by_step.len(),
    };
    let mut stage_acc: BTreeMap<u8, f64> = BTreeMap::new();

    let mut comm_cost = vec![0.0f64; world_size];
    let mut kernel_cost = vec![0.0f64; world_size];
    let mut outbound = vec![0usize; spec.nodes()];
    let node_of = |rank: usize| rank / spec.processes_per_node();

    for events in by_step.values() {
        for rank_cost in comm_cost.iter_mut().chain(kernel_cost.iter_mut()) {
            *rank_cost = 0.0;
        }
        for count in outbound.iter_mut() {
            *count = 0;
        }
        // First pass: how many inter-node messages leave each node.
        for event in events {
            if event.kind == EventKind::Message && event.locality == LocalityClass::InterNode {
                outbound[node_of(event.src)] += 1;
            }
        }
        let mut stage = None;
        for event in events {
            stage.get_or_insert(event.tag.stage);
            match event.kind {
                EventKind::Message => {
                    let contention = if event.locality == LocalityClass::InterNode {
                        (outbound[node_of(event.src)] as f64 / params.nics_per_node as f64)
                            .max(1.0)
                    } else {
                        1.0
                    };
                    let cost = params.alpha(event.locality)
                        + event.count as f64 * params.beta(event.locality) * contention;
                    comm_cost[event.src] = comm_cost[event.src].max(cost);
                    comm_cost[event.dst] = comm_cost[event.dst].max(cost);
                    let totals = match event.locality {
                        LocalityClass::IntraGpu => &mut out.intra_gpu,
                        LocalityClass::IntraNode => &mut out.intra_node,
                        LocalityClass::InterNode => &mut out.inter_node,
                    };
                    totals.messages += 1;
                    totals.elements += event.count;
                    totals.bytes += event.count * 8;
                }
                EventKind::Kernel => {
                    kernel_cost[event.src] +=
                        params.kappa_kernel + event.count as f64 * params.gamma_reduce;
                    out.kernels_total += 1;
                }
                EventKind::Barrier => {}
            }
        }
        let step_time = comm_cost
            .iter()
            .zip(&kernel_cost)
            .map(|(c, k)| c + k)
            .fold(0.0f64, f64::max);
        out.total_seconds += step_time;
        if let Some(stage) = stage {
            *stage_acc.entry(stage).or_insert(0.0) += step_time;
        }
    }

    out.stage_seconds = stage_acc.into_iter().collect();
    Ok(out)
}

fn check_event(event: &TraceEvent, spec: &TopologySpec) -> Result<(), CostError> {
    let world_size = spec.world_size();
    if event.src >= world_size || event.dst >= world_size {
        return Err(CostError::MalformedTrace(format!(
            "event endpoints ({}, {}) out of range for world size {world_size}",
            event.src, event.dst
        )));
    }
    if event.kind == EventKind::Message {
        let src = spec.rank_info(event.src).expect("checked");
        let dst = spec.rank_info(event.dst).expect("checked");
        if LocalityClass::classify(&src, &dst) != event.locality {
            return Err(CostError::MalformedTrace(format!(
                "message {} -> {} labeled {}, topology says {}",
                event.src,
                event.dst,
                event.locality,
                LocalityClass::classify(&src, &dst)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::{BufferStore, Fill, FillPattern, Region};
    use crate::collectives::testutil::FlatWorld;
    use crate::collectives::{lane_allreduce, ring_allreduce, LaneInner};
    use crate::simcore::{run, Action, AlgorithmId, Tag};
    use crate::topology::CommunicatorMap;

    fn approx(a: f64, b: f64, rel: f64) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!((a - b).abs() / scale <= rel, "{a} !~ {b}");
    }

    #[test]
    fn default_params_are_valid_and_ordered() {
        let p = CostParams::default();
        p.validate().unwrap();
        assert!(p.alpha_inter_node >= p.alpha_intra_node);
        assert!(p.alpha_intra_node >= p.alpha_intra_gpu);
    }

    #[test]
    fn bad_params_are_rejected() {
        let mut p = CostParams::default();
        p.alpha_intra_node = 1.0;
        assert!(matches!(p.validate(), Err(CostError::InvalidParams(_))));

        let mut p = CostParams::default();
        p.beta_inter_node = -1.0;
        assert!(matches!(p.validate(), Err(CostError::InvalidParams(_))));

        let mut p = CostParams::default();
        p.nics_per_node = 0;
        assert!(matches!(p.validate(), Err(CostError::InvalidParams(_))));
    }

    #[test]
    fn key_value_parsing_overrides_defaults() {
        let params = CostParams::from_key_values(
            "# comment\nalpha_inter_node = 4e-6\nnics_per_node=2\n\nbeta_inter_node=1e-9",
        )
        .unwrap();
        assert_eq!(params.alpha_inter_node, 4e-6);
        assert_eq!(params.nics_per_node, 2);
        assert_eq!(params.beta_inter_node, 1e-9);
        assert_eq!(params.alpha_intra_node, CostParams::default().alpha_intra_node);

        assert!(matches!(
            CostParams::from_key_values("no_such_key=1"),
            Err(CostError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            CostParams::from_key_values("alpha_intra_gpu"),
            Err(CostError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn empty_trace_costs_nothing() {
        let spec = TopologySpec::new(1, 2, 1).unwrap();
        let mut store = BufferStore::new();
        let programs = vec![vec![], vec![]];
        let trace = run(&spec, &mut store, &programs).unwrap();
        let time = evaluate(&trace, &spec, &CostParams::default()).unwrap();
        assert_eq!(time.total_seconds, 0.0);
        assert_eq!(time.critical_path_steps, 0);
        assert_eq!(time.messages_total(), 0);
    }

    /// rank 0 sends L elements to its intra-node neighbor.
    fn one_message_trace(len: usize) -> (TopologySpec, crate::simcore::EventTrace) {
        let spec = TopologySpec::new(1, 2, 1).unwrap();
        let mut store = BufferStore::new();
        let a = store.allocate_private(spec.rank_info(0).unwrap(), vec![1.0; len.max(1)]);
        let b = store.allocate_private(spec.rank_info(1).unwrap(), vec![0.0; len.max(1)]);
        let tag = Tag::new(AlgorithmId::Ring, 1, 0);
        let programs = vec![
            vec![Action::send(tag, 1, Region::new(a, 0, len))],
            vec![Action::recv(tag, 0, Region::new(b, 0, len))],
        ];
        let trace = run(&spec, &mut store, &programs).unwrap();
        (spec, trace)
    }

    #[test]
    fn single_intra_node_message_costs_alpha_plus_beta() {
        let params = CostParams::default();
        let (spec, trace) = one_message_trace(1000);
        let time = evaluate(&trace, &spec, &params).unwrap();
        approx(
            time.total_seconds,
            params.alpha_intra_node + 1000.0 * params.beta_intra_node,
            1e-12,
        );
        assert_eq!(time.intra_node.messages, 1);
        assert_eq!(time.intra_node.elements, 1000);
        assert_eq!(time.intra_node.bytes, 8000);
        assert_eq!(time.critical_path_steps, 1);
    }

    #[test]
    fn nic_contention_scales_internode_beta() {
        // Two nodes, two GPUs each; both of node 0's ranks send to node 1
        // in the same step.
        let spec = TopologySpec::new(2, 2, 1).unwrap();
        let build = || {
            let mut store = BufferStore::new();
            let bufs: Vec<_> = (0..4)
                .map(|r| store.allocate_private(spec.rank_info(r).unwrap(), vec![0.0; 100]))
                .collect();
            let tag = Tag::new(AlgorithmId::Ring, 1, 0);
            let programs = vec![
                vec![Action::send(tag, 2, Region::new(bufs[0], 0, 100))],
                vec![Action::send(tag, 3, Region::new(bufs[1], 0, 100))],
                vec![Action::recv(tag, 0, Region::new(bufs[2], 0, 100))],
                vec![Action::recv(tag, 1, Region::new(bufs[3], 0, 100))],
            ];
            run(&spec, &mut store, &programs).unwrap()
        };
        let trace = build();

        let mut params = CostParams::default();
        params.nics_per_node = 1;
        let contended = evaluate(&trace, &spec, &params).unwrap();
        approx(
            contended.total_seconds,
            params.alpha_inter_node + 100.0 * params.beta_inter_node * 2.0,
            1e-12,
        );

        params.nics_per_node = 2;
        let free = evaluate(&trace, &spec, &params).unwrap();
        approx(
            free.total_seconds,
            params.alpha_inter_node + 100.0 * params.beta_inter_node,
            1e-12,
        );
        assert!(contended.total_seconds > free.total_seconds);
    }

    fn ring_trace(
        nodes: usize,
        gpus: usize,
        count: usize,
    ) -> (TopologySpec, crate::simcore::EventTrace) {
        let spec = TopologySpec::new(nodes, gpus, 1).unwrap();
        let fill = Fill::new(FillPattern::RandInt, 42);
        let inputs: Vec<Vec<f64>> =
            (0..spec.world_size()).map(|r| fill.generate(count, r as u64)).collect();
        let mut world = FlatWorld::on(spec, &inputs);
        let set = ring_allreduce(&world.members(), &world.bufs).unwrap();
        let trace = world.run(set);
        (spec, trace)
    }

    fn lane_trace(
        nodes: usize,
        gpus: usize,
        count: usize,
    ) -> (TopologySpec, crate::simcore::EventTrace) {
        let spec = TopologySpec::new(nodes, gpus, 1).unwrap();
        let cmap = CommunicatorMap::build(&spec);
        let fill = Fill::new(FillPattern::RandInt, 42);
        let inputs: Vec<Vec<f64>> =
            (0..spec.world_size()).map(|r| fill.generate(count, r as u64)).collect();
        let mut world = FlatWorld::on(spec, &inputs);
        let set = lane_allreduce(&spec, &cmap, &world.bufs, LaneInner::Ring).unwrap();
        let trace = world.run(set);
        (spec, trace)
    }

    #[test]
    fn lane_beats_ring_on_four_nodes_at_large_size() {
        let (spec, ring) = ring_trace(4, 4, 1 << 16);
        let (_, lane) = lane_trace(4, 4, 1 << 16);
        let params = CostParams::default();
        let ring_time = evaluate(&ring, &spec, &params).unwrap();
        let lane_time = evaluate(&lane, &spec, &params).unwrap();
        assert!(lane_time.total_seconds < ring_time.total_seconds);
    }

    #[test]
    fn scaling_all_time_params_scales_total_exactly() {
        let (spec, trace) = ring_trace(2, 2, 500);
        let base = CostParams::default();
        let mut scaled = base;
        let k = 3.5;
        scaled.alpha_intra_gpu *= k;
        scaled.alpha_intra_node *= k;
        scaled.alpha_inter_node *= k;
        scaled.beta_intra_gpu *= k;
        scaled.beta_intra_node *= k;
        scaled.beta_inter_node *= k;
        scaled.gamma_reduce *= k;
        scaled.kappa_kernel *= k;
        let a = evaluate(&trace, &spec, &base).unwrap();
        let b = evaluate(&trace, &spec, &scaled).unwrap();
        approx(b.total_seconds, k * a.total_seconds, 1e-12);
        for ((s1, t1), (s2, t2)) in a.stage_seconds.iter().zip(&b.stage_seconds) {
            assert_eq!(s1, s2);
            approx(*t2, k * *t1, 1e-12);
        }
    }

    #[test]
    fn zero_alpha_time_is_proportional_to_critical_path_volume() {
        let (spec, trace) = ring_trace(2, 4, 1024);
        let beta = 1e-9;
        let params = CostParams {
            alpha_intra_gpu: 0.0,
            alpha_intra_node: 0.0,
            alpha_inter_node: 0.0,
            beta_intra_gpu: beta,
            beta_intra_node: beta,
            beta_inter_node: beta,
            nics_per_node: usize::MAX,
            gamma_reduce: 0.0,
            kappa_kernel: 0.0,
        };
        let time = evaluate(&trace, &spec, &params).unwrap();

        // Independent accounting: per step, the largest message any rank
        // touches.
        let mut steps: BTreeMap<u32, usize> = BTreeMap::new();
        for m in trace.messages() {
            let e = steps.entry(m.step).or_insert(0);
            *e = (*e).max(m.count);
        }
        let critical_volume: usize = steps.values().sum();
        approx(time.total_seconds, beta * critical_volume as f64, 1e-9);
    }

    #[test]
    fn raising_internode_alpha_never_shrinks_lane_advantage() {
        let (spec, ring) = ring_trace(4, 2, 4096);
        let (_, lane) = lane_trace(4, 2, 4096);
        let mut last_advantage = f64::MIN;
        for alpha in [2e-6, 4e-6, 8e-6, 1.6e-5, 3.2e-5] {
            let mut params = CostParams::default();
            params.alpha_inter_node = alpha;
            let ring_time = evaluate(&ring, &spec, &params).unwrap().total_seconds;
            let lane_time = evaluate(&lane, &spec, &params).unwrap().total_seconds;
            let advantage = ring_time - lane_time;
            assert!(advantage >= last_advantage - 1e-15);
            last_advantage = advantage;
        }
    }

    #[test]
    fn mislabeled_locality_is_rejected() {
        let spec = TopologySpec::new(2, 1, 1).unwrap();
        let (_, trace) = one_message_trace(4);
        // The trace was produced on a (1,2,1) topology where the message is
        // intra-node; on (2,1,1) the same endpoints are inter-node.
        let err = evaluate(&trace, &spec, &CostParams::default()).unwrap_err();
        assert!(matches!(err, CostError::MalformedTrace(_)));
    }
}
