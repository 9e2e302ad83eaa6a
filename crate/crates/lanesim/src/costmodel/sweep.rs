//! Cross-product experiment sweeps: run every (algorithm, topology, count)
//! cell, price its trace, and emit rows as CSV or JSON.

use serde::Serialize;

use crate::buffers::Fill;
use crate::runner::{execute, Algorithm, RunError};
use crate::topology::TopologySpec;

use super::{evaluate, CostParams, ModeledTime};

/// The sweep axes. Every axis must be non-empty; the full cross product is
/// evaluated in axis order, so row order is deterministic.
#[derive(Debug, Clone)]
pub struct SweepAxes {
    pub algorithms: Vec<Algorithm>,
    pub nodes: Vec<usize>,
    pub gpus_per_node: Vec<usize>,
    pub ppg: Vec<usize>,
    pub counts: Vec<usize>,
}

impl SweepAxes {
    fn validate(&self) -> Result<(), RunError> {
        let axes = [
            ("algorithms", self.algorithms.is_empty()),
            ("nodes", self.nodes.is_empty()),
            ("gpus_per_node", self.gpus_per_node.is_empty()),
            ("ppg", self.ppg.is_empty()),
            ("counts", self.counts.is_empty()),
        ];
        for (axis, empty) in axes {
            if empty {
                return Err(RunError::EmptyAxis { axis });
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.algorithms.len()
            * self.nodes.len()
            * self.gpus_per_node.len()
            * self.ppg.len()
            * self.counts.len()
    }
}

/// One sweep cell: its key and the modeled time of its trace.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub nodes: usize,
    pub gpus_per_node: usize,
    pub ppg: usize,
    pub count: usize,
    pub modeled: ModeledTime,
}

pub const CSV_HEADER: &str = "algorithm,nodes,gpus_per_node,ppg,count,total_seconds,\
inter_node_elements,intra_node_elements,messages_total,kernels_total";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.nodes,
            self.gpus_per_node,
            self.ppg,
            self.count,
            self.modeled.total_seconds,
            self.modeled.inter_node.elements,
            self.modeled.intra_node.elements,
            self.modeled.messages_total(),
            self.modeled.kernels_total,
        )
    }
}

/// Render rows as a CSV body (header line included).
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Evaluate the full cross product. Each cell executes its algorithm in the
/// simulator and prices the trace with `params`.
pub fn sweep(axes: &SweepAxes, fill: &Fill, params: &CostParams) -> Result<Vec<SweepRow>, RunError> {
    axes.validate()?;
    params.validate()?;
    let mut rows = Vec::with_capacity(axes.cells());
    for &algorithm in &axes.algorithms {
        for &nodes in &axes.nodes {
            for &gpus in &axes.gpus_per_node {
                for &ppg in &axes.ppg {
                    for &count in &axes.counts {
                        let spec = TopologySpec::new(nodes, gpus, ppg)?;
                        let output = execute(&spec, algorithm, count, fill)?;
                        let modeled = evaluate(&output.trace, &spec, params)?;
                        rows.push(SweepRow {
                            algorithm: algorithm.selector().to_string(),
                            nodes,
                            gpus_per_node: gpus,
                            ppg,
                            count,
                            modeled,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
