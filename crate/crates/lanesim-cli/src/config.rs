//! Experiment configuration: defaults, key=value config files, and CLI
//! overrides all funnel through [`ExperimentConfig::apply`], so a flag and
//! its config-file line accept identical syntax.

use std::fmt;
use std::path::PathBuf;

use lanesim::buffers::FillPattern;
use lanesim::collectives::{FlatAlgorithm, LaneInner};
use lanesim::costmodel::CostParams;
use lanesim::runner::Algorithm;

/// Largest per-buffer element count accepted without `uncapped`.
pub const COUNT_CAP: usize = 1 << 20;
/// Largest world size accepted without `uncapped`.
pub const WORLD_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Everything `lanesim run` needs: topology axes, algorithms, counts, fill,
/// cost parameters, and output destinations.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub nodes: Vec<usize>,
    pub gpus_per_node: Vec<usize>,
    pub ppg: Vec<usize>,
    pub algorithms: Vec<String>,
    pub lane_inner: LaneInner,
    pub ppg_inner: FlatAlgorithm,
    pub counts: Vec<usize>,
    pub fill: FillPattern,
    pub seed: u64,
    pub cost_config: Option<PathBuf>,
    /// `key=value` parameter overrides applied after the cost config file.
    pub cost_overrides: Vec<String>,
    pub cost: CostParams,
    pub out: Option<PathBuf>,
    pub verify: bool,
    pub repetitions: usize,
    pub trace_out: Option<PathBuf>,
    pub uncapped: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nodes: vec![2],
            gpus_per_node: vec![4],
            ppg: vec![1],
            algorithms: vec![
                "ring".into(),
                "rd".into(),
                "rabenseifner".into(),
                "lane".into(),
                "ppg-standard".into(),
                "ppg-lane".into(),
            ],
            lane_inner: LaneInner::Ring,
            ppg_inner: FlatAlgorithm::Ring,
            counts: vec![1 << 10, 1 << 14, 1 << 18],
            fill: FillPattern::RandInt,
            seed: 42,
            cost_config: None,
            cost_overrides: Vec::new(),
            cost: CostParams::default(),
            out: None,
            verify: false,
            repetitions: 1,
            trace_out: None,
            uncapped: false,
        }
    }
}

impl ExperimentConfig {
    /// Apply one `key=value` setting (config-file line or CLI flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "nodes" => self.nodes = parse_usize_list(key, value)?,
            "gpus-per-node" => self.gpus_per_node = parse_usize_list(key, value)?,
            "ppg" => self.ppg = parse_usize_list(key, value)?,
            "algorithms" => {
                let names: Vec<String> =
                    value.split(',').map(|s| s.trim().to_string()).collect();
                for name in &names {
                    if Algorithm::from_selector(name).is_none() {
                        return Err(ConfigError::new(key, format!("unknown algorithm `{name}`")));
                    }
                }
                self.algorithms = names;
            }
            "lane-inner" => {
                self.lane_inner = match value {
                    "ring" => LaneInner::Ring,
                    "rd" => LaneInner::RecursiveDoubling,
                    other => {
                        return Err(ConfigError::new(key, format!("unknown inner `{other}`")))
                    }
                }
            }
            "ppg-inner" => {
                self.ppg_inner = match value {
                    "ring" => FlatAlgorithm::Ring,
                    "rd" => FlatAlgorithm::RecursiveDoubling,
                    "rabenseifner" => FlatAlgorithm::Rabenseifner,
                    other => {
                        return Err(ConfigError::new(key, format!("unknown inner `{other}`")))
                    }
                }
            }
            "counts" => self.counts = parse_count_list(key, value)?,
            "fill" => {
                self.fill = FillPattern::parse(value).ok_or_else(|| {
                    ConfigError::new(key, format!("expected ones|ramp|rand, got `{value}`"))
                })?
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|e| ConfigError::new(key, format!("bad integer `{value}`: {e}")))?
            }
            "cost-config" => self.cost_config = Some(PathBuf::from(value)),
            "cost" => self.cost_overrides.push(value.to_string()),
            "out" => self.out = Some(PathBuf::from(value)),
            "verify" => self.verify = parse_bool(key, value)?,
            "repetitions" => {
                self.repetitions = value
                    .parse()
                    .map_err(|e| ConfigError::new(key, format!("bad integer `{value}`: {e}")))?
            }
            "trace-out" => self.trace_out = Some(PathBuf::from(value)),
            "uncapped" => self.uncapped = parse_bool(key, value)?,
            other => return Err(ConfigError::new(other, "unknown key")),
        }
        Ok(())
    }

    /// Apply every `key=value` line of a config file. `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::new(line, "expected key=value"));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Read the cost config file (if any), apply overrides, and check every
    /// invariant.
    pub fn finalize(&mut self) -> Result<(), ConfigError> {
        if let Some(path) = &self.cost_config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new("cost-config", format!("cannot read {}: {e}", path.display()))
            })?;
            self.cost = CostParams::from_key_values(&text)
                .map_err(|e| ConfigError::new("cost-config", e.to_string()))?;
        }
        for entry in &self.cost_overrides {
            let Some((key, value)) = entry.split_once('=') else {
                return Err(ConfigError::new("cost", format!("expected key=value, got `{entry}`")));
            };
            self.cost
                .apply(key.trim(), value.trim())
                .map_err(|e| ConfigError::new("cost", e.to_string()))?;
        }
        self.cost.validate().map_err(|e| ConfigError::new("cost", e.to_string()))?;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let axes: [(&str, &[usize]); 4] = [
            ("nodes", &self.nodes),
            ("gpus-per-node", &self.gpus_per_node),
            ("ppg", &self.ppg),
            ("counts", &self.counts),
        ];
        for (field, values) in axes {
            if values.is_empty() {
                return Err(ConfigError::new(field, "axis must be non-empty"));
            }
            if values.contains(&0) {
                return Err(ConfigError::new(field, "values must be at least 1"));
            }
        }
        if self.algorithms.is_empty() {
            return Err(ConfigError::new("algorithms", "axis must be non-empty"));
        }
        if self.repetitions == 0 {
            return Err(ConfigError::new("repetitions", "must be at least 1"));
        }
        if !self.uncapped {
            if let Some(&count) = self.counts.iter().find(|&&c| c > COUNT_CAP) {
                return Err(ConfigError::new(
                    "counts",
                    format!("{count} exceeds the default cap of {COUNT_CAP}; pass uncapped=true"),
                ));
            }
            let world = self.nodes.iter().max().unwrap()
                * self.gpus_per_node.iter().max().unwrap()
                * self.ppg.iter().max().unwrap();
            if world > WORLD_CAP {
                return Err(ConfigError::new(
                    "nodes",
                    format!(
                        "largest world size {world} exceeds the default cap of {WORLD_CAP}; \
                         pass uncapped=true"
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Selector strings resolved to algorithms with the configured inner
    /// stages.
    pub fn resolved_algorithms(&self) -> Vec<Algorithm> {
        self.algorithms
            .iter()
            .map(|name| {
                Algorithm::from_selector(name)
                    .expect("validated on apply")
                    .with_lane_inner(self.lane_inner)
                    .with_ppg_inner(self.ppg_inner)
            })
            .collect()
    }
}

fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::new(field, format!("expected true/false, got `{other}`"))),
    }
}

fn parse_usize_list(field: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|e| ConfigError::new(field, format!("bad integer `{part}`: {e}")))
        })
        .collect()
}

/// Counts accept both plain integers and `2^k` powers.
fn parse_count_list(field: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|part| {
            let part = part.trim();
            if let Some(exp) = part.strip_prefix("2^") {
                let exp: u32 = exp
                    .parse()
                    .map_err(|e| ConfigError::new(field, format!("bad exponent `{part}`: {e}")))?;
                if exp >= usize::BITS {
                    return Err(ConfigError::new(field, format!("`{part}` overflows")));
                }
                Ok(1usize << exp)
            } else {
                part.parse()
                    .map_err(|e| ConfigError::new(field, format!("bad count `{part}`: {e}")))
            }
        })
        .collect()
}
