//! Run configuration: one JSON document whose sections feed the commands.
//! Every field is optional; command-line flags override file values.

use std::path::Path;

use anyhow::Result;
use diffpop::classifier::ClassifierTrainConfig;
use diffpop::diffusion::DiffusionTrainConfig;
use diffpop::guidance::GuidanceConfig;
use diffpop::synthworld::CorpusConfig;
use serde::{Deserialize, Serialize};

use crate::exit::usage;

pub const SEED_ENV: &str = "DIFFPOP_SEED";

/// The default ablation grid.
pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed. Copied into every section that takes one.
    pub seed: Option<u64>,
    pub corpus: CorpusConfig,
    pub diffusion: DiffusionTrainConfig,
    /// Structural classifier training.
    pub classifier: ClassifierTrainConfig,
    /// Relational classifier training.
    pub relational: ClassifierTrainConfig,
    pub guidance: GuidanceConfig,
    pub sample: SampleConfig,
    pub evaluate: EvaluateConfig,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Samples per (scene, object) task, or runs per scene with several objects.
    pub n: usize,
    /// Objects placed jointly per run.
    pub objects: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n: 16, objects: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Oracle positives drawn per (scene, object) group as the Fréchet reference.
    pub reference_per_task: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { reference_per_task: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub grid: Vec<f64>,
    pub per_task: usize,
    /// Caps the number of (test scene, object) tasks; all when unset.
    pub tasks: Option<usize>,
    pub reference_per_task: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { grid: DEFAULT_LAMBDA_GRID.to_vec(), per_task: 14, tasks: None, reference_per_task: 20 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Seed precedence: `--seed`, then the file's `seed`, then `DIFFPOP_SEED`,
    /// then 0. The result is written into every section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| usage(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.corpus.seed = seed;
        self.diffusion.seed = seed;
        self.classifier.seed = seed;
        self.relational.seed = seed;
        self.guidance.seed = seed;
        Ok(seed)
    }
}

/// Parses a comma-separated list of non-negative scales.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let grid = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().ok().filter(|v| *v >= 0.0 && v.is_finite()).ok_or_else(|| usage(format!("grid: bad value {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(usage("grid: empty"));
    }
    Ok(grid)
}
