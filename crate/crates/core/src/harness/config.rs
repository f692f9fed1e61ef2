use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BfgsConfig, DeConfig, IcpConfig, PcaIcpConfig};
use crate::distance_field::{GridConfig, UdfConfig};
use crate::error::{Error, Result};
use crate::neural_reg::RegConfig;
use crate::synth::{SynthSpec, DEFAULT_REPEATS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Multi-head registration against the learned field.
    Neural,
    /// Multi-head registration against the voxel grid.
    NeuralGrid,
    /// BFGS on the learned field from the perturbed pose.
    Bfgs,
    /// BFGS on the voxel grid from the perturbed pose.
    GridBfgs,
    /// Differential evolution on the learned field.
    De,
    IcpP2p,
    IcpP2l,
    PcaIcp,
    /// Point-to-point ICP started at the ground truth.
    PseudoGt,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Neural,
        Method::NeuralGrid,
        Method::Bfgs,
        Method::GridBfgs,
        Method::De,
        Method::IcpP2p,
        Method::IcpP2l,
        Method::PcaIcp,
        Method::PseudoGt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Neural => "neural",
            Method::NeuralGrid => "neural-grid",
            Method::Bfgs => "bfgs",
            Method::GridBfgs => "grid-bfgs",
            Method::De => "de",
            Method::IcpP2p => "icp-p2p",
            Method::IcpP2l => "icp-p2l",
            Method::PcaIcp => "pca-icp",
            Method::PseudoGt => "pseudo-gt",
        }
    }

    /// Stable per-method stream id for seed derivation.
    pub(crate) fn stream(self) -> u64 {
        Method::ALL.iter().position(|m| *m == self).expect("listed") as u64 + 1
    }

    pub fn needs_udf(self) -> bool {
        matches!(self, Method::Neural | Method::Bfgs | Method::De)
    }

    pub fn needs_grid(self) -> bool {
        matches!(self, Method::NeuralGrid | Method::GridBfgs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// File triple of one complete/partial pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFiles {
    pub name: String,
    pub complete: PathBuf,
    pub partial: PathBuf,
    pub ground_truth: PathBuf,
    /// Raw clouds are normalized with the complete cloud's scale on load;
    /// otherwise they are used as stored.
    #[serde(default)]
    pub raw: bool,
    /// Raw units per normalized unit for clouds stored pre-normalized.
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic { specs: Vec<SynthSpec> },
    Files { pairs: Vec<PairFiles> },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            specs: vec![SynthSpec::default()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Value of the `dataset` column.
    pub dataset: String,
    pub source: DatasetSource,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Voxel edge (normalized units) applied when normalizing raw clouds.
    pub voxel_size: f64,
    /// Run trials one at a time; results are then byte-reproducible.
    pub sequential: bool,
    /// Write the trained field and grid of every pair to `out_dir`.
    pub save_fields: bool,
    /// Write the per-iteration head scores of neural runs.
    pub save_traces: bool,
    pub udf: UdfConfig,
    pub grid: GridConfig,
    pub reg: RegConfig,
    pub icp: IcpConfig,
    pub pca: PcaIcpConfig,
    pub bfgs: BfgsConfig,
    pub de: DeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            source: DatasetSource::default(),
            methods: vec![Method::Neural],
            repeats: DEFAULT_REPEATS,
            seed: 0,
            out_dir: PathBuf::from("results"),
            voxel_size: 0.002,
            sequential: false,
            save_fields: true,
            save_traces: false,
            udf: UdfConfig::default(),
            grid: GridConfig::default(),
            reg: RegConfig::default(),
            icp: IcpConfig::default(),
            pca: PcaIcpConfig::default(),
            bfgs: BfgsConfig::default(),
            de: DeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::InvalidConfig("voxel_size must be positive".into()));
        }
        match &self.source {
            DatasetSource::Synthetic { specs } => {
                if specs.is_empty() {
                    return Err(Error::InvalidConfig("no synthetic specs".into()));
                }
                for s in specs {
                    s.validate()?;
                }
            }
            DatasetSource::Files { pairs } => {
                if pairs.is_empty() {
                    return Err(Error::InvalidConfig("no pairs listed".into()));
                }
                for p in pairs {
                    for f in [&p.complete, &p.partial, &p.ground_truth] {
                        if !f.exists() {
                            return Err(Error::InvalidConfig(format!("{}: file not found", f.display())));
                        }
                    }
                }
            }
        }
        self.reg.validate()?;
        self.icp.validate()?;
        Ok(())
    }
}
