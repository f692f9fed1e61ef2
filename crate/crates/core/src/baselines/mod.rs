//! Classical and ablation solvers: ICP, PCA-initialized ICP, and BFGS or
//! differential evolution over the mean distance-field objective.

mod bfgs;
mod chart;
mod de;
mod icp;
mod pca;

pub use bfgs::{bfgs_minimize, bfgs_register, BfgsConfig, BfgsOutcome, MinimizeResult};
pub use chart::ChartObjective;
pub use de::{de_register, differential_evolution, registration_bounds, DeConfig, DeResult};
pub use icp::{
    estimate_normals, icp, icp_with_target, procrustes, truncated_rms, IcpConfig, IcpResult, IcpTarget,
    IcpVariant, MIN_CORRESPONDENCES,
};
pub use pca::{pca_icp, pca_init, PcaIcpConfig};
