//! Measurement suite for token geometry: variance decompositions across
//! sequences and classes, token collapse statistics, last-layer structure
//! metrics, low-dimensional projections, and heat diffusion on attention
//! graphs.

pub mod anova;
pub mod collapse;
pub mod diffusion;
pub mod error;
pub mod labeled;
pub mod nc;
pub mod pca;
pub mod report;
pub mod simplex;

pub use anova::{anova_decompose, AnovaDecomposition, ClassAveraging};
pub use collapse::{cossim, cossim_per_layer, snr, snr_per_layer, SNR_CAP};
pub use diffusion::{
    equivalence_check, graph_laplacian, heat_step, heat_trajectory, row_spread, TrajectoryPoint,
};
pub use error::{GeometryError, GeometryResult};
pub use labeled::{token_means, LabeledTokenSet};
pub use nc::{class_means_of, nc_metrics, simplex_frame, NcMetrics};
pub use pca::{pca_project, PcaProjection};
pub use report::{ntc_report, AnovaSection, GeometryReport, NtcSummary};
pub use simplex::{simplex_basis, simplex_project, SimplexProjection};
