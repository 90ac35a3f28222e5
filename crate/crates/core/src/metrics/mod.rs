//! Distances and statistics between particle systems and densities.
//!
//! Particle marginals and PDE densities are compared on a common
//! [`HistGrid`]: samples are counted per bin and fields are binned by exact
//! cell integrals, so Gibbs' inequality and the Csiszar-Kullback-Pinsker
//! inequality hold exactly in the discrete space. The entropy against a
//! reference that vanishes where the sample charges a bin is reported as
//! `+inf`; [`smoothed_relative_entropy`] floors the reference instead and
//! is used only for rate plots.

mod coupling;
mod distance;
mod histogram;
mod lln;
mod marginal;
mod subadditivity;

pub use coupling::{coupling_event, wilson_interval, CouplingStats};
pub use distance::{
    ckp_check, compare_fields, distance_report, l1_distance, l2_distance, relative_entropy,
    relative_entropy_masses, smoothed_relative_entropy, DistanceReport, RelativeEntropy,
    CKP_TOLERANCE, GIBBS_TOLERANCE, SMOOTHING_FLOOR,
};
pub use histogram::{HistGrid, Histogram, MASS_TOLERANCE};
pub use lln::{lln_statistic, LlnConfig, LlnOutcome, Psi};
pub use marginal::{
    empirical_density, marginal_histogram, MarginalSampling, MAX_MARGINAL_DIMS, MIN_MARGINAL_REPS,
};
pub use subadditivity::{
    subadditivity_check, DiscreteJoint, SubadditivityReport, MAX_PARTICLES, MAX_SPECIES,
    MAX_STATES,
};
