//! Simulation study: synthetic phantom, osteotomy fragments, simulated
//! fluoroscopy, perturbed initializations and error statistics.

mod fluoro;
mod fragment;
mod phantom;
mod stats;
mod study;

pub use fluoro::{
    add_log_noise, ap_pose, exceeds_exclusion, perturb_init, pose_offset, project_landmarks, simulate_fluoro,
    FluoroOptions, InitNoise, SimulatedView, EXCLUDE_ROTATION_DEG, EXCLUDE_TRANSLATION_MM,
};
pub use fragment::{
    fragment_voxels, relocate_fragment, sample_fragment, sample_move, CuttingPlanes, FragmentMove, FragmentOptions,
    MoveOptions, Plane, Relocated, FILL_HU,
};
pub use phantom::{generate_phantom, hu_to_mu, labels, Phantom, LANDMARK_NAMES, MU_WATER};
pub use stats::{
    mann_whitney_u, mann_whitney_u_exact, mann_whitney_u_normal, mean, median, std_dev, u_statistic, MannWhitney,
    EXACT_LIMIT,
};
pub use study::{
    pooled_errors_from_trials_csv, pooled_landmark_errors, run_study, Comparison, DetectorConfig, PhantomConfig,
    StudyConfig, StudyOutput, StudyRecord, SummaryRow, TrialId, TrialStatus, POSE_FIELDS, REFERENCE_METRIC,
};
