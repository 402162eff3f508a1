//! Forward-KL trajectory regulariser and the supporting studies.

mod correlation;
mod loss;
mod mode;
mod teacher;

pub use correlation::{
    dynamics_correlation_study, shrinkage_students, CorrelationStudy, StudentDynamics,
};
pub use loss::{fkl_loss, total_loss, DEFAULT_CONSTRAINED_STEPS, DEFAULT_LAMBDA};
pub use mode::{
    mode_study, LandscapePoint, MixtureToy, ModeStudy, Objective, Optimum, StudyGrid,
    QUADRATURE_TOL,
};
pub use teacher::{
    dense_times, sample_sequence, sample_teacher_trajectory, sample_trajectory_with, SamplingMode,
    TeacherTrajectory,
};
