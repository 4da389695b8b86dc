//! Policy-gradient methods on finite MDPs with exact oracles.
//!
//! The crate pairs stochastic estimators (reward-to-go policy gradient and a
//! double-loop actor-critic with projected TD(0)) with exact linear-algebra
//! counterparts, so every bias, noise and bound quantity can be measured
//! against ground truth on small instances.

pub mod ascent;
pub mod error;
pub mod estimators;
pub mod instance;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod rng;
pub mod td0;
pub mod testkit;

pub use ascent::{
    escape_experiment, iteration_budget, noise_diagnostics, run, sufficient_ascent_check, AscentReport, Budget, EscapeConfig,
    EscapeStats, EstimatorSpec, HorizonSpec, IterationRecord, NoiseDiagnostics, RunConfig, RunLog,
};
pub use error::{Error, Result};
pub use estimators::{
    ac_estimator, bound_bundle, decompose_ac, decompose_vanilla, gpomdp, horizon_for_mu, BoundBundle, EstimatorKind, GradSample,
};
pub use instance::{load_instance, parse_instance, Instance, InstanceFile};
pub use mdp::{
    induced_chain, mixing_time, sample_trajectory, tv_distance, validate_mdp, MixingEnvelope, StateActionChain, Step,
    TabularMdp, Trajectory, ValidationReport,
};
pub use oracle::{
    classify, critic_fixed_point, critic_matrix, discounted_visitation, exact_gradient, hessian, objective,
    smoothness_constants, truncated_gradient, value_functions, CriticSystem, HessianEstimate, Region, RegionThresholds,
    SmoothnessConstants, StationarityReport, ValueFunctions,
};
pub use policy::{policy_constants, DifferentiablePolicy, FeatureMap, PolicyConstants, SoftmaxPolicy};
pub use rng::{SeedStream, StreamRole};
pub use td0::{
    project_ball, run_td0, td_average_bound, StartDistribution, StepSchedule, TdConfig, TdProblem, TdRunStats,
};
