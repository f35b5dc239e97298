//! Population and individual parameter estimation.

mod fit;
mod laplace;
mod map;
mod model;
mod objective;
mod prior;
mod weights;

pub use fit::{
    fit_population, population_objective, ConditionReport, FitOptions, FitResult, ObjectiveTerms, ParameterEstimate,
};
pub use laplace::{laplace_at, laplace_marginal, EIGEN_FLOOR, HESSIAN_STEP};
pub use map::{default_starts, map_estimate, minimize_posterior, IndividualEstimate, START_OFFSET};
pub use model::{residual_variance, Omega, OmegaStructure, PopulationModel, ResidualError};
pub use objective::{conditioned_observations, individual_objective, PkPredictor, PosteriorObjective, Predictor};
pub use prior::{prior_penalty, prior_penalty_terms, OmegaPrior, Penalty, PriorBlock, PriorSpec, ThetaPrior};
pub use weights::{fit_passes, optimize_prior_weights, WeightSearch, WeightSearchOptions, WeightTrial};
