//! Structural PK model: clearance, individual parameters and event-driven simulation.

mod simulate;
mod theta;
mod timeline;

pub use simulate::{
    advance, dose_linearity_scale, individual_theta, simulate, ConcentrationProfile, EtaTarget, IndividualParams,
    ProfileKind, ProfilePoint, SimulationPlan, MG_PER_L_TO_NG_PER_ML,
};
pub use theta::{
    clearance_at, sigmoid_clearance, Covariate, CovariateEffect, EffectForm, StructuralTheta, ThetaParam,
    LINEAR_EFFECT_FLOOR,
};
pub use timeline::{CovariateRecord, CovariateState, Event, EventTimeline, LAB_COVARIATES};
