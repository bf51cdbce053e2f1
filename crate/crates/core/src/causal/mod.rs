//! Causal effect estimation on top of a fitted latent mixture: the
//! multi-proxy pipeline for a continuous treatment and the multi-treatment
//! estimator for three categorical treatments.

pub mod features;
pub mod multiproxy;
pub mod multitreatment;
pub mod regression;

pub use features::{FeatureMap, Term, Var};
pub use multiproxy::{
    component_expectations, estimate_ate, estimate_cate, fit_multiproxy, fit_outcome, fit_stages,
    fit_treatment_mean, fit_treatment_model, fit_treatment_variance, treatment_density,
    update_posteriors, CausalEstimate, MixtureMethod, MultiProxyConfig, MultiProxyFit,
    OutcomeModel, PipelineDiagnostics, TreatmentFamily, TreatmentModel, MIN_CLUSTER_MASS,
    SIGMA_FLOOR,
};
pub use multitreatment::{fit_gamma, fit_multitreatment, mt_ate, mt_cate, MultiTreatmentFit, MultiTreatmentModel};
pub use regression::{stacked_least_squares, StackedFit, RIDGE_LADDER};
