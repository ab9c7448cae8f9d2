//! Nonlinear least-squares fitting.
//!
//! [`lm::least_squares`] is a damped Gauss-Newton (Levenberg-Marquardt)
//! minimizer over models with analytic Jacobians. [`models`] holds the model
//! zoo used by the analysis pipeline together with seeding heuristics, and
//! [`poisson`] the closed-form Poisson estimator for emitter surveys.

pub mod lm;
pub mod models;
pub mod poisson;

pub use lm::{
    finite_difference_gradient, least_squares, FitOptions, FitResult, Model, Transform, Weighting,
};
pub use models::{
    dominant_gaussian_mean, fit_double_gaussian, fit_exponential_decay, fit_lorentzian,
    fit_multi_lorentzian, fit_power_broadening, fit_saturation, saturation_rho, Antibunching,
    DoubleGaussian, ExponentialDecay, Lorentzian, MultiLorentzian, PowerBroadening,
    SaturationCurve,
};
pub use poisson::{fit_poisson_mean, PoissonFit};
