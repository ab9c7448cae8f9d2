//! Damped Gauss-Newton minimizer with analytic Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fittable curve `y = f(x; p)`.
///
/// `gradient` must fill `out` with the partial derivatives with respect to the
/// *external* (physical) parameters; internal reparameterization for bounds is
/// handled by the minimizer.
pub trait Model {
    fn n_params(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);

    /// Per-parameter bound handling; defaults to unconstrained.
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Linear; self.n_params()]
    }
}

/// Bound enforcement through reparameterization: `Log` keeps a parameter
/// strictly positive by fitting its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Linear,
    Log,
}

impl Transform {
    fn to_internal(self, p: f64, name: &str) -> Result<f64> {
        match self {
            Transform::Linear => Ok(p),
            Transform::Log => {
                if p > 0.0 {
                    Ok(p.ln())
                } else {
                    Err(Error::FitFailure(format!(
                        "initial value for `{name}` must be positive, got {p}"
                    )))
                }
            }
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Transform::Linear => u,
            Transform::Log => u.exp(),
        }
    }

    /// d(external)/d(internal) evaluated at internal coordinate `u`.
    fn jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Linear => 1.0,
            Transform::Log => u.exp(),
        }
    }
}

/// Residual weighting. `PoissonCounts` uses `sigma_i = sqrt(max(y_i, 1))`,
/// appropriate for raw count data; averaged spectra are fit unweighted.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Unweighted,
    PoissonCounts,
    Sigmas(Vec<f64>),
}

impl Weighting {
    fn sigma(&self, i: usize, y: f64) -> f64 {
        match self {
            Weighting::Unweighted => 1.0,
            Weighting::PoissonCounts => y.max(1.0).sqrt(),
            Weighting::Sigmas(s) => s[i],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Weighting::Sigmas(s) = self {
            if s.len() != n {
                return Err(Error::InsufficientData(format!(
                    "{} sigmas supplied for {n} points",
                    s.len()
                )));
            }
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("sigmas", "must all be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when every parameter moves by less than this relative amount.
    pub rel_param_tol: f64,
    /// Stop when the sum of squared residuals changes by less than this
    /// relative amount between accepted steps.
    pub rel_residual_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            rel_param_tol: 1e-8,
            rel_residual_tol: 1e-10,
        }
    }
}

/// Converged parameter estimates with 1-sigma uncertainties from the local
/// curvature, scaled by the reduced chi-square.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// Weighted root-sum-square residual at the optimum.
    pub residual_norm: f64,
    pub reduced_chi_square: f64,
    pub n_points: usize,
    pub n_iterations: usize,
    pub converged: bool,
    /// Sum of squared residuals after each accepted step; non-increasing.
    pub residual_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.uncertainties[i])
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

struct Problem<'a> {
    model: &'a dyn Model,
    x: &'a [f64],
    y: &'a [f64],
    sigmas: Vec<f64>,
    transforms: Vec<Transform>,
}

impl Problem<'_> {
    fn externals(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter()
            .zip(&self.transforms)
            .map(|(&ui, t)| t.to_external(ui))
            .collect()
    }

    fn cost(&self, u: &DVector<f64>) -> f64 {
        let p = self.externals(u);
        self.x
            .iter()
            .zip(self.y)
            .zip(&self.sigmas)
            .map(|((&x, &y), &s)| {
                let r = (y - self.model.eval(x, &p)) / s;
                r * r
            })
            .sum()
    }

    /// Jacobian of the residual vector with respect to internal coordinates
    /// (sign convention: residual r = (y - f)/sigma, J[i][j] = df/du_j / sigma).
    fn jacobian_and_residuals(&self, u: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.x.len();
        let np = self.transforms.len();
        let p = self.externals(u);
        let chain: Vec<f64> = u
            .iter()
            .zip(&self.transforms)
            .map(|(&ui, t)| t.jacobian(ui))
            .collect();
        let mut jac = DMatrix::zeros(n, np);
        let mut res = DVector::zeros(n);
        let mut grad = vec![0.0; np];
        for i in 0..n {
            let s = self.sigmas[i];
            res[i] = (self.y[i] - self.model.eval(self.x[i], &p)) / s;
            self.model.gradient(self.x[i], &p, &mut grad);
            for j in 0..np {
                jac[(i, j)] = grad[j] * chain[j] / s;
            }
        }
        (jac, res)
    }
}

/// Minimize the weighted sum of squared residuals of `model` against `(x, y)`.
///
/// `init` holds external (physical) starting values. Data length must be at
/// least the parameter count. Singular normal equations trigger damped
/// retries and only then a failure.
pub fn least_squares(
    model: &dyn Model,
    x: &[f64],
    y: &[f64],
    init: &[f64],
    weighting: &Weighting,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = x.len();
    let np = model.n_params();
    if y.len() != n {
        return Err(Error::InsufficientData(format!(
            "x has {n} points but y has {}",
            y.len()
        )));
    }
    if init.len() != np {
        return Err(Error::invalid("init", "length must match parameter count"));
    }
    if n < np {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot constrain {np} parameters"
        )));
    }
    weighting.validate(n)?;
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("data", "contains non-finite values"));
    }

    let names = model.param_names();
    let transforms = model.transforms();
    let sigmas: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| weighting.sigma(i, yi))
        .collect();
    let problem = Problem {
        model,
        x,
        y,
        sigmas,
        transforms: transforms.clone(),
    };

    let mut u = DVector::from_vec(
        init.iter()
            .zip(transforms.iter())
            .zip(names.iter())
            .map(|((&p, t), name)| t.to_internal(p, name))
            .collect::<Result<Vec<f64>>>()?,
    );

    let mut cost = problem.cost(&u);
    if !cost.is_finite() {
        return Err(Error::FitFailure(
            "initial parameters give non-finite residuals".into(),
        ));
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let (jac, res) = problem.jacobian_and_residuals(&u);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        // Inner damping loop: escalate lambda until a step lowers the cost.
        loop {
            let mut damped = jtj.clone();
            for j in 0..np {
                let d = jtj[(j, j)];
                damped[(j, j)] = d + lambda * if d > 0.0 { d } else { 1.0 };
            }
            let step = damped.clone().cholesky().map(|ch| ch.solve(&jtr));
            let step = match step {
                Some(s) => s,
                None => match damped.lu().solve(&jtr) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e14 {
                            return Err(Error::FitFailure(
                                "singular normal equations (model is degenerate for this data)"
                                    .into(),
                            ));
                        }
                        continue;
                    }
                },
            };

            let u_trial = &u + &step;
            let trial_cost = problem.cost(&u_trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                // accepted: measure convergence on the external parameters
                let p_old = problem.externals(&u);
                let p_new = problem.externals(&u_trial);
                let max_rel_dp = p_old
                    .iter()
                    .zip(&p_new)
                    .map(|(&a, &b)| (b - a).abs() / a.abs().max(b.abs()).max(1e-300))
                    .fold(0.0_f64, f64::max);
                let rel_dcost = (cost - trial_cost) / cost.max(1e-300);

                u = u_trial;
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda / 4.0).max(1e-14);

                if max_rel_dp < opts.rel_param_tol || rel_dcost < opts.rel_residual_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // stuck at a point no damped step can improve; treat the
                // current location as the (possibly unconverged) optimum
                converged = history.len() > 1;
                break 'outer;
            }
        }
    }

    let values = problem.externals(&u);
    let (jac, res) = problem.jacobian_and_residuals(&u);
    let dof = n.saturating_sub(np).max(1);
    let reduced = res.norm_squared() / dof as f64;
    let jtj = jac.transpose() * &jac;
    let mut warnings = Vec::new();
    let uncertainties = match covariance(&jtj) {
        Some(cov) => {
            let chain: Vec<f64> = u
                .iter()
                .zip(&transforms)
                .map(|(&ui, t)| t.jacobian(ui))
                .collect();
            (0..np)
                .map(|j| (cov[(j, j)].max(0.0) * reduced).sqrt() * chain[j].abs())
                .collect()
        }
        None => {
            warnings.push("curvature is singular; uncertainties are unavailable".into());
            vec![f64::INFINITY; np]
        }
    };

    Ok(FitResult {
        names,
        values,
        uncertainties,
        residual_norm: cost.sqrt(),
        reduced_chi_square: reduced,
        n_points: n,
        n_iterations: iterations,
        converged,
        residual_history: history,
        warnings,
    })
}

fn covariance(jtj: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    jtj.clone().try_inverse().or_else(|| {
        // ridge fallback for nearly singular curvature
        let np = jtj.nrows();
        let scale = (0..np).map(|j| jtj[(j, j)]).fold(0.0_f64, f64::max);
        if scale <= 0.0 {
            return None;
        }
        let mut ridged = jtj.clone();
        for j in 0..np {
            ridged[(j, j)] += 1e-12 * scale;
        }
        ridged.try_inverse()
    })
}

/// Central finite-difference gradient used to cross-check analytic Jacobians
/// (step `1e-6 * max(|p_j|, 1)` per parameter).
pub fn finite_difference_gradient(model: &dyn Model, x: f64, p: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1.0);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[j] += h;
        lo[j] -= h;
        out.push((model.eval(x, &hi) - model.eval(x, &lo)) / (2.0 * h));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Quadratic in the monomial basis; exercises the core without any of the
    /// physics models.
    struct Quadratic;

    impl Model for Quadratic {
        fn n_params(&self) -> usize {
            3
        }
        fn param_names(&self) -> Vec<String> {
            vec!["c0".into(), "c1".into(), "c2".into()]
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] + p[1] * x + p[2] * x * x
        }
        fn gradient(&self, x: f64, _p: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = x;
            out[2] = x * x;
        }
    }

    #[test]
    fn quadratic_interpolates_three_points_exactly() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 2.0, 7.0]; // c = (1, -1, 2)
        let r = least_squares(
            &Quadratic,
            &x,
            &y,
            &[0.5, 0.5, 0.5],
            &Weighting::Unweighted,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.residual_norm < 1e-8, "residual {}", r.residual_norm);
        assert_relative_eq!(r.values[0], 1.0, max_relative = 1e-7);
        assert_relative_eq!(r.values[1], -1.0, max_relative = 1e-7);
        assert_relative_eq!(r.values[2], 2.0, max_relative = 1e-7);
    }

    #[test]
    fn residual_history_is_non_increasing() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| 3.0 - 2.0 * x + 0.5 * x * x).collect();
        let r = least_squares(
            &Quadratic,
            &x,
            &y,
            &[1.0, 1.0, 1.0],
            &Weighting::Unweighted,
            &FitOptions::default(),
        )
        .unwrap();
        for w in r.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn underdetermined_data_is_rejected() {
        let r = least_squares(
            &Quadratic,
            &[0.0, 1.0],
            &[1.0, 2.0],
            &[0.0, 0.0, 0.0],
            &Weighting::Unweighted,
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn mismatched_sigma_length_is_rejected() {
        let r = least_squares(
            &Quadratic,
            &[0.0, 1.0, 2.0],
            &[1.0, 2.0, 7.0],
            &[0.0, 0.0, 0.0],
            &Weighting::Sigmas(vec![1.0; 2]),
            &FitOptions::default(),
        );
        assert!(r.is_err());
    }
}
