//! Maximum-likelihood logistic regression by iteratively reweighted least
//! squares (Newton's method), with an optional ridge penalty.
//!
//! The objective is `sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] - lambda/2 |beta|^2`.
//! Each Newton step is halved until the objective does not decrease, so the
//! accepted objective trace is monotone.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::model::{build_design, ColumnLabel, DesignMatrix, FittedModel, ModelSpec};

/// Probability clamp applied before taking logs in reported log-likelihoods.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Fitted probabilities closer than this to 0 or 1 raise the separation flag.
pub const SEPARATION_EPS: f64 = 1e-6;

const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative objective change treated as stagnation.
    pub tolerance: f64,
    pub ridge_lambda: f64,
    /// Diagonal jitter used when the Newton system is singular.
    pub singular_jitter: f64,
    /// Convergence threshold on the gradient's infinity norm.
    pub gradient_tolerance: f64,
    pub max_step_halvings: u32,
    /// Columns with fewer nonzero rows than this are dropped before fitting.
    pub min_column_support: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            ridge_lambda: 0.0,
            singular_jitter: 1e-8,
            gradient_tolerance: 1e-6,
            max_step_halvings: 30,
            min_column_support: 2,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Parameter("max_iterations must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Parameter("tolerance must be positive".into()));
        }
        if [self.ridge_lambda, self.singular_jitter].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Parameter("ridge_lambda and singular_jitter must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_ridge(mut self, lambda: f64) -> Self {
        self.ridge_lambda = lambda;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Infinity norm of the (penalized) gradient at the returned coefficients.
    pub gradient_max_abs: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Total step halvings over all iterations.
    pub step_halvings: u32,
    pub separable_warning: bool,
    /// Set when the Newton system needed diagonal jitter.
    pub jitter_applied: bool,
    /// Labels of columns dropped for insufficient support.
    pub dropped_columns: Vec<String>,
    /// Penalized objective after each accepted iteration, starting at zero coefficients.
    pub objective_trace: Vec<f64>,
}

/// Raw result of a logistic fit on a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Estimated coefficients for the retained columns, in design order.
    pub coefficients: Vec<(ColumnLabel, f64)>,
    /// Log-likelihood with probabilities clamped to `[1e-12, 1 - 1e-12]`.
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub diagnostics: FitDiagnostics,
}

impl LogisticFit {
    pub fn into_model(self, spec: ModelSpec) -> FittedModel {
        let coefficients: BTreeMap<String, f64> = self
            .coefficients
            .iter()
            .map(|(label, v)| (label.to_string(), *v))
            .collect();
        let dropped = self.diagnostics.dropped_columns.clone();
        FittedModel::new(spec, coefficients, dropped, self.log_likelihood, self.n_obs, self.diagnostics)
    }
}

/// Per-row log-likelihood contribution, stable for any linear predictor.
fn row_log_likelihood(y: f64, eta: f64) -> f64 {
    // log p = -log1p(e^-eta), log(1-p) = -log1p(e^eta)
    if eta > 0.0 {
        y * eta - eta - (-eta).exp().ln_1p()
    } else {
        y * eta - eta.exp().ln_1p()
    }
}

fn raw_logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

struct Objective<'a> {
    design: &'a DesignMatrix,
    lambda: f64,
}

impl Objective<'_> {
    fn value(&self, beta: &[f64]) -> f64 {
        let eta = self.design.linear_predictor(beta);
        let ll: f64 = eta
            .iter()
            .zip(self.design.outcomes())
            .map(|(&e, &y)| row_log_likelihood(y, e))
            .sum();
        ll - 0.5 * self.lambda * beta.iter().map(|b| b * b).sum::<f64>()
    }

    /// Penalized gradient and negative Hessian at `beta`.
    fn derivatives(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = beta.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let eta = self.design.linear_predictor(beta);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (i, (&e, &y)) in eta.iter().zip(self.design.outcomes()).enumerate() {
            let p = raw_logistic(e);
            let w = p * (1.0 - p);
            entries.clear();
            entries.extend(self.design.row(i));
            for &(a, va) in &entries {
                grad[a] += (y - p) * va;
                for &(b, vb) in &entries {
                    if b >= a {
                        hess[(a, b)] += w * va * vb;
                    }
                }
            }
        }
        for a in 0..n {
            grad[a] -= self.lambda * beta[a];
            hess[(a, a)] += self.lambda;
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        (grad, hess)
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `H delta = g`, adding growing diagonal jitter if `H` is not
/// positive definite. Returns the step and whether jitter was needed.
fn newton_step(hess: DMatrix<f64>, grad: &DVector<f64>, jitter: f64) -> Option<(DVector<f64>, bool)> {
    if let Some(chol) = hess.clone().cholesky() {
        let step = chol.solve(grad);
        if step.iter().all(|x| x.is_finite()) {
            return Some((step, false));
        }
    }
    let scale = hess.diagonal().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut eps = jitter.max(f64::EPSILON) * scale;
    for _ in 0..16 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += eps;
        }
        if let Some(chol) = h.cholesky() {
            let step = chol.solve(grad);
            if step.iter().all(|x| x.is_finite()) {
                return Some((step, true));
            }
        }
        eps *= 10.0;
    }
    None
}

/// Fits a logistic regression to a design matrix.
///
/// Non-convergence is reported through `diagnostics.converged`, not as an
/// error; see [`require_converged`] for a strict variant.
pub fn fit_logistic(design: &DesignMatrix, options: &FitOptions) -> Result<LogisticFit> {
    options.validate()?;
    if design.n_rows() == 0 {
        return Err(Error::EmptyInput("design matrix has no rows".into()));
    }
    let mut diagnostics = FitDiagnostics::default();

    let counts = design.column_counts();
    let keep: Vec<usize> = (0..design.n_cols())
        .filter(|&c| counts[c] >= options.min_column_support)
        .collect();
    diagnostics.dropped_columns = (0..design.n_cols())
        .filter(|&c| counts[c] < options.min_column_support)
        .map(|c| design.labels()[c].to_string())
        .collect();
    let reduced;
    let design = if keep.len() == design.n_cols() {
        design
    } else {
        reduced = design.select_columns(&keep);
        &reduced
    };

    let objective = Objective {
        design,
        lambda: options.ridge_lambda,
    };
    let n = design.n_cols();
    let mut beta = vec![0.0; n];
    let mut current = objective.value(&beta);
    diagnostics.objective_trace.push(current);
    let mut stagnant = 0;
    // One extra Newton step is taken after the gradient criterion is first met.
    let mut polished = false;

    loop {
        let (grad, hess) = objective.derivatives(&beta);
        diagnostics.gradient_max_abs = max_abs(&grad);
        let within = diagnostics.gradient_max_abs < options.gradient_tolerance;
        diagnostics.converged = within;
        if within && polished {
            break;
        }
        polished |= within;
        if diagnostics.iterations >= options.max_iterations || stagnant >= 3 {
            break;
        }
        let Some((step, jittered)) = newton_step(hess, &grad, options.singular_jitter) else {
            break;
        };
        diagnostics.jitter_applied |= jittered;
        diagnostics.iterations += 1;

        // Near the optimum a full step gains less than the sum's rounding error.
        let slack = ROUNDING_SLACK * current.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for halving in 0..=options.max_step_halvings {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let value = objective.value(&candidate);
            if value.is_finite() && value >= current - slack {
                diagnostics.step_halvings += halving;
                accepted = Some((candidate, value));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            diagnostics.step_halvings += options.max_step_halvings;
            break;
        };
        if within && objective.derivatives(&candidate).0.iter().any(|g| g.abs() >= options.gradient_tolerance) {
            break;
        }
        let relative = (value - current).abs() / (current.abs() + 1e-10);
        stagnant = if relative < options.tolerance { stagnant + 1 } else { 0 };
        beta = candidate;
        current = value;
        diagnostics.objective_trace.push(current);
    }

    let eta = design.linear_predictor(&beta);
    diagnostics.separable_warning = eta.iter().any(|&e| {
        let p = raw_logistic(e);
        !(SEPARATION_EPS..=1.0 - SEPARATION_EPS).contains(&p)
    });
    let log_likelihood = clamped_log_likelihood(&eta, design.outcomes());

    Ok(LogisticFit {
        coefficients: design.labels().iter().cloned().zip(beta).collect(),
        log_likelihood,
        n_obs: design.n_rows(),
        diagnostics,
    })
}

fn clamped_log_likelihood(eta: &[f64], outcomes: &[f64]) -> f64 {
    eta.iter()
        .zip(outcomes)
        .map(|(&e, &y)| {
            let p = raw_logistic(e).clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum()
}

/// Featurizes nothing: builds the design for `spec` from an existing table and fits it.
pub fn fit_model(table: &FeatureTable, spec: &ModelSpec, options: &FitOptions) -> Result<FittedModel> {
    let design = build_design(table, spec)?;
    Ok(fit_logistic(&design, options)?.into_model(spec.clone()))
}

/// Turns a non-converged fit into an error.
pub fn require_converged(model: FittedModel) -> Result<FittedModel> {
    if model.converged {
        Ok(model)
    } else {
        Err(Error::NotConverged {
            iterations: model.iterations,
            gradient_max_abs: model.diagnostics.gradient_max_abs,
        })
    }
}

/// Log-likelihood of `design` under `model`, probabilities clamped to
/// `[1e-12, 1 - 1e-12]`. Columns the model dropped contribute zero.
pub fn log_likelihood(model: &FittedModel, design: &DesignMatrix) -> Result<f64> {
    let beta = design
        .labels()
        .iter()
        .map(|label| {
            let key = label.to_string();
            match model.coefficients.get(&key) {
                Some(&v) => Ok(v),
                None if model.dropped_columns.contains(&key) => Ok(0.0),
                None => Err(Error::Shape(format!("model has no coefficient for column `{key}`"))),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(clamped_log_likelihood(&design.linear_predictor(&beta), design.outcomes()))
}

/// `2k - 2 log L`.
pub fn aic(model: &FittedModel) -> f64 {
    2.0 * model.n_params as f64 - 2.0 * model.log_likelihood
}

/// `k ln n - 2 log L`.
pub fn bic(model: &FittedModel, n: f64) -> Result<f64> {
    if n.is_nan() || n < 1.0 {
        return Err(Error::Parameter(format!("BIC needs n >= 1, got {n}")));
    }
    Ok(model.n_params as f64 * n.ln() - 2.0 * model.log_likelihood)
}
