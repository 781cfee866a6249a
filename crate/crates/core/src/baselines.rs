//! The four linear baselines behind one fit/predict interface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::optimize::{adam_step, normal_equations, solve_cg, solve_lls, solve_ridge, AdamConfig, AdamState, LrSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMethod {
    Lls,
    Cg,
    AdamLinear,
    Ridge,
}

impl LinearMethod {
    pub const ALL: [LinearMethod; 4] = [LinearMethod::Lls, LinearMethod::Cg, LinearMethod::AdamLinear, LinearMethod::Ridge];

    pub fn label(self) -> &'static str {
        match self {
            LinearMethod::Lls => "LLS",
            LinearMethod::Cg => "Conjugate Gradient",
            LinearMethod::AdamLinear => "Adam optimization",
            LinearMethod::Ridge => "Ridge Regressions",
        }
    }
}

/// Hyperparameters of the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub cg_tol: f64,
    /// CG iteration cap as a multiple of the number of unknowns.
    pub cg_max_iter_factor: usize,
    pub ridge_lambda: f64,
    /// Full-batch Adam steps for the Adam-driven linear fit.
    pub adam_steps: u64,
    pub adam_schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            cg_tol: 1e-10,
            cg_max_iter_factor: 10,
            ridge_lambda: 1.0,
            adam_steps: 5_000,
            adam_schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) || self.cg_max_iter_factor == 0 {
            return Err(Error::Config("cg_tol must be > 0 and cg_max_iter_factor >= 1".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        self.adam_schedule.validate()
    }
}

/// `ŷ = Xw + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub method: LinearMethod,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

pub fn predict_linear(model: &LinearModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.weights.len() {
        return Err(Error::Shape(format!(
            "model has {} weights, design has {} columns",
            model.weights.len(),
            x.cols()
        )));
    }
    Ok(x.iter_rows().map(|r| dot(r, &model.weights) + model.intercept).collect())
}

/// Fits one baseline. The intercept is an appended ones column, left
/// unpenalized by ridge.
pub fn fit_baseline(method: LinearMethod, cfg: &BaselineConfig, x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("design has {} rows, target has {}", x.rows(), y.len())));
    }
    let d = x.cols();
    let xa = x.with_ones_column();
    let w = match method {
        LinearMethod::Lls => solve_lls(&xa, y)?,
        LinearMethod::Cg => {
            let (a, b) = normal_equations(&xa, y)?;
            solve_cg(&a, &b, cfg.cg_tol, cfg.cg_max_iter_factor * (d + 1))?.x
        }
        LinearMethod::Ridge => solve_ridge(&xa, y, cfg.ridge_lambda, Some(d))?,
        LinearMethod::AdamLinear => adam_linear(&xa, y, cfg)?,
    };
    Ok(LinearModel {
        method,
        weights: w[..d].to_vec(),
        intercept: w[d],
    })
}

/// Full-batch Adam on the mean squared error, run against the standardized
/// target and mapped back to the original scale.
fn adam_linear(xa: &Matrix, y: &[f64], cfg: &BaselineConfig) -> Result<Vec<f64>> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let t: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
    let mut w = vec![0.0; xa.cols()];
    let mut state = AdamState::new(&w, cfg.adam.clone());
    let mut grad = vec![0.0; xa.cols()];
    for step in 0..cfg.adam_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &ti) in xa.iter_rows().zip(&t) {
            let r = dot(row, &w) - ti;
            crate::linalg::axpy(2.0 * r / n as f64, row, &mut grad);
        }
        adam_step(&mut w, &grad, &mut state, cfg.adam_schedule.lr_at_step(step))?;
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Adam linear fit diverged".into()));
    }
    let last = w.len() - 1;
    for v in &mut w {
        *v *= sd;
    }
    w[last] += mean;
    Ok(w)
}
