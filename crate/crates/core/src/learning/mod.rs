//! Alternating training loop.
//!
//! Each outer iteration assigns every sample to a candidate transform,
//! refits the discrimination parameters on a random batch, refits and
//! blends the linear map on the same batch, and records the full objective.

mod linear_map;
mod theta;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::{assign_batch, Assignment};
use crate::error::{check_finite, check_len, Error, Result};
use crate::measures::{
    column, objective_from_projection, DiscriminationParams, ObjectiveBreakdown,
};

pub use linear_map::{blend_online, map_gradient, map_objective, update_a};
pub use theta::{nu_objective, tau_objective, update_nu, update_tau};

const EARLY_STOP_TOL: f64 = 1e-10;
const EARLY_STOP_PATIENCE: usize = 5;

/// Hyperparameters of the model and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Weight of the discrimination term.
    pub lambda0: f64,
    /// Weight of the `ℓ1` sparsity term.
    pub lambda1: f64,
    /// Weight of the adjustment term and of `||A||²`.
    pub lambda2: f64,
    /// Weight of `||AAᵀ - I||²`.
    pub lambda3: f64,
    /// Weight of `-log|det AᵀA|`.
    pub lambda4: f64,
    /// Weight of the spread prior on the discrimination parameters.
    pub lambda_e: f64,
    /// Representation dimension.
    pub m: usize,
    /// Number of dissimilarity vectors.
    pub c_d: usize,
    /// Number of similarity vectors.
    pub c_s: usize,
    pub iterations: usize,
    /// Fraction of samples drawn for each iteration's parameter updates.
    pub batch_fraction: f64,
    /// Online blending rate for the linear map.
    pub rho_online: f64,
    /// Floor for ratio denominators.
    pub eps: f64,
    pub seed: u64,
    /// Fix the map to the identity and skip its update.
    pub identity: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda0: 0.03,
            lambda1: 0.03,
            lambda2: 16.0,
            lambda3: 16.0,
            lambda4: 16.0,
            lambda_e: 0.001,
            m: 2100,
            c_d: 4,
            c_s: 2,
            iterations: 100,
            batch_fraction: 0.87,
            rho_online: 0.5,
            eps: 1e-12,
            seed: 0,
            identity: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda_e", self.lambda_e),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("m", self.m), ("c_d", self.c_d), ("c_s", self.c_s)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("batch_fraction", self.batch_fraction),
            ("rho_online", self.rho_online),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Shared linear map plus the candidate parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformModel {
    /// M×N map.
    pub a: DMatrix<f64>,
    pub params: DiscriminationParams,
    /// `a` is the identity and is never updated.
    pub identity_mode: bool,
}

impl TransformModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        check_len(
            "model representation dimension",
            self.a.nrows(),
            self.params.dim(),
        )?;
        check_finite("linear map", self.a.as_slice())?;
        if self.identity_mode && self.a != DMatrix::identity(self.a.nrows(), self.a.ncols()) {
            return Err(Error::Data(
                "identity-mode model has a non-identity map".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `A·X` for data stored as columns.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("data dimension", self.a.ncols(), x.nrows())?;
        if self.identity_mode {
            Ok(x.clone())
        } else {
            Ok(&self.a * x)
        }
    }
}

/// The log-determinant prior needs `AᵀA` to be invertible, so `M ≥ N`.
fn check_map_shape(m: usize, n: usize, hyper: &HyperParams) -> Result<()> {
    if hyper.lambda4 > 0.0 && m < n {
        return Err(Error::Config(format!(
            "representation dimension {m} is below the input dimension {n}; \
             the log-determinant prior needs m >= n"
        )));
    }
    Ok(())
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws a model with i.i.d. standard normal entries. The map is filled
/// row-major, then each `τ`, then each `ν`. In identity mode the map is the
/// N×N identity and `M = N`.
pub fn init_model(n: usize, hyper: &HyperParams, seed: u64) -> Result<TransformModel> {
    if n == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    hyper.validate()?;
    if !hyper.identity {
        check_map_shape(hyper.m, n, hyper)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, m) = if hyper.identity {
        (DMatrix::identity(n, n), n)
    } else {
        let values = gaussian_vec(&mut rng, hyper.m * n);
        (DMatrix::from_row_slice(hyper.m, n, &values), hyper.m)
    };
    let taus = (0..hyper.c_d).map(|_| gaussian_vec(&mut rng, m)).collect();
    let nus = (0..hyper.c_s).map(|_| gaussian_vec(&mut rng, m)).collect();
    Ok(TransformModel {
        a,
        params: DiscriminationParams::new(taus, nus)?,
        identity_mode: hyper.identity,
    })
}

/// Why [`fit`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Ran the configured number of iterations.
    IterationLimit,
    /// The relative objective change stayed below tolerance.
    Converged,
}

/// Per-iteration training record. Index `t` describes the state after
/// iteration `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective of the starting model under its own assignments.
    pub initial_objective: ObjectiveBreakdown,
    pub objectives: Vec<ObjectiveBreakdown>,
    /// Number of samples whose candidate changed in the iteration.
    pub label_changes: Vec<usize>,
    pub wall_times: Vec<Duration>,
    pub termination: Termination,
}

impl FitReport {
    /// Objective after the last iteration, or the initial one.
    pub fn final_objective(&self) -> f64 {
        self.objectives
            .last()
            .unwrap_or(&self.initial_objective)
            .total
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: TransformModel,
    pub assignments: Vec<Assignment>,
    pub report: FitReport,
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.column_mut(j).copy_from_slice(column(m, i));
    }
    out
}

/// Data and target for the map update, weighted so that the map objective
/// equals the A-dependent part of the full objective on the batch.
fn map_problem(
    x_batch: &DMatrix<f64>,
    batch: &[Assignment],
    params: &DiscriminationParams,
    lambda2: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = 1.0 + 2.0 * lambda2;
    let s = w.sqrt();
    let m = params.dim();
    let mut target = DMatrix::zeros(m, batch.len());
    for (j, asg) in batch.iter().enumerate() {
        let (tau, nu) = (&params.taus[asg.c1], &params.nus[asg.c2]);
        for r in 0..m {
            target[(r, j)] = s * (asg.y[r] + 2.0 * lambda2 * (tau[r] + nu[r])) / w;
        }
    }
    (x_batch * s, target)
}

/// Trains a model on `x` (N×K, samples as columns). Starts from `initial`
/// when given, otherwise from [`init_model`] with `hyper.seed`.
pub fn fit(
    x: &DMatrix<f64>,
    hyper: &HyperParams,
    initial: Option<TransformModel>,
) -> Result<FitResult> {
    hyper.validate()?;
    let k = x.ncols();
    if k == 0 || x.nrows() == 0 {
        return Err(Error::Data("training data is empty".into()));
    }
    check_finite("training data", x.as_slice())?;
    let mut model = match initial {
        Some(m) => m,
        None => init_model(x.nrows(), hyper, hyper.seed)?,
    };
    model.validate()?;
    check_len("data dimension", model.input_dim(), x.nrows())?;
    if !model.identity_mode {
        check_map_shape(model.output_dim(), model.input_dim(), hyper)?;
    }
    let n_candidates = model.params.n_dissimilar() * model.params.n_similar();
    if k < n_candidates {
        log::warn!("{k} samples for {n_candidates} candidate transforms");
    }

    let mut q = model.project(x)?;
    let mut assignments = assign_batch(&q, &model.params, hyper)?;
    let initial_objective = objective_from_projection(&q, &assignments, &model, hyper)?;
    let mut report = FitReport {
        initial_objective,
        objectives: Vec::new(),
        label_changes: Vec::new(),
        wall_times: Vec::new(),
        termination: Termination::IterationLimit,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let batch_size = ((hyper.batch_fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut previous = initial_objective.total;
    let mut quiet = 0;
    for t in 1..=hyper.iterations {
        let started = Instant::now();
        let step = |e: Error| Error::Iteration {
            iteration: t,
            source: Box::new(e),
        };
        let idx: Vec<usize> = if batch_size == k {
            (0..k).collect()
        } else {
            let mut v = sample(&mut rng, k, batch_size).into_vec();
            v.sort_unstable();
            v
        };
        let q_batch = select_columns(&q, &idx);
        let batch: Vec<Assignment> = idx.iter().map(|&i| assignments[i].clone()).collect();

        for c1 in 0..model.params.n_dissimilar() {
            let tau = update_tau(c1, &q_batch, &batch, &model.params, hyper).map_err(step)?;
            model.params.taus[c1] = tau;
        }
        for c2 in 0..model.params.n_similar() {
            let nu = update_nu(c2, &q_batch, &batch, &model.params, hyper).map_err(step)?;
            model.params.nus[c2] = nu;
        }

        if !model.identity_mode {
            let x_batch = select_columns(x, &idx);
            let (xs, target) = map_problem(&x_batch, &batch, &model.params, hyper.lambda2);
            let a_hat = update_a(&xs, &target, &model.a, hyper).map_err(step)?;
            model.a = blend_online(&model.a, &a_hat, hyper.rho_online);
            check_finite("linear map", model.a.as_slice()).map_err(step)?;
            q = model.project(x)?;
        }

        let next = assign_batch(&q, &model.params, hyper).map_err(step)?;
        let changes = next
            .iter()
            .zip(&assignments)
            .filter(|(a, b)| a.flat_index != b.flat_index)
            .count();
        assignments = next;
        let objective = objective_from_projection(&q, &assignments, &model, hyper).map_err(step)?;
        log::debug!(
            "iteration {t}: objective {:.6e}, {changes} label changes",
            objective.total
        );
        report.objectives.push(objective);
        report.label_changes.push(changes);
        report.wall_times.push(started.elapsed());

        let rel = (objective.total - previous).abs() / previous.abs().max(f64::MIN_POSITIVE);
        previous = objective.total;
        quiet = if rel < EARLY_STOP_TOL { quiet + 1 } else { 0 };
        if quiet >= EARLY_STOP_PATIENCE {
            report.termination = Termination::Converged;
            break;
        }
    }
    Ok(FitResult {
        model,
        assignments,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HyperParams {
        HyperParams {
            m: 5,
            c_d: 2,
            c_s: 2,
            iterations: 3,
            ..HyperParams::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let h = small();
        assert_eq!(init_model(4, &h, 7).unwrap(), init_model(4, &h, 7).unwrap());
        assert_ne!(init_model(4, &h, 7).unwrap(), init_model(4, &h, 8).unwrap());
    }

    #[test]
    fn identity_init() {
        let h = HyperParams {
            identity: true,
            ..small()
        };
        let m = init_model(3, &h, 1).unwrap();
        assert_eq!(m.a, DMatrix::identity(3, 3));
        assert_eq!(m.params.dim(), 3);
    }

    #[test]
    fn config_rejects_unknown_keys_and_fills_defaults() {
        let h: HyperParams = serde_json::from_str(r#"{"m": 5, "seed": 3}"#).unwrap();
        assert_eq!(h.m, 5);
        assert_eq!(h.lambda2, 16.0);
        assert!(serde_json::from_str::<HyperParams>(r#"{"lambda9": 1}"#).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        for bad in [
            HyperParams {
                lambda0: -1.0,
                ..small()
            },
            HyperParams {
                batch_fraction: 0.0,
                ..small()
            },
            HyperParams {
                rho_online: 1.5,
                ..small()
            },
            HyperParams {
                eps: 0.0,
                ..small()
            },
            HyperParams { c_s: 0, ..small() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let x = DMatrix::from_fn(4, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let h = HyperParams {
            iterations: 0,
            ..small()
        };
        let start = init_model(4, &h, 11).unwrap();
        let out = fit(&x, &h, Some(start.clone())).unwrap();
        assert_eq!(out.model, start);
        let expected = assign_batch(&start.project(&x).unwrap(), &start.params, &h).unwrap();
        assert_eq!(out.assignments, expected);
        assert!(out.report.objectives.is_empty());
    }
}
