//! Scalar measures on transform representations and the full learning
//! objective.
//!
//! All measures act on plain slices so they can be applied to matrix
//! columns, parameter vectors and candidate representations alike.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{check_finite, check_len, Error, Result};
use crate::learning::{HyperParams, TransformModel};

/// Elementwise split of a vector into its positive and negative parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSplit {
    pub positive_part: Vec<f64>,
    pub negative_part: Vec<f64>,
}

pub fn split_signs(y: &[f64]) -> Result<SignSplit> {
    check_finite("split_signs input", y)?;
    Ok(SignSplit {
        positive_part: y.iter().map(|&v| v.max(0.0)).collect(),
        negative_part: y.iter().map(|&v| (-v).max(0.0)).collect(),
    })
}

/// Sign-split similarity: co-activated positive parts plus co-activated
/// negative parts.
pub fn rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("rho", a.len(), b.len())?;
    Ok(rho_unchecked(a, b))
}

#[inline]
pub(crate) fn rho_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.max(0.0) * y.max(0.0) + (-x).max(0.0) * (-y).max(0.0))
        .sum()
}

/// Support strength `||a ⊙ b||²`.
pub fn sigma_strength(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("sigma_strength", a.len(), b.len())?;
    Ok(sigma_unchecked(a, b))
}

#[inline]
pub(crate) fn sigma_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x * y) * (x * y)).sum()
}

#[inline]
pub(crate) fn guard(denominator: f64, eps: f64) -> f64 {
    if denominator < eps {
        eps
    } else {
        denominator
    }
}

/// Dissimilarity (`taus`) and similarity (`nus`) parameter vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationParams {
    pub taus: Vec<Vec<f64>>,
    pub nus: Vec<Vec<f64>>,
}

impl DiscriminationParams {
    pub fn new(taus: Vec<Vec<f64>>, nus: Vec<Vec<f64>>) -> Result<Self> {
        let params = Self { taus, nus };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.nus.is_empty() {
            return Err(Error::Config(format!(
                "need at least one dissimilarity and one similarity vector, got {} and {}",
                self.taus.len(),
                self.nus.len()
            )));
        }
        let dim = self.taus[0].len();
        for v in self.taus.iter().chain(&self.nus) {
            check_len("discrimination parameter", dim, v.len())?;
            check_finite("discrimination parameter", v)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.taus.first().map_or(0, Vec::len)
    }

    pub fn n_dissimilar(&self) -> usize {
        self.taus.len()
    }

    pub fn n_similar(&self) -> usize {
        self.nus.len()
    }
}

/// Value of the min-max discrimination measure with the winning
/// (dissimilarity, similarity) indices, both 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrimination {
    pub value: f64,
    pub c1: usize,
    pub c2: usize,
}

/// Min-max measure over arbitrary candidate families. `None` when either
/// family is empty.
fn min_max<'a, T, N>(y: &[f64], taus: T, nus: N, eps: f64) -> Option<Discrimination>
where
    T: Iterator<Item = (usize, &'a [f64])>,
    N: Iterator<Item = (usize, &'a [f64])>,
{
    let mut best_nu: Option<(usize, f64)> = None;
    for (c2, nu) in nus {
        let r = rho_unchecked(y, nu);
        if best_nu.is_none_or(|(_, b)| r > b) {
            best_nu = Some((c2, r));
        }
    }
    let (c2, den) = best_nu?;
    let den = guard(den, eps);
    let mut best: Option<Discrimination> = None;
    for (c1, tau) in taus {
        let value = rho_unchecked(y, tau) / den + sigma_unchecked(y, tau);
        if best.is_none_or(|b| value < b.value) {
            best = Some(Discrimination { value, c1, c2 });
        }
    }
    best
}

/// Min over dissimilarity vectors of `rho(y,τ)/max_ν rho(y,ν) + ς(y,τ)`.
/// Denominators below `eps` are clamped; ties go to the smallest indices.
pub fn f_c(y: &[f64], params: &DiscriminationParams, eps: f64) -> Result<Discrimination> {
    if params.taus.is_empty() || params.nus.is_empty() {
        return Err(Error::Config("empty discrimination parameters".into()));
    }
    check_len("f_c", params.dim(), y.len())?;
    let taus = params.taus.iter().map(Vec::as_slice).enumerate();
    let nus = params.nus.iter().map(Vec::as_slice).enumerate();
    Ok(min_max(y, taus, nus, eps).expect("families are nonempty"))
}

/// Which parameter vector is left out of the family in a leave-one-out
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaveOut {
    Tau(usize),
    Nu(usize),
}

/// `f_c(v, θ∖v)` with indices reported against the full parameter set.
/// `None` when the leave-one-out set has an empty family.
pub fn f_c_leave_one_out(
    v: &[f64],
    params: &DiscriminationParams,
    left_out: LeaveOut,
    eps: f64,
) -> Option<Discrimination> {
    let skip_tau = match left_out {
        LeaveOut::Tau(i) => Some(i),
        LeaveOut::Nu(_) => None,
    };
    let skip_nu = match left_out {
        LeaveOut::Nu(i) => Some(i),
        LeaveOut::Tau(_) => None,
    };
    let taus = params
        .taus
        .iter()
        .map(Vec::as_slice)
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip_tau);
    let nus = params
        .nus
        .iter()
        .map(Vec::as_slice)
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip_nu);
    min_max(v, taus, nus, eps)
}

/// Squared transform error `||q - y||²`.
pub fn u_r(q: &[f64], y: &[f64]) -> Result<f64> {
    check_len("u_r", q.len(), y.len())?;
    Ok(q.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Adjustment error `||q - τ - ν||²`.
pub fn u_a(q: &[f64], tau: &[f64], nu: &[f64]) -> Result<f64> {
    check_len("u_a", q.len(), tau.len())?;
    check_len("u_a", q.len(), nu.len())?;
    Ok(q.iter()
        .zip(tau)
        .zip(nu)
        .map(|((q, t), n)| {
            let d = q - t - n;
            d * d
        })
        .sum())
}

/// Parameter-spread prior: every parameter vector is scored by the min-max
/// measure against all the others.
///
/// A leave-one-out term whose remaining dissimilarity or similarity family
/// is empty contributes nothing. With a single vector of each kind the
/// prior is identically zero, which is logged as degenerate.
pub fn u_p(params: &DiscriminationParams, eps: f64) -> f64 {
    if params.n_dissimilar() + params.n_similar() < 2
        || (params.n_dissimilar() == 1 && params.n_similar() == 1)
    {
        log::warn!("degenerate spread prior: too few discrimination vectors");
        return 0.0;
    }
    let taus = params
        .taus
        .iter()
        .enumerate()
        .filter_map(|(i, t)| f_c_leave_one_out(t, params, LeaveOut::Tau(i), eps))
        .map(|d| d.value);
    let nus = params
        .nus
        .iter()
        .enumerate()
        .filter_map(|(i, n)| f_c_leave_one_out(n, params, LeaveOut::Nu(i), eps))
        .map(|d| d.value);
    taus.chain(nus).sum()
}

/// Smallest admissible eigenvalue of `AᵀA` relative to its largest.
const RANK_TOL: f64 = 1e-12;

/// Prior on the linear map:
/// `λ2/2 ||A||² + λ3/2 ||AAᵀ - I||² - λ4 log|det AᵀA|`.
pub fn f_d(a: &DMatrix<f64>, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<f64> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Dimension {
            what: "f_d requires rows >= columns",
            expected: n,
            found: m,
        });
    }
    check_finite("linear map", a.as_slice())?;
    let gram = a.transpose() * a;
    let frob2 = a.norm_squared();
    // ||AAᵀ - I||² = ||AᵀA||² - 2||A||² + M
    let orth = (gram.norm_squared() - 2.0 * frob2 + m as f64).max(0.0);
    let mut value = 0.5 * lambda2 * frob2 + 0.5 * lambda3 * orth;
    if lambda4 != 0.0 {
        value -= lambda4 * log_det_gram(&gram)?;
    }
    Ok(value)
}

/// `log det G` for the symmetric Gram matrix `G = AᵀA`, failing when `G`
/// is numerically singular.
pub(crate) fn log_det_gram(gram: &DMatrix<f64>) -> Result<f64> {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= RANK_TOL * max {
        let rank = eig.iter().filter(|&&e| e > RANK_TOL * max).count();
        return Err(Error::Numeric(format!(
            "AᵀA is singular (numerical rank {rank} of {})",
            eig.len()
        )));
    }
    Ok(eig.iter().map(|e| e.ln()).sum())
}

/// Components of the full learning objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub nt_error: f64,
    pub adjustment: f64,
    pub discrimination: f64,
    pub sparsity: f64,
    pub spread: f64,
    pub map_prior: f64,
    pub total: f64,
}

/// Full objective for data `x` (N×K, samples as columns) under `model` and
/// the per-sample `assignments`.
pub fn total_objective(
    x: &DMatrix<f64>,
    assignments: &[Assignment],
    model: &TransformModel,
    hyper: &HyperParams,
) -> Result<ObjectiveBreakdown> {
    let q = model.project(x)?;
    objective_from_projection(&q, assignments, model, hyper)
}

pub(crate) fn objective_from_projection(
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    model: &TransformModel,
    hyper: &HyperParams,
) -> Result<ObjectiveBreakdown> {
    check_len("objective assignments", q.ncols(), assignments.len())?;
    let params = &model.params;
    let mut out = ObjectiveBreakdown::default();
    for (i, asg) in assignments.iter().enumerate() {
        let qi = column(q, i);
        let y = &asg.y;
        out.nt_error += 0.5 * u_r(qi, y)?;
        out.adjustment += u_a(qi, &params.taus[asg.c1], &params.nus[asg.c2])?;
        out.discrimination += f_c(y, params, hyper.eps)?.value;
        out.sparsity += y.iter().map(|v| v.abs()).sum::<f64>();
    }
    out.adjustment *= hyper.lambda2;
    out.discrimination *= hyper.lambda0;
    out.sparsity *= hyper.lambda1;
    out.spread = if hyper.lambda_e == 0.0 {
        0.0
    } else {
        hyper.lambda_e * u_p(params, hyper.eps)
    };
    out.map_prior = if model.identity_mode {
        0.0
    } else {
        f_d(&model.a, hyper.lambda2, hyper.lambda3, hyper.lambda4)?
    };
    out.total = out.nt_error
        + out.adjustment
        + out.discrimination
        + out.sparsity
        + out.spread
        + out.map_prior;
    if !out.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective {out:?}")));
    }
    Ok(out)
}

/// Column `i` of a column-major matrix as a slice.
#[inline]
pub(crate) fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let rows = m.nrows();
    &m.as_slice()[i * rows..(i + 1) * rows]
}
