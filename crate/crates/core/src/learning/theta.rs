//! Discrimination parameter updates.
//!
//! Given frozen assignments, each dissimilarity vector `τ_c1` minimizes
//!
//! ```text
//! Σ_{i: j1(i)=c1} ½||q_i - τ - ν_{j2(i)}||² + λ0 [ρ(y_i,τ)/ρ(y_i,ν_{j2(i)}) + ς(y_i,τ)]
//!     + λE f_c(τ, θ∖c1)
//! ```
//!
//! and each similarity vector `ν_c2` minimizes
//!
//! ```text
//! Σ_{i: j2(i)=c2} ½||q_i - τ_{j1(i)} - ν||² + λ0 ρ(y_i,τ_{j1(i)})/ρ(y_i,ν)
//!     + λE f_c(ν, θ∖c2).
//! ```
//!
//! The leave-one-out prior term is handled by freezing its inner
//! argmin/argmax and its denominator at the incoming vector; the resulting
//! surrogate is separable. A step is only kept when the true objective does
//! not increase.

use nalgebra::DMatrix;

use crate::assignment::Assignment;
use crate::error::{check_len, Error, Result};
use crate::learning::HyperParams;
use crate::measures::{
    column, f_c_leave_one_out, guard, rho_unchecked, sigma_unchecked, DiscriminationParams,
    LeaveOut,
};

const MAX_NU_PASSES: usize = 50;
const NU_REL_TOL: f64 = 1e-8;
const BACKTRACK_STEPS: usize = 30;

fn leave_one_out_value(v: &[f64], params: &DiscriminationParams, left: LeaveOut, eps: f64) -> f64 {
    f_c_leave_one_out(v, params, left, eps).map_or(0.0, |d| d.value)
}

fn check_inputs(
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    params: &DiscriminationParams,
) -> Result<()> {
    check_len("assignments", q.ncols(), assignments.len())?;
    check_len("projection rows", params.dim(), q.nrows())
}

/// Objective of the dissimilarity update for `tau` in slot `c1`.
pub fn tau_objective(
    c1: usize,
    tau: &[f64],
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> f64 {
    let mut value = 0.0;
    for (i, asg) in assignments.iter().enumerate().filter(|(_, a)| a.c1 == c1) {
        let nu = &params.nus[asg.c2];
        let fit: f64 = column(q, i)
            .iter()
            .zip(tau)
            .zip(nu)
            .map(|((q, t), n)| (q - t - n) * (q - t - n))
            .sum();
        let den = guard(rho_unchecked(&asg.y, nu), hyper.eps);
        value += 0.5 * fit
            + hyper.lambda0 * (rho_unchecked(&asg.y, tau) / den + sigma_unchecked(&asg.y, tau));
    }
    if hyper.lambda_e != 0.0 {
        value += hyper.lambda_e * leave_one_out_value(tau, params, LeaveOut::Tau(c1), hyper.eps);
    }
    value
}

/// Objective of the similarity update for `nu` in slot `c2`.
pub fn nu_objective(
    c2: usize,
    nu: &[f64],
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> f64 {
    let mut value = 0.0;
    for (i, asg) in assignments.iter().enumerate().filter(|(_, a)| a.c2 == c2) {
        let tau = &params.taus[asg.c1];
        let fit: f64 = column(q, i)
            .iter()
            .zip(tau)
            .zip(nu)
            .map(|((q, t), n)| (q - t - n) * (q - t - n))
            .sum();
        value += 0.5 * fit
            + hyper.lambda0 * rho_unchecked(&asg.y, tau)
                / guard(rho_unchecked(&asg.y, nu), hyper.eps);
    }
    if hyper.lambda_e != 0.0 {
        value += hyper.lambda_e * leave_one_out_value(nu, params, LeaveOut::Nu(c2), hyper.eps);
    }
    value
}

/// Frozen linearization of the leave-one-out prior around the incoming
/// vector: `(ρ(v, anchor)/den + ς(v, anchor))`.
struct FrozenPrior {
    anchor: Vec<f64>,
    den: f64,
}

fn freeze_prior(
    v: &[f64],
    params: &DiscriminationParams,
    left: LeaveOut,
    eps: f64,
) -> Option<FrozenPrior> {
    let d = f_c_leave_one_out(v, params, left, eps)?;
    Some(FrozenPrior {
        anchor: params.taus[d.c1].clone(),
        den: guard(rho_unchecked(v, &params.nus[d.c2]), eps),
    })
}

/// Accepts `proposal` if it does not increase `objective`, otherwise
/// backtracks toward `start`; returns `start` when nothing improves.
fn accept_monotone(
    start: &[f64],
    proposal: Vec<f64>,
    objective: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let f0 = objective(start);
    if objective(&proposal) <= f0 {
        return proposal;
    }
    let mut step = 1.0;
    for _ in 0..BACKTRACK_STEPS {
        step *= 0.5;
        let trial: Vec<f64> = start
            .iter()
            .zip(&proposal)
            .map(|(s, p)| s + step * (p - s))
            .collect();
        if objective(&trial) <= f0 {
            return trial;
        }
    }
    start.to_vec()
}

/// Updates dissimilarity vector `c1` (0-based) from the samples assigned
/// to it. Returns the incoming vector when no sample is assigned.
pub fn update_tau(
    c1: usize,
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> Result<Vec<f64>> {
    check_inputs(q, assignments, params)?;
    let old = &params.taus[c1];
    let members: Vec<usize> = (0..assignments.len())
        .filter(|&i| assignments[i].c1 == c1)
        .collect();
    if members.is_empty() {
        return Ok(old.clone());
    }
    let dim = params.dim();
    let n = members.len() as f64;
    let mut resid = vec![0.0; dim];
    let mut pos = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    let mut curv = vec![0.0; dim];
    for &i in &members {
        let asg = &assignments[i];
        let nu = &params.nus[asg.c2];
        let den = guard(rho_unchecked(&asg.y, nu), hyper.eps);
        let qi = column(q, i);
        for m in 0..dim {
            resid[m] += qi[m] - nu[m];
            pos[m] += asg.y[m].max(0.0) / den;
            neg[m] += (-asg.y[m]).max(0.0) / den;
            curv[m] += asg.y[m] * asg.y[m];
        }
    }
    let prior = if hyper.lambda_e != 0.0 {
        freeze_prior(old, params, LeaveOut::Tau(c1), hyper.eps)
    } else {
        None
    };
    let new: Vec<f64> = (0..dim)
        .map(|m| {
            let (mut a_pos, mut a_neg, mut beta) = (
                hyper.lambda0 * pos[m],
                hyper.lambda0 * neg[m],
                hyper.lambda0 * curv[m],
            );
            if let Some(p) = &prior {
                let t = p.anchor[m];
                a_pos += hyper.lambda_e * t.max(0.0) / p.den;
                a_neg += hyper.lambda_e * (-t).max(0.0) / p.den;
                beta += hyper.lambda_e * t * t;
            }
            let r = resid[m];
            if r > a_pos {
                (r - a_pos) / (n + 2.0 * beta)
            } else if r < -a_neg {
                (r + a_neg) / (n + 2.0 * beta)
            } else {
                0.0
            }
        })
        .collect();
    if new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dissimilarity update"));
    }
    let objective = |t: &[f64]| tau_objective(c1, t, q, assignments, params, hyper);
    let out = accept_monotone(old, new, objective);
    debug_assert!(objective(&out) <= objective(old) + 1e-9);
    Ok(out)
}

/// One ratio term `a / guard(c + y·z, eps)` of a branch objective.
#[derive(Clone, Copy)]
struct RatioTerm {
    a: f64,
    c: f64,
    y: f64,
}

/// Minimizes `ψ(z) = ½·curv·z² + lin·z + Σ a/guard(c + y z)` over `z ≥ 0`.
///
/// A term whose denominator starts below `eps` is constant up to its
/// breakpoint `(eps - c)/y`, so `ψ` is convex between consecutive
/// breakpoints; each piece is minimized and the best kept.
fn minimize_branch(curv: f64, lin: f64, terms: &[RatioTerm], eps: f64) -> f64 {
    let psi = |z: f64| {
        let mut f = 0.5 * curv * z * z + lin * z;
        for t in terms {
            f += t.a / guard(t.c + t.y * z, eps);
        }
        f
    };
    let breakpoint = |t: &RatioTerm| if t.c < eps { (eps - t.c) / t.y } else { 0.0 };
    let mut starts: Vec<f64> = std::iter::once(0.0)
        .chain(terms.iter().map(breakpoint))
        .collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let mut best = (0.0, psi(0.0));
    for (j, &lo) in starts.iter().enumerate() {
        let hi = starts.get(j + 1).copied();
        let z = minimize_piece(curv, lin, terms, lo, hi, &breakpoint);
        let fz = psi(z);
        if fz < best.1 {
            best = (z, fz);
        }
    }
    best.0
}

/// Convex minimization of `ψ` on `[lo, hi]` where exactly the terms with
/// breakpoint `<= lo` vary.
fn minimize_piece(
    curv: f64,
    lin: f64,
    terms: &[RatioTerm],
    lo: f64,
    hi: Option<f64>,
    breakpoint: &impl Fn(&RatioTerm) -> f64,
) -> f64 {
    let deriv = |z: f64| {
        let mut d = curv * z + lin;
        let mut dd = curv;
        for t in terms.iter().filter(|t| breakpoint(t) <= lo) {
            let u = t.c + t.y * z;
            d -= t.a * t.y / (u * u);
            dd += 2.0 * t.a * t.y * t.y / (u * u * u);
        }
        (d, dd)
    };
    if deriv(lo).0 >= 0.0 {
        return lo;
    }
    let mut a = lo;
    let mut b = match hi {
        Some(h) => {
            if deriv(h).0 <= 0.0 {
                return h;
            }
            h
        }
        None => {
            let mut b = lo + (lin.abs() / curv).max(1.0);
            let mut grow = 0;
            while deriv(b).0 < 0.0 && grow < 400 {
                a = b;
                b = lo + 2.0 * (b - lo);
                grow += 1;
            }
            b
        }
    };
    // Safeguarded Newton on ψ'.
    let mut z = 0.5 * (a + b);
    for _ in 0..100 {
        let (d, dd) = deriv(z);
        if d == 0.0 {
            return z;
        }
        if d < 0.0 {
            a = z;
        } else {
            b = z;
        }
        let newton = z - d / dd;
        z = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= 1e-14 * b.max(1e-300) {
            break;
        }
    }
    z
}

/// Updates similarity vector `c2` (0-based) by coordinate descent.
/// Returns the incoming vector when no sample is assigned.
pub fn update_nu(
    c2: usize,
    q: &DMatrix<f64>,
    assignments: &[Assignment],
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> Result<Vec<f64>> {
    check_inputs(q, assignments, params)?;
    let old = &params.nus[c2];
    let members: Vec<usize> = (0..assignments.len())
        .filter(|&i| assignments[i].c2 == c2)
        .collect();
    if members.is_empty() {
        return Ok(old.clone());
    }
    let dim = params.dim();
    let eps = hyper.eps;
    let n = members.len() as f64;
    let mut resid = vec![0.0; dim];
    let mut numer = Vec::with_capacity(members.len());
    for &i in &members {
        let asg = &assignments[i];
        let tau = &params.taus[asg.c1];
        let qi = column(q, i);
        for m in 0..dim {
            resid[m] += qi[m] - tau[m];
        }
        numer.push(hyper.lambda0 * rho_unchecked(&asg.y, tau));
    }
    let objective = |v: &[f64]| nu_objective(c2, v, q, assignments, params, hyper);

    let mut nu = old.clone();
    let mut value = objective(&nu);
    let mut terms = Vec::with_capacity(members.len());
    for _ in 0..MAX_NU_PASSES {
        let start = nu.clone();
        let prior = if hyper.lambda_e != 0.0 {
            freeze_prior(&nu, params, LeaveOut::Nu(c2), eps)
        } else {
            None
        };
        let mut dens: Vec<f64> = members
            .iter()
            .map(|&i| rho_unchecked(&assignments[i].y, &nu))
            .collect();
        for m in 0..dim {
            let cur = nu[m];
            let (p_anchor, n_anchor, anchor_sq) = prior.as_ref().map_or((0.0, 0.0, 0.0), |p| {
                let t = p.anchor[m];
                (t.max(0.0) / p.den, (-t).max(0.0) / p.den, t * t)
            });
            let curv = n + 2.0 * hyper.lambda_e * anchor_sq;
            let rest: Vec<f64> = members
                .iter()
                .zip(&dens)
                .map(|(&i, &d)| {
                    let y = assignments[i].y[m];
                    d - (y.max(0.0) * cur.max(0.0) + (-y).max(0.0) * (-cur).max(0.0))
                })
                .collect();
            // Coordinate objective up to a constant.
            let phi = |x: f64| {
                let mut f = 0.5 * curv * x * x - resid[m] * x
                    + hyper.lambda_e * (p_anchor * x.max(0.0) + n_anchor * (-x).max(0.0));
                for (k, &i) in members.iter().enumerate() {
                    let y = assignments[i].y[m];
                    let u = rest[k] + y.max(0.0) * x.max(0.0) + (-y).max(0.0) * (-x).max(0.0);
                    f += numer[k] / guard(u, eps);
                }
                f
            };
            let mut best = (cur, phi(cur));
            for sign in [1.0, -1.0] {
                terms.clear();
                for (k, &i) in members.iter().enumerate() {
                    let y = (sign * assignments[i].y[m]).max(0.0);
                    if y > 0.0 && numer[k] > 0.0 {
                        terms.push(RatioTerm {
                            a: numer[k],
                            c: rest[k],
                            y,
                        });
                    }
                }
                let anchor = if sign > 0.0 { p_anchor } else { n_anchor };
                let lin = -sign * resid[m] + hyper.lambda_e * anchor;
                let x = sign * minimize_branch(curv, lin, &terms, eps);
                let fx = phi(x);
                if fx < best.1 {
                    best = (x, fx);
                }
            }
            let x = best.0;
            if x != cur {
                nu[m] = x;
                for ((&i, d), r) in members.iter().zip(dens.iter_mut()).zip(&rest) {
                    let y = assignments[i].y[m];
                    *d = r + y.max(0.0) * x.max(0.0) + (-y).max(0.0) * (-x).max(0.0);
                }
            }
        }
        if nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity update"));
        }
        let proposal = std::mem::take(&mut nu);
        nu = accept_monotone(&start, proposal, objective);
        let new_value = objective(&nu);
        let change = nu
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = start
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let converged = change <= NU_REL_TOL * scale || new_value >= value;
        value = new_value;
        if converged {
            break;
        }
    }
    debug_assert!(objective(&nu) <= objective(old) + 1e-9);
    Ok(nu)
}
