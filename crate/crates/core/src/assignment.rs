//! Candidate representation estimation and cluster assignment.
//!
//! Every sample `q = Ax` is pushed through all `C_d·C_s` candidate
//! transforms. Each candidate solves
//!
//! ```text
//! min_y  ½||q - y||² + λ1||y||₁ + λ0 [ ρ(y,τ)/ρ(y,ν) + ς(y,τ) ]
//! ```
//!
//! over representations that keep the sign pattern of `q`, and the sample
//! is assigned to the candidate with the smallest discrimination score.
//!
//! On the sign-consistent set, write `y = sign(q) ⊙ a` with `a ≥ 0`. Then
//! `ρ(y,τ) = gᵀa`, `ρ(y,ν) = vᵀa` and the problem becomes
//!
//! ```text
//! F(a) = ½||‖q‖ - a||² + λ1 1ᵀa + λ0 Σ τ²a² + λ0 gᵀa / vᵀa.
//! ```
//!
//! Fixing the denominator `h = vᵀa` leaves a strongly convex separable
//! problem with one linear constraint, solved exactly by a breakpoint walk
//! over the multiplier `μ`:
//! `a(h) = max(|q| - t(h), 0) ⊘ k` with `k = 1 + 2λ0 τ⊙τ` and
//! `t(h) = λ1 + λ0 g/h - μ(h) v`. The optimal `h` is a root of the
//! self-consistency residual `μ(h) - λ0 gᵀa(h)/h²`; at such a root
//! `μ = λ0 e/h²` with `e = gᵀa`, which is the generalized soft threshold
//! `t = λ1 + λ0 (g/h - e v/h²)`. Roots are bracketed on a grid over the
//! admissible range of `h` and refined by regula falsi; the best stationary
//! point (compared together with the boundary solutions) is returned.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::learning::HyperParams;
use crate::measures::{column, guard, rho_unchecked, sigma_unchecked, DiscriminationParams};
use crate::par::{map_indexed, Execution};

/// Relative bracket width at which the root search stops.
const ROOT_TOL: f64 = 1e-10;
const LOG_GRID: usize = 24;
const LINEAR_GRID: usize = 8;

/// Solution of one candidate subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSolution {
    pub y: Vec<f64>,
    /// `½||q-y||² + λ1||y||₁ + λ0 s_P(y)` at the returned `y`.
    pub sub_objective: f64,
    /// The similarity denominator `ρ(y,ν)` fell below `eps`.
    pub clamped: bool,
    /// No root bracket was found and the coordinate-descent fallback ran.
    pub fallback: bool,
}

/// Cluster and representation assigned to one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Winning dissimilarity index, 0-based.
    pub c1: usize,
    /// Winning similarity index, 0-based.
    pub c2: usize,
    /// Flat candidate label `c2 + c1·C_s + 1`, in `1..=C_d·C_s`.
    pub flat_index: usize,
    pub y: Vec<f64>,
    /// `s_P` at the winner.
    pub score: f64,
    pub clamped: bool,
    pub fallback: bool,
    /// Spread (max - min) of the `½||q-y||² + λ1||y||₁` terms across
    /// candidates; the assignment assumes these are roughly equal.
    pub l1_spread: f64,
}

impl Assignment {
    /// 1-based dissimilarity index, the cluster id when similarity
    /// candidates are collapsed.
    pub fn dissimilarity_label(&self) -> usize {
        self.c1 + 1
    }
}

/// 1-based flat label for the 0-based pair `(c1, c2)`.
pub fn flat_index(c1: usize, c2: usize, n_similar: usize) -> usize {
    c2 + c1 * n_similar + 1
}

/// Inverse of [`flat_index`].
pub fn pair_from_flat(flat: usize, n_similar: usize) -> (usize, usize) {
    let z = flat - 1;
    (z / n_similar, z % n_similar)
}

/// `s_P = ρ(y,τ)/ρ(y,ν) + ς(y,τ)`, denominator clamped at `eps`.
pub fn score_sp(y: &[f64], tau: &[f64], nu: &[f64], eps: f64) -> Result<f64> {
    check_len("score_sp", y.len(), tau.len())?;
    check_len("score_sp", y.len(), nu.len())?;
    Ok(score_unchecked(y, tau, nu, eps))
}

#[inline]
fn score_unchecked(y: &[f64], tau: &[f64], nu: &[f64], eps: f64) -> f64 {
    rho_unchecked(y, tau) / guard(rho_unchecked(y, nu), eps) + sigma_unchecked(y, tau)
}

fn l1_term(q: &[f64], y: &[f64], lambda1: f64) -> f64 {
    q.iter()
        .zip(y)
        .map(|(&q, &y)| 0.5 * (q - y) * (q - y) + lambda1 * y.abs())
        .sum()
}

/// The candidate subproblem objective evaluated at an arbitrary `y`.
pub fn sub_objective(
    q: &[f64],
    y: &[f64],
    tau: &[f64],
    nu: &[f64],
    lambda0: f64,
    lambda1: f64,
    eps: f64,
) -> Result<f64> {
    check_len("sub_objective", q.len(), y.len())?;
    let score = score_sp(y, tau, nu, eps)?;
    Ok(l1_term(q, y, lambda1) + lambda0 * score)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sign(q) ⊙ max(|q| - λ1, 0)`.
pub fn soft_threshold(q: &[f64], lambda1: f64) -> Vec<f64> {
    q.iter()
        .map(|&v| sign(v) * (v.abs() - lambda1).max(0.0))
        .collect()
}

/// The candidate problem restricted to the support of `q` in magnitude
/// coordinates `a ≥ 0`.
struct Reduced {
    support: Vec<usize>,
    abs_q: Vec<f64>,
    g: Vec<f64>,
    v: Vec<f64>,
    k: Vec<f64>,
    tau_sq: Vec<f64>,
    lambda0: f64,
    lambda1: f64,
    eps: f64,
}

struct Probe {
    h: f64,
    residual: f64,
    value: f64,
    a: Vec<f64>,
}

impl Reduced {
    fn new(q: &[f64], tau: &[f64], nu: &[f64], lambda0: f64, lambda1: f64, eps: f64) -> Self {
        let support: Vec<usize> = (0..q.len()).filter(|&m| q[m] != 0.0).collect();
        let pick = |p: &[f64], m: usize| {
            if q[m] > 0.0 {
                p[m].max(0.0)
            } else {
                (-p[m]).max(0.0)
            }
        };
        Reduced {
            abs_q: support.iter().map(|&m| q[m].abs()).collect(),
            g: support.iter().map(|&m| pick(tau, m)).collect(),
            v: support.iter().map(|&m| pick(nu, m)).collect(),
            k: support
                .iter()
                .map(|&m| 1.0 + 2.0 * lambda0 * tau[m] * tau[m])
                .collect(),
            tau_sq: support.iter().map(|&m| tau[m] * tau[m]).collect(),
            support,
            lambda0,
            lambda1,
            eps,
        }
    }

    fn len(&self) -> usize {
        self.support.len()
    }

    fn objective(&self, a: &[f64]) -> f64 {
        let mut fit = 0.0;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut strength = 0.0;
        for m in 0..self.len() {
            let d = self.abs_q[m] - a[m];
            fit += 0.5 * d * d + self.lambda1 * a[m];
            num += self.g[m] * a[m];
            den += self.v[m] * a[m];
            strength += self.tau_sq[m] * a[m] * a[m];
        }
        fit + self.lambda0 * (num / guard(den, self.eps) + strength)
    }

    fn dot(x: &[f64], a: &[f64]) -> f64 {
        x.iter().zip(a).map(|(x, a)| x * a).sum()
    }

    /// Solution with a fixed extra threshold `offset ⊙ per_coordinate`.
    fn thresholded(&self, extra: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|m| (self.abs_q[m] - self.lambda1 - extra(m)).max(0.0) / self.k[m])
            .collect()
    }

    /// Exact minimizer of the fixed-denominator problem (`vᵀa = h`).
    /// Writes `a` and returns the multiplier `μ`.
    fn solve_fixed_h(&self, h: f64, a: &mut [f64], order: &mut Vec<(f64, usize)>) -> f64 {
        let n = self.len();
        let base = |m: usize| self.abs_q[m] - self.lambda1 - self.lambda0 * self.g[m] / h;
        order.clear();
        for m in 0..n {
            if self.v[m] > 0.0 {
                order.push((-base(m) / self.v[m], m));
            }
        }
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        // vᵀa(μ) = offset + μ·slope on the active set.
        let mut offset = 0.0;
        let mut slope = 0.0;
        let mut mu = 0.0;
        for j in 0..order.len() {
            let m = order[j].1;
            offset += self.v[m] * base(m) / self.k[m];
            slope += self.v[m] * self.v[m] / self.k[m];
            mu = (h - offset) / slope;
            let next = order.get(j + 1).map_or(f64::INFINITY, |x| x.0);
            if mu <= next {
                break;
            }
        }
        for m in 0..n {
            a[m] = (base(m) + mu * self.v[m]).max(0.0) / self.k[m];
        }
        mu
    }

    fn probe(&self, h: f64, order: &mut Vec<(f64, usize)>) -> Probe {
        let mut a = vec![0.0; self.len()];
        let mu = self.solve_fixed_h(h, &mut a, order);
        let residual = mu - self.lambda0 * Self::dot(&self.g, &a) / (h * h);
        Probe {
            h,
            residual,
            value: self.objective(&a),
            a,
        }
    }

    /// Regula falsi (Illinois) on the residual over `[lo, hi]` with
    /// `r(lo) < 0 <= r(hi)`.
    fn refine(&self, lo: &Probe, hi: &Probe, order: &mut Vec<(f64, usize)>) -> Probe {
        let (mut l, mut rl) = (lo.h, lo.residual);
        let (mut u, mut ru) = (hi.h, hi.residual);
        let mut side = 0i8;
        let mut best = None;
        for _ in 0..200 {
            let mut h = u - ru * (u - l) / (ru - rl);
            if !(h > l && h < u) {
                h = 0.5 * (l + u);
            }
            let p = self.probe(h, order);
            let r = p.residual;
            let done = r == 0.0 || (u - l) < ROOT_TOL * u;
            if r < 0.0 {
                l = h;
                rl = r;
                if side == -1 {
                    ru *= 0.5;
                }
                side = -1;
            } else {
                u = h;
                ru = r;
                if side == 1 {
                    rl *= 0.5;
                }
                side = 1;
            }
            best = Some(p);
            if done || (u - l) < ROOT_TOL * u {
                break;
            }
        }
        best.expect("at least one refinement step")
    }

    /// Coordinate descent with golden-section line minimization, used when
    /// no root bracket exists.
    fn coordinate_polish(&self, a: &mut [f64], upper: f64) {
        let mut value = self.objective(a);
        for _ in 0..50 {
            let before = value;
            for m in 0..self.len() {
                let old = a[m];
                let mut f = |x: f64| {
                    a[m] = x;
                    self.objective(a)
                };
                let (x, fx) = golden_section(&mut f, 0.0, upper.max(old), 80);
                let f0 = f(0.0);
                let (best_x, best_f) = [(old, value), (x, fx), (0.0, f0)]
                    .into_iter()
                    .fold((old, value), |acc, c| if c.1 < acc.1 { c } else { acc });
                a[m] = best_x;
                value = best_f;
            }
            if before - value <= 1e-15 * (1.0 + value.abs()) {
                break;
            }
        }
    }
}

fn golden_section(
    f: &mut impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    iters: usize,
) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Solves one candidate subproblem for the pair `(tau, nu)`.
pub fn solve_candidate(
    q: &[f64],
    tau: &[f64],
    nu: &[f64],
    lambda0: f64,
    lambda1: f64,
    eps: f64,
) -> Result<CandidateSolution> {
    check_len("solve_candidate tau", q.len(), tau.len())?;
    check_len("solve_candidate nu", q.len(), nu.len())?;
    if !(lambda0 >= 0.0 && lambda1 >= 0.0 && eps > 0.0) {
        return Err(Error::Config(format!(
            "solve_candidate needs λ0, λ1 >= 0 and eps > 0, got {lambda0}, {lambda1}, {eps}"
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate input"));
    }

    if lambda0 == 0.0 {
        let y = soft_threshold(q, lambda1);
        return finish(q, y, tau, nu, lambda0, lambda1, eps, false);
    }

    let red = Reduced::new(q, tau, nu, lambda0, lambda1, eps);
    if red.len() == 0 {
        return finish(q, vec![0.0; q.len()], tau, nu, lambda0, lambda1, eps, false);
    }

    // Boundary solutions: y = 0, the clamped-denominator regime, and the
    // h -> ∞ limit where the ratio term is negligible.
    let mut candidates: Vec<Vec<f64>> = vec![
        vec![0.0; red.len()],
        red.thresholded(|m| lambda0 * red.g[m] / eps),
        red.thresholded(|_| 0.0),
    ];

    let q_norm = red.abs_q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v_norm = red.v.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut fallback = false;
    if v_norm > 0.0 {
        // Any minimizer satisfies ||a - |q||| <= ||q||, hence vᵀa <= 2||q||·||v||.
        let h_max = (2.0 * q_norm * v_norm).max(100.0 * eps);
        let h_min = (h_max * 1e-9).max(10.0 * eps);
        let mut grid: Vec<f64> = (0..LOG_GRID)
            .map(|j| h_min * (h_max / h_min).powf(j as f64 / (LOG_GRID - 1) as f64))
            .chain((1..=LINEAR_GRID).map(|j| h_max * j as f64 / LINEAR_GRID as f64))
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let mut order = Vec::with_capacity(red.len());
        let probes: Vec<Probe> = grid.iter().map(|&h| red.probe(h, &mut order)).collect();
        let mut bracketed = false;
        for w in probes.windows(2) {
            if w[0].residual < 0.0 && w[1].residual >= 0.0 {
                bracketed = true;
                candidates.push(red.refine(&w[0], &w[1], &mut order).a);
            }
        }
        let best_grid = probes
            .iter()
            .fold(&probes[0], |b, p| if p.value < b.value { p } else { b });
        candidates.push(best_grid.a.clone());

        if !bracketed {
            fallback = true;
            log::debug!("no denominator root bracket; polishing by coordinate descent");
            let mut a = best_of(&red, &candidates).clone();
            red.coordinate_polish(&mut a, 2.0 * q_norm + 1.0);
            candidates.push(a);
        }
    }

    let a = best_of(&red, &candidates);
    let mut y = vec![0.0; q.len()];
    for (j, &m) in red.support.iter().enumerate() {
        y[m] = sign(q[m]) * a[j];
    }
    finish(q, y, tau, nu, lambda0, lambda1, eps, fallback)
}

fn best_of<'a>(red: &Reduced, candidates: &'a [Vec<f64>]) -> &'a Vec<f64> {
    let mut best = &candidates[0];
    let mut best_value = red.objective(best);
    for c in &candidates[1..] {
        let value = red.objective(c);
        if value < best_value {
            best = c;
            best_value = value;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn finish(
    q: &[f64],
    y: Vec<f64>,
    tau: &[f64],
    nu: &[f64],
    lambda0: f64,
    lambda1: f64,
    eps: f64,
    fallback: bool,
) -> Result<CandidateSolution> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate representation"));
    }
    let clamped = rho_unchecked(&y, nu) < eps;
    let sub_objective = l1_term(q, &y, lambda1) + lambda0 * score_unchecked(&y, tau, nu, eps);
    Ok(CandidateSolution {
        y,
        sub_objective,
        clamped,
        fallback,
    })
}

/// Solves all candidates for one sample and assigns the pair with the
/// smallest weighted score `λ0·s_P`; ties go to the smallest `(c1, c2)`.
///
/// With `λ0 = 0` every candidate shares the same representation and the
/// weighted score is identically zero, so the sample goes to `(0, 0)`.
pub fn assign_sample(
    q: &[f64],
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> Result<Assignment> {
    params.validate()?;
    check_len("assign_sample", params.dim(), q.len())?;
    let n_similar = params.n_similar();
    let solve = |c1: usize, c2: usize| {
        solve_candidate(
            q,
            &params.taus[c1],
            &params.nus[c2],
            hyper.lambda0,
            hyper.lambda1,
            hyper.eps,
        )
        .map_err(|e| Error::Candidate {
            c1: c1 + 1,
            c2: c2 + 1,
            source: Box::new(e),
        })
    };

    if hyper.lambda0 == 0.0 {
        let cand = solve(0, 0)?;
        let score = score_unchecked(&cand.y, &params.taus[0], &params.nus[0], hyper.eps);
        return Ok(Assignment {
            c1: 0,
            c2: 0,
            flat_index: 1,
            y: cand.y,
            score,
            clamped: cand.clamped,
            fallback: cand.fallback,
            l1_spread: 0.0,
        });
    }

    let mut best: Option<(usize, usize, f64, CandidateSolution)> = None;
    let mut l1_min = f64::INFINITY;
    let mut l1_max = f64::NEG_INFINITY;
    for c1 in 0..params.n_dissimilar() {
        for c2 in 0..n_similar {
            let cand = solve(c1, c2)?;
            let l1 = l1_term(q, &cand.y, hyper.lambda1);
            l1_min = l1_min.min(l1);
            l1_max = l1_max.max(l1);
            let score = score_unchecked(&cand.y, &params.taus[c1], &params.nus[c2], hyper.eps);
            if best.as_ref().is_none_or(|b| score < b.2) {
                best = Some((c1, c2, score, cand));
            }
        }
    }
    let (c1, c2, score, cand) = best.expect("parameters are nonempty");
    Ok(Assignment {
        c1,
        c2,
        flat_index: flat_index(c1, c2, n_similar),
        y: cand.y,
        score,
        clamped: cand.clamped,
        fallback: cand.fallback,
        l1_spread: l1_max - l1_min,
    })
}

/// Assigns every column of `q` (M×K), scheduled per [`Execution::default`].
pub fn assign_batch(
    q: &DMatrix<f64>,
    params: &DiscriminationParams,
    hyper: &HyperParams,
) -> Result<Vec<Assignment>> {
    assign_batch_with(q, params, hyper, Execution::default())
}

/// Assigns every column of `q`; output order matches column order for any
/// execution mode.
pub fn assign_batch_with(
    q: &DMatrix<f64>,
    params: &DiscriminationParams,
    hyper: &HyperParams,
    exec: Execution,
) -> Result<Vec<Assignment>> {
    if q.ncols() == 0 {
        return Err(Error::Data("cannot assign an empty batch".into()));
    }
    params.validate()?;
    check_len("assign_batch rows", params.dim(), q.nrows())?;
    let out = map_indexed(q.ncols(), exec, |i| {
        assign_sample(column(q, i), params, hyper).map_err(|e| Error::Sample {
            index: i,
            source: Box::new(e),
        })
    })?;
    let clamped = out.iter().filter(|a| a.clamped).count();
    let fallbacks = out.iter().filter(|a| a.fallback).count();
    if clamped > 0 || fallbacks > 0 {
        log::debug!("assignment batch: {clamped} clamped denominators, {fallbacks} fallbacks");
    }
    if log::log_enabled!(log::Level::Trace) {
        let spread = out.iter().map(|a| a.l1_spread).fold(0.0, f64::max);
        log::trace!("assignment batch: max l1 spread {spread:.3e}");
    }
    Ok(out)
}
