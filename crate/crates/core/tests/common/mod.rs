//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept separate from the library's sampler.
    let u: f64 = r.random::<f64>().max(1e-300);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn gauss_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * gauss(r)).collect()
}

pub fn gauss_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * gauss(r))
}

/// Co-signed overlap, written coordinate by coordinate.
pub fn overlap(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        if a[i] > 0.0 && b[i] > 0.0 {
            s += a[i] * b[i];
        }
        if a[i] < 0.0 && b[i] < 0.0 {
            s += a[i] * b[i];
        }
    }
    s
}

pub fn strength(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len()).map(|i| (a[i] * b[i]).powi(2)).sum()
}

pub fn candidate_cost(
    q: &[f64],
    y: &[f64],
    tau: &[f64],
    nu: &[f64],
    l0: f64,
    l1: f64,
    eps: f64,
) -> f64 {
    let mut f = 0.0;
    for i in 0..q.len() {
        f += 0.5 * (q[i] - y[i]).powi(2) + l1 * y[i].abs();
    }
    f + l0 * (overlap(y, tau) / overlap(y, nu).max(eps) + strength(y, tau))
}

/// Minimizes a one-dimensional function on `[lo, hi]` by a dense scan
/// followed by golden-section refinement around the best grid point.
pub fn scan_1d(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let mut best = (lo, f(lo));
    let step = (hi - lo) / points as f64;
    for k in 0..=points {
        let x = lo + step * k as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        if b - a < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    for x in [a, b, 0.5 * (a + b)] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    // Exact zero is often optimal for thresholding problems.
    if lo <= 0.0 && hi >= 0.0 {
        let v = f(0.0);
        if v <= best.1 {
            best = (0.0, v);
        }
    }
    best
}

/// Coordinate descent with a dense 1-D scan per coordinate, started from
/// each of `starts`; returns the best point found.
pub fn coordinate_descent(
    f: &dyn Fn(&[f64]) -> f64,
    starts: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    points: usize,
) -> (Vec<f64>, f64) {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let mut x = start.clone();
        let mut fx = f(&x);
        for _ in 0..500 {
            let before = fx;
            for m in 0..x.len() {
                if lo[m] == hi[m] {
                    x[m] = lo[m];
                    continue;
                }
                let probe = std::cell::RefCell::new(x.clone());
                let (xm, v) = scan_1d(
                    &|t| {
                        let mut p = probe.borrow_mut();
                        p[m] = t;
                        f(&p)
                    },
                    lo[m],
                    hi[m],
                    points,
                );
                if v < fx {
                    x[m] = xm;
                    fx = v;
                }
            }
            if before - fx <= 1e-15 * (1.0 + fx.abs()) {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| fx < b.1) {
            best = Some((x, fx));
        }
    }
    best.expect("at least one start")
}

/// Oracle minimum of the candidate subproblem over representations whose
/// signs follow `q`.
pub fn candidate_oracle(q: &[f64], tau: &[f64], nu: &[f64], l0: f64, l1: f64, eps: f64) -> f64 {
    let m = q.len();
    let bound: Vec<f64> = q.iter().map(|v| 2.0 * v.abs() + 1.0).collect();
    let lo: Vec<f64> = q
        .iter()
        .zip(&bound)
        .map(|(v, b)| if *v < 0.0 { -b } else { 0.0 })
        .collect();
    let hi: Vec<f64> = q
        .iter()
        .zip(&bound)
        .map(|(v, b)| if *v > 0.0 { *b } else { 0.0 })
        .collect();
    let soft: Vec<f64> = q
        .iter()
        .map(|v| v.signum() * (v.abs() - l1).max(0.0))
        .collect();
    let mut starts = vec![q.to_vec(), soft, vec![0.0; m]];
    // Single-coordinate supports help escape ratio plateaus.
    for k in 0..m {
        let mut s = vec![0.0; m];
        s[k] = q[k];
        starts.push(s);
    }
    let f = |y: &[f64]| candidate_cost(q, y, tau, nu, l0, l1, eps);
    coordinate_descent(&f, &starts, &lo, &hi, 400).1
}

/// Mutual information and entropies from label counts.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let count = |keys: Vec<(usize, usize)>| {
        let mut h: HashMap<(usize, usize), f64> = HashMap::new();
        for k in keys {
            *h.entry(k).or_default() += 1.0;
        }
        h
    };
    let ent = |h: &HashMap<(usize, usize), f64>| -> f64 {
        h.values().map(|c| -(c / n) * (c / n).ln()).sum()
    };
    let ha = ent(&count(a.iter().map(|&x| (x, 0)).collect()));
    let hb = ent(&count(b.iter().map(|&x| (0, x)).collect()));
    let hab = ent(&count(a.iter().copied().zip(b.iter().copied()).collect()));
    if ha == 0.0 || hb == 0.0 {
        // Identical up to relabeling means both are single clusters here.
        let same = ha == 0.0 && hb == 0.0;
        return if same { 1.0 } else { 0.0 };
    }
    let mi = ha + hb - hab;
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

/// Best agreement over every injective relabeling of `pred` ids into the
/// union of ids.
pub fn accuracy_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let mut ids: Vec<usize> = pred.iter().chain(truth).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut p_ids: Vec<usize> = pred.to_vec();
    p_ids.sort_unstable();
    p_ids.dedup();
    let mut best = 0;
    let mut perm: Vec<usize> = (0..ids.len()).collect();
    permutations(&mut perm, 0, &mut |p| {
        let map: HashMap<usize, usize> = p_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, ids[p[i]]))
            .collect();
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(x, t)| map[x] == **t)
            .count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permutations(v: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Median of a nonempty slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
