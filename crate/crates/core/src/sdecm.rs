//! Separable directed enhanced configuration model.
//!
//! A maximum-entropy ensemble of directed weighted networks that matches,
//! on average, every bank's in/out-degree and in/out-strength. Links are
//! independent Bernoulli variables with
//!
//! ```text
//! p_ij = 1 / (1 + exp(alpha_out_i + alpha_in_j))
//! ```
//!
//! and, given a link, its weight is exponential with rate
//! `beta_out_i + beta_in_j`. The binary multipliers are fitted first and
//! the weight multipliers afterwards, conditionally on them.
//!
//! Multipliers are defined up to a gauge shift (`alpha_out + c`,
//! `alpha_in - c`, and the same for the betas); compare fitted models
//! through probabilities and rates, never raw multipliers.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Banks, InterbankNetwork, NodeMargins};

/// Version of the per-sample seeding scheme: stream `index` of a ChaCha20
/// generator seeded from the master seed with `seed_from_u64`.
pub const SEED_SCHEME_VERSION: u32 = 1;
/// Largest absolute degree residual accepted from the binary fit.
pub const BINARY_TOLERANCE: f64 = 1e-8;
/// Largest relative strength residual accepted from the weight fit.
pub const WEIGHT_TOLERANCE: f64 = 1e-8;

const DAMPING: f64 = 0.5;
const FIXED_POINT_CAP: usize = 100_000;
const STAGNATION_WINDOW: usize = 200;
const NEWTON_CAP: usize = 200;
const SATURATION_EPS: f64 = 1e-12;

/// Constraint values measured on an empirical network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTargets {
    labels: Vec<String>,
    k_out: Vec<f64>,
    k_in: Vec<f64>,
    s_out: Vec<f64>,
    s_in: Vec<f64>,
}

impl FitTargets {
    /// Checks feasibility: `0 <= k <= n - 1`, matching degree and strength
    /// totals, and positive strength exactly where the degree is positive.
    /// Labels must be strictly increasing so they index like [`Banks`].
    pub fn new(labels: Vec<String>, k_out: Vec<f64>, k_in: Vec<f64>, s_out: Vec<f64>, s_in: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        for len in [k_out.len(), k_in.len(), s_out.len(), s_in.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, found: len });
            }
        }
        if n < 2 {
            return Err(Error::InfeasibleTargets("need at least two banks".into()));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("labels must be strictly increasing".into()));
        }
        let max_k = (n - 1) as f64;
        for i in 0..n {
            for (k, s, side) in [(k_out[i], s_out[i], "out"), (k_in[i], s_in[i], "in")] {
                if !(0.0..=max_k).contains(&k) {
                    return Err(Error::InfeasibleTargets(alloc::format!(
                        "{side}-degree {k} of `{}` outside [0, {max_k}]",
                        labels[i]
                    )));
                }
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::InfeasibleTargets(alloc::format!(
                        "{side}-strength {s} of `{}` is not a nonnegative number",
                        labels[i]
                    )));
                }
                if (k > 0.0) != (s > 0.0) {
                    return Err(Error::InfeasibleTargets(alloc::format!(
                        "`{}` has {side}-degree {k} but {side}-strength {s}",
                        labels[i]
                    )));
                }
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let (ko, ki): (f64, f64) = (k_out.iter().sum(), k_in.iter().sum());
        let (so, si): (f64, f64) = (s_out.iter().sum(), s_in.iter().sum());
        if !close(ko, ki) {
            return Err(Error::InfeasibleTargets(alloc::format!(
                "total out-degree {ko} differs from total in-degree {ki}"
            )));
        }
        if !close(so, si) {
            return Err(Error::InfeasibleTargets(alloc::format!(
                "total out-strength {so} differs from total in-strength {si}"
            )));
        }
        Ok(FitTargets { labels, k_out, k_in, s_out, s_in })
    }

    pub fn from_margins(labels: Vec<String>, m: &NodeMargins) -> Result<Self> {
        Self::new(
            labels,
            m.k_out.iter().map(|&k| k as f64).collect(),
            m.k_in.iter().map(|&k| k as f64).collect(),
            m.s_out.clone(),
            m.s_in.clone(),
        )
    }

    pub fn from_network(net: &InterbankNetwork) -> Result<Self> {
        Self::from_margins(net.banks().labels().to_vec(), &net.margins())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn k_out(&self) -> &[f64] {
        &self.k_out
    }

    pub fn k_in(&self) -> &[f64] {
        &self.k_in
    }

    pub fn s_out(&self) -> &[f64] {
        &self.s_out
    }

    pub fn s_in(&self) -> &[f64] {
        &self.s_in
    }

    /// Same degrees with new strengths.
    pub fn with_strengths(&self, s_out: Vec<f64>, s_in: Vec<f64>) -> Result<Self> {
        Self::new(self.labels.clone(), self.k_out.clone(), self.k_in.clone(), s_out, s_in)
    }
}

/// Probability of a link given the two binary multipliers.
///
/// `-inf` (a bank linked to every admissible counterpart) takes precedence
/// over `+inf` (a bank with no links on that side). Fitted models resolve
/// that clash with [`pair_probability`] instead.
#[inline]
pub fn logistic_probability(alpha_out: f64, alpha_in: f64) -> f64 {
    if alpha_out == f64::NEG_INFINITY || alpha_in == f64::NEG_INFINITY {
        1.0
    } else if alpha_out == f64::INFINITY || alpha_in == f64::INFINITY {
        0.0
    } else {
        1.0 / (1.0 + libm::exp(alpha_out + alpha_in))
    }
}

/// Like [`logistic_probability`], but when one multiplier is `-inf` and the
/// other `+inf` the node that saturated first (lower positive `stage`) wins:
/// the later one was saturated with that link already settled.
#[inline]
pub fn pair_probability(alpha_out: f64, alpha_in: f64, stage_out: u32, stage_in: u32) -> f64 {
    let clash = (alpha_out == f64::NEG_INFINITY && alpha_in == f64::INFINITY)
        || (alpha_out == f64::INFINITY && alpha_in == f64::NEG_INFINITY);
    if clash {
        let first = if stage_out < stage_in { alpha_out } else { alpha_in };
        if first == f64::NEG_INFINITY {
            1.0
        } else {
            0.0
        }
    } else {
        logistic_probability(alpha_out, alpha_in)
    }
}

/// Result of the binary (degree) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub alpha_out: Vec<f64>,
    pub alpha_in: Vec<f64>,
    /// Order in which infinite multipliers were fixed; 0 for finite ones.
    pub stage_out: Vec<u32>,
    pub stage_in: Vec<u32>,
    /// Largest absolute degree residual.
    pub residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
}

impl BinaryFit {
    pub fn probability(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            pair_probability(self.alpha_out[i], self.alpha_in[j], self.stage_out[i], self.stage_in[j])
        }
    }

    fn probability_matrix(&self) -> Vec<f64> {
        let n = self.alpha_out.len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = self.probability(i, j);
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    /// No links on this side (`alpha = +inf`).
    Empty,
    /// Linked to every admissible counterpart (`alpha = -inf`).
    Full,
}

struct Saturation {
    out: Vec<Side>,
    inn: Vec<Side>,
    stage_out: Vec<u32>,
    stage_in: Vec<u32>,
}

/// Marks nodes whose targets sit on a boundary and so need an infinite
/// multiplier, recording the pass that marked each one.
fn saturate(t: &FitTargets) -> Result<Saturation> {
    let n = t.n();
    let max_k = (n - 1) as f64;
    let classify = |k: f64| {
        if k <= SATURATION_EPS {
            Side::Empty
        } else if k >= max_k - SATURATION_EPS {
            Side::Full
        } else {
            Side::Free
        }
    };
    let mut out: Vec<Side> = t.k_out.iter().map(|&k| classify(k)).collect();
    let mut inn: Vec<Side> = t.k_in.iter().map(|&k| classify(k)).collect();
    let initial = |s: &Side| if *s == Side::Free { 0 } else { 1 };
    let mut stage_out: Vec<u32> = out.iter().map(initial).collect();
    let mut stage_in: Vec<u32> = inn.iter().map(initial).collect();

    // A bank lending to everybody needs everybody to have a lender.
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if (out[i] == Side::Full && t.k_in[j] <= SATURATION_EPS)
                || (inn[j] == Side::Full && t.k_out[i] <= SATURATION_EPS)
            {
                return Err(Error::InfeasibleTargets(alloc::format!(
                    "`{}` -> `{}` must be linked and unlinked at once",
                    t.labels[i],
                    t.labels[j]
                )));
            }
        }
    }

    // Targets reachable only at a boundary once the saturated nodes are
    // accounted for.
    let mut stage = 1;
    loop {
        stage += 1;
        let changed_out = saturate_pass(&mut out, &mut stage_out, stage, &inn, &t.k_out, &t.labels)?;
        stage += 1;
        let changed_in = saturate_pass(&mut inn, &mut stage_in, stage, &out, &t.k_in, &t.labels)?;
        if !changed_out && !changed_in {
            break;
        }
    }
    Ok(Saturation { out, inn, stage_out, stage_in })
}

fn saturate_pass(
    sides: &mut [Side],
    stages: &mut [u32],
    stage: u32,
    others: &[Side],
    targets: &[f64],
    labels: &[String],
) -> Result<bool> {
    let n = sides.len();
    let mut changed = false;
    for i in 0..n {
        if sides[i] != Side::Free {
            continue;
        }
        let full = (0..n).filter(|&j| j != i && others[j] == Side::Full).count() as f64;
        let free = (0..n).filter(|&j| j != i && others[j] == Side::Free).count() as f64;
        let k = targets[i] - full;
        if k < -SATURATION_EPS || k > free + SATURATION_EPS {
            return Err(Error::InfeasibleTargets(alloc::format!(
                "degree {} of `{}` is out of reach",
                targets[i],
                labels[i]
            )));
        }
        if k.abs() <= SATURATION_EPS {
            sides[i] = Side::Empty;
        } else if (k - free).abs() <= SATURATION_EPS {
            sides[i] = Side::Full;
        } else {
            continue;
        }
        stages[i] = stage;
        changed = true;
    }
    Ok(changed)
}

/// Fits the binary multipliers to the degree targets.
///
/// A damped fixed point on `x = exp(-alpha)` runs first; when it stalls, a
/// Newton iteration on the free multipliers takes over. Banks with
/// boundary targets (no links, or linked to everyone) get infinite
/// multipliers and stay out of the solve.
pub fn fit_binary(t: &FitTargets) -> Result<BinaryFit> {
    let n = t.n();
    let Saturation { out: out_side, inn: in_side, stage_out, stage_in } = saturate(t)?;
    let free_out: Vec<usize> = (0..n).filter(|&i| out_side[i] == Side::Free).collect();
    let free_in: Vec<usize> = (0..n).filter(|&j| in_side[j] == Side::Free).collect();

    // Effective targets after removing the certain links to saturated nodes.
    let eff = |targets: &[f64], others: &[Side], i: usize| {
        targets[i] - (0..n).filter(|&j| j != i && others[j] == Side::Full).count() as f64
    };
    let ko: Vec<f64> = (0..n).map(|i| eff(&t.k_out, &in_side, i)).collect();
    let ki: Vec<f64> = (0..n).map(|j| eff(&t.k_in, &out_side, j)).collect();

    let total: f64 = t.k_out.iter().sum();
    let scale = libm::sqrt(total.max(1.0));
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for &i in &free_out {
        x[i] = ko[i] / scale;
    }
    for &j in &free_in {
        y[j] = ki[j] / scale;
    }

    let residual_xy = |x: &[f64], y: &[f64]| -> f64 {
        let mut r: f64 = 0.0;
        for &i in &free_out {
            let s: f64 = free_in.iter().filter(|&&j| j != i).map(|&j| x[i] * y[j] / (1.0 + x[i] * y[j])).sum();
            r = r.max((s - ko[i]).abs());
        }
        for &j in &free_in {
            let s: f64 = free_out.iter().filter(|&&i| i != j).map(|&i| x[i] * y[j] / (1.0 + x[i] * y[j])).sum();
            r = r.max((s - ki[j]).abs());
        }
        r
    };

    let mut residual = residual_xy(&x, &y);
    let mut iterations = 0;
    let mut checkpoint = residual;
    let mut nx = vec![0.0; n];
    let mut ny = vec![0.0; n];
    while residual > BINARY_TOLERANCE && iterations < FIXED_POINT_CAP {
        for &i in &free_out {
            let d: f64 = free_in.iter().filter(|&&j| j != i).map(|&j| y[j] / (1.0 + x[i] * y[j])).sum();
            nx[i] = ko[i] / d;
        }
        for &j in &free_in {
            let d: f64 = free_out.iter().filter(|&&i| i != j).map(|&i| x[i] / (1.0 + x[i] * y[j])).sum();
            ny[j] = ki[j] / d;
        }
        for &i in &free_out {
            x[i] = DAMPING * x[i] + (1.0 - DAMPING) * nx[i];
        }
        for &j in &free_in {
            y[j] = DAMPING * y[j] + (1.0 - DAMPING) * ny[j];
        }
        iterations += 1;
        residual = residual_xy(&x, &y);
        if !residual.is_finite() {
            break;
        }
        if iterations % STAGNATION_WINDOW == 0 {
            if residual > 0.5 * checkpoint {
                break;
            }
            checkpoint = residual;
        }
    }

    let mut alpha_out: Vec<f64> = (0..n)
        .map(|i| match out_side[i] {
            Side::Empty => f64::INFINITY,
            Side::Full => f64::NEG_INFINITY,
            Side::Free => -libm::log(x[i]),
        })
        .collect();
    let mut alpha_in: Vec<f64> = (0..n)
        .map(|j| match in_side[j] {
            Side::Empty => f64::INFINITY,
            Side::Full => f64::NEG_INFINITY,
            Side::Free => -libm::log(y[j]),
        })
        .collect();

    let mut newton_steps = 0;
    if !(residual <= BINARY_TOLERANCE) {
        if alpha_out.iter().chain(&alpha_in).any(|a| a.is_nan()) {
            // fixed point blew up; restart Newton from the factorized guess
            for &i in &free_out {
                alpha_out[i] = -libm::log(ko[i] / scale);
            }
            for &j in &free_in {
                alpha_in[j] = -libm::log(ki[j] / scale);
            }
        }
        newton_steps = newton_binary(&free_out, &free_in, &ko, &ki, &mut alpha_out, &mut alpha_in);
    }

    let fit = BinaryFit { alpha_out, alpha_in, stage_out, stage_in, residual: 0.0, iterations, newton_steps };
    let residual = binary_residual(t, &fit);
    if !(residual <= BINARY_TOLERANCE) {
        return Err(Error::NotConverged { what: "binary fit", iterations: iterations + newton_steps, residual });
    }
    Ok(BinaryFit { residual, ..fit })
}

/// Largest absolute gap between expected and target degrees.
fn binary_residual(t: &FitTargets, fit: &BinaryFit) -> f64 {
    let n = t.n();
    let mut k_out = vec![0.0; n];
    let mut k_in = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let p = fit.probability(i, j);
            k_out[i] += p;
            k_in[j] += p;
        }
    }
    (0..n).map(|i| (k_out[i] - t.k_out[i]).abs().max((k_in[i] - t.k_in[i]).abs())).fold(0.0, f64::max)
}

/// Damped Newton on the free binary multipliers; returns the step count.
fn newton_binary(
    free_out: &[usize],
    free_in: &[usize],
    ko: &[f64],
    ki: &[f64],
    alpha_out: &mut [f64],
    alpha_in: &mut [f64],
) -> usize {
    let no = free_out.len();
    let m = no + free_in.len();
    if m == 0 {
        return 0;
    }
    let gradient = |ao: &[f64], ai: &[f64], hess: Option<&mut Vec<f64>>| -> Vec<f64> {
        let mut f = vec![0.0; m];
        let mut h = hess;
        for (a, &i) in free_out.iter().enumerate() {
            f[a] -= ko[i];
        }
        for (b, &j) in free_in.iter().enumerate() {
            f[no + b] -= ki[j];
        }
        for (a, &i) in free_out.iter().enumerate() {
            for (b, &j) in free_in.iter().enumerate() {
                if i == j {
                    continue;
                }
                let p = logistic_probability(ao[i], ai[j]);
                f[a] += p;
                f[no + b] += p;
                if let Some(h) = h.as_deref_mut() {
                    let v = p * (1.0 - p);
                    h[a * m + a] += v;
                    h[(no + b) * m + no + b] += v;
                    h[a * m + no + b] += v;
                    h[(no + b) * m + a] += v;
                }
            }
        }
        f
    };
    let norm = |f: &[f64]| libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());

    let mut steps = 0;
    let mut hess = linalg::zeros(m);
    let mut f = gradient(alpha_out, alpha_in, None);
    while steps < NEWTON_CAP {
        if f.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= BINARY_TOLERANCE * 1e-3 {
            break;
        }
        hess.iter_mut().for_each(|v| *v = 0.0);
        f = gradient(alpha_out, alpha_in, Some(&mut hess));
        let diag_max = (0..m).map(|a| hess[a * m + a]).fold(0.0, f64::max);
        let mu = 1e-12 * diag_max.max(1e-300);
        for a in 0..m {
            hess[a * m + a] += mu;
        }
        let mut delta = f.clone();
        if !linalg::solve_in_place(&mut hess, &mut delta) {
            break;
        }
        steps += 1;
        let current = norm(&f);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let mut ao = alpha_out.to_vec();
            let mut ai = alpha_in.to_vec();
            for (a, &i) in free_out.iter().enumerate() {
                ao[i] += t * delta[a];
            }
            for (b, &j) in free_in.iter().enumerate() {
                ai[j] += t * delta[no + b];
            }
            let trial = gradient(&ao, &ai, None);
            if norm(&trial) < current {
                alpha_out.copy_from_slice(&ao);
                alpha_in.copy_from_slice(&ai);
                f = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    steps
}

/// Result of the weight (strength) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub beta_out: Vec<f64>,
    pub beta_in: Vec<f64>,
    /// Largest relative strength residual.
    pub residual: f64,
    pub sweeps: usize,
    pub newton_steps: usize,
}

/// Solves `sum_k p_k / (b + o_k) = s` for `b` over the domain where every
/// rate with `p_k > 0` is positive.
fn solve_rate_offset(p: &[f64], offsets: &[f64], s: f64) -> f64 {
    let mut min_o = f64::INFINITY;
    let mut sum_p = 0.0;
    for (&pk, &ok) in p.iter().zip(offsets) {
        if pk > 0.0 {
            min_o = min_o.min(ok);
            sum_p += pk;
        }
    }
    // u = b + min_o > 0
    let f = |u: f64| -> (f64, f64) {
        let (mut v, mut d) = (0.0, 0.0);
        for (&pk, &ok) in p.iter().zip(offsets) {
            if pk > 0.0 {
                let r = u + (ok - min_o);
                v += pk / r;
                d -= pk / (r * r);
            }
        }
        (v, d)
    };
    let mut hi = sum_p / s;
    let p0: f64 = p.iter().zip(offsets).filter(|(&pk, &ok)| pk > 0.0 && ok == min_o).map(|(&pk, _)| pk).sum();
    let d_max = p.iter().zip(offsets).filter(|(&pk, _)| pk > 0.0).map(|(_, &ok)| ok - min_o).fold(0.0, f64::max);
    let mut lo = (p0 / s).max(sum_p / s - d_max).min(hi);
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (v, d) = f(u);
        let gap = v - s;
        if gap.abs() <= 1e-15 * s {
            break;
        }
        if gap > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        // Newton on 1/f, nearly linear in u
        let step = (1.0 / v - 1.0 / s) / (-d / (v * v));
        let cand = u - step;
        u = if cand > lo && cand < hi && cand.is_finite() { cand } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    u - min_o
}

/// Fits the weight multipliers to the strength targets given the binary
/// fit. Binary multipliers are not touched.
///
/// Alternates exact per-bank solves for the out-multipliers and the
/// in-multipliers (each block is separable), and hands over to Newton on
/// the joint system when the sweeps stall.
pub fn fit_weights(t: &FitTargets, binary: &BinaryFit) -> Result<WeightFit> {
    let n = t.n();
    if binary.alpha_out.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: binary.alpha_out.len() });
    }
    let p = binary.probability_matrix();
    let mut kexp_out = vec![0.0; n];
    let mut kexp_in = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            kexp_out[i] += p[i * n + j];
            kexp_in[j] += p[i * n + j];
        }
    }
    let active_out: Vec<usize> = (0..n).filter(|&i| kexp_out[i] > 0.0).collect();
    let active_in: Vec<usize> = (0..n).filter(|&j| kexp_in[j] > 0.0).collect();
    for &i in &active_out {
        if !(t.s_out[i] > 0.0) {
            return Err(Error::InfeasibleTargets(alloc::format!(
                "`{}` has expected links but no out-strength",
                t.labels[i]
            )));
        }
    }
    for &j in &active_in {
        if !(t.s_in[j] > 0.0) {
            return Err(Error::InfeasibleTargets(alloc::format!(
                "`{}` has expected links but no in-strength",
                t.labels[j]
            )));
        }
    }

    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    for &i in &active_out {
        b[i] = 0.5 * kexp_out[i] / t.s_out[i];
    }
    for &j in &active_in {
        c[j] = 0.5 * kexp_in[j] / t.s_in[j];
    }

    let residual = |b: &[f64], c: &[f64]| weight_residual(t, &p, b, c);

    let mut row_p = vec![0.0; n];
    let mut offs = vec![0.0; n];
    let mut sweeps = 0;
    let mut res = residual(&b, &c);
    let mut checkpoint = res;
    while res > WEIGHT_TOLERANCE && sweeps < FIXED_POINT_CAP {
        for &i in &active_out {
            for j in 0..n {
                row_p[j] = p[i * n + j];
                offs[j] = c[j];
            }
            b[i] = solve_rate_offset(&row_p, &offs, t.s_out[i]);
        }
        for &j in &active_in {
            for i in 0..n {
                row_p[i] = p[i * n + j];
                offs[i] = b[i];
            }
            c[j] = solve_rate_offset(&row_p, &offs, t.s_in[j]);
        }
        sweeps += 1;
        res = residual(&b, &c);
        if sweeps % STAGNATION_WINDOW == 0 {
            if res > 0.5 * checkpoint {
                break;
            }
            checkpoint = res;
        }
    }

    let mut newton_steps = 0;
    if !(res <= WEIGHT_TOLERANCE) {
        newton_steps = newton_weights(t, &p, &active_out, &active_in, &mut b, &mut c);
        res = residual(&b, &c);
    }
    if !(res <= WEIGHT_TOLERANCE) {
        return Err(Error::NotConverged { what: "weight fit", iterations: sweeps + newton_steps, residual: res });
    }
    Ok(WeightFit { beta_out: b, beta_in: c, residual: res, sweeps, newton_steps })
}

fn weight_residual(t: &FitTargets, p: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let n = t.n();
    let mut so = vec![0.0; n];
    let mut si = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if pij > 0.0 {
                let r = b[i] + c[j];
                if !(r > 0.0) {
                    return f64::INFINITY;
                }
                so[i] += pij / r;
                si[j] += pij / r;
            }
        }
    }
    let rel = |x: f64, target: f64| {
        if target > 0.0 {
            (x - target).abs() / target
        } else {
            x.abs()
        }
    };
    (0..n).map(|i| rel(so[i], t.s_out[i]).max(rel(si[i], t.s_in[i]))).fold(0.0, f64::max)
}

/// Damped Newton on the joint weight system, with relative residuals.
fn newton_weights(
    t: &FitTargets,
    p: &[f64],
    active_out: &[usize],
    active_in: &[usize],
    b: &mut [f64],
    c: &mut [f64],
) -> usize {
    let n = t.n();
    let no = active_out.len();
    let m = no + active_in.len();
    let mut pos_in = vec![usize::MAX; n];
    for (k, &j) in active_in.iter().enumerate() {
        pos_in[j] = no + k;
    }
    // relative residuals and, optionally, the Jacobian of -residual
    let system = |b: &[f64], c: &[f64], jac: Option<&mut Vec<f64>>| -> Option<Vec<f64>> {
        let mut f = vec![0.0; m];
        let mut jac = jac;
        for (a, &i) in active_out.iter().enumerate() {
            for j in 0..n {
                let pij = p[i * n + j];
                if pij == 0.0 {
                    continue;
                }
                let r = b[i] + c[j];
                if !(r > 0.0) {
                    return None;
                }
                let e = pij / r;
                let d = pij / (r * r);
                let bj = pos_in[j];
                f[a] += e / t.s_out[i];
                f[bj] += e / t.s_in[j];
                if let Some(h) = jac.as_deref_mut() {
                    h[a * m + a] += d / t.s_out[i];
                    h[a * m + bj] += d / t.s_out[i];
                    h[bj * m + bj] += d / t.s_in[j];
                    h[bj * m + a] += d / t.s_in[j];
                }
            }
        }
        for v in f.iter_mut() {
            *v -= 1.0;
        }
        Some(f)
    };
    let norm = |f: &[f64]| libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());

    let mut steps = 0;
    let mut jac = linalg::zeros(m);
    while steps < NEWTON_CAP {
        jac.iter_mut().for_each(|v| *v = 0.0);
        let f = match system(b, c, Some(&mut jac)) {
            Some(f) => f,
            None => break,
        };
        if f.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= WEIGHT_TOLERANCE * 1e-3 {
            break;
        }
        let diag_max = (0..m).map(|a| jac[a * m + a]).fold(0.0, f64::max);
        for a in 0..m {
            jac[a * m + a] += 1e-12 * diag_max;
        }
        // residual decreases as rates grow: J = -jac, so step = jac^{-1} f
        let mut delta = f.clone();
        if !linalg::solve_in_place(&mut jac, &mut delta) {
            break;
        }
        steps += 1;
        let current = norm(&f);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let mut nb = b.to_vec();
            let mut nc = c.to_vec();
            for (a, &i) in active_out.iter().enumerate() {
                nb[i] += step * delta[a];
            }
            for (k, &j) in active_in.iter().enumerate() {
                nc[j] += step * delta[no + k];
            }
            if let Some(trial) = system(&nb, &nc, None) {
                if norm(&trial) < current {
                    b.copy_from_slice(&nb);
                    c.copy_from_slice(&nc);
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    steps
}

/// Fit diagnostics stored alongside the multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub binary_residual: f64,
    pub binary_iterations: usize,
    pub binary_newton_steps: usize,
    pub weight_residual: f64,
    pub weight_sweeps: usize,
    pub weight_newton_steps: usize,
}

/// A fitted null model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdecmParams {
    pub labels: Vec<String>,
    #[serde(with = "crate::float_serde")]
    pub alpha_out: Vec<f64>,
    #[serde(with = "crate::float_serde")]
    pub alpha_in: Vec<f64>,
    /// Saturation order of infinite multipliers, see [`pair_probability`].
    pub stage_out: Vec<u32>,
    pub stage_in: Vec<u32>,
    #[serde(with = "crate::float_serde")]
    pub beta_out: Vec<f64>,
    #[serde(with = "crate::float_serde")]
    pub beta_in: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub seed_scheme_version: u32,
}

/// Expected degrees and strengths under a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMargins {
    pub k_out: Vec<f64>,
    pub k_in: Vec<f64>,
    pub s_out: Vec<f64>,
    pub s_in: Vec<f64>,
}

/// Fits both layers of the model.
pub fn fit(t: &FitTargets) -> Result<SdecmParams> {
    let binary = fit_binary(t)?;
    let weights = fit_weights(t, &binary)?;
    Ok(SdecmParams::from_fits(t.labels.clone(), binary, weights))
}

impl SdecmParams {
    pub fn from_fits(labels: Vec<String>, binary: BinaryFit, weights: WeightFit) -> Self {
        SdecmParams {
            labels,
            diagnostics: FitDiagnostics {
                binary_residual: binary.residual,
                binary_iterations: binary.iterations,
                binary_newton_steps: binary.newton_steps,
                weight_residual: weights.residual,
                weight_sweeps: weights.sweeps,
                weight_newton_steps: weights.newton_steps,
            },
            alpha_out: binary.alpha_out,
            alpha_in: binary.alpha_in,
            stage_out: binary.stage_out,
            stage_in: binary.stage_in,
            beta_out: weights.beta_out,
            beta_in: weights.beta_in,
            seed_scheme_version: SEED_SCHEME_VERSION,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Checks shapes, label order and positive rates on every admissible
    /// pair; use after deserializing.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for len in [
            self.alpha_out.len(),
            self.alpha_in.len(),
            self.stage_out.len(),
            self.stage_in.len(),
            self.beta_out.len(),
            self.beta_in.len(),
        ] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, found: len });
            }
        }
        if self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("labels must be strictly increasing".into()));
        }
        if self.seed_scheme_version != SEED_SCHEME_VERSION {
            return Err(Error::InvalidParameter(alloc::format!(
                "unsupported seed scheme version {}",
                self.seed_scheme_version
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.probability(i, j) > 0.0 && !(self.rate(i, j) > 0.0) {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "non-positive weight rate on `{}` -> `{}`",
                        self.labels[i],
                        self.labels[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn banks(&self) -> Banks {
        Banks::new(self.labels.iter().cloned())
    }

    fn probability(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            pair_probability(self.alpha_out[i], self.alpha_in[j], self.stage_out[i], self.stage_in[j])
        }
    }

    fn rate(&self, i: usize, j: usize) -> f64 {
        self.beta_out[i] + self.beta_in[j]
    }

    /// Probability that `i` lends to `j`.
    pub fn link_probability(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::InvalidParameter("no self-links".into()));
        }
        Ok(self.probability(i, j))
    }

    /// Mean exposure of `i` to `j` given that the link exists.
    pub fn expected_weight(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::InvalidParameter("no self-links".into()));
        }
        let r = self.rate(i, j);
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("non-positive weight rate {r} on pair ({i}, {j})")));
        }
        Ok(1.0 / r)
    }

    /// Unconditional expected exposure `p_ij / rate_ij`.
    pub fn expected_exposure(&self, i: usize, j: usize) -> f64 {
        let p = self.probability(i, j);
        if p == 0.0 {
            0.0
        } else {
            p / self.rate(i, j)
        }
    }

    /// Closed-form expected degrees and strengths.
    pub fn analytic_margins(&self) -> ExpectedMargins {
        let n = self.n();
        let mut m =
            ExpectedMargins { k_out: vec![0.0; n], k_in: vec![0.0; n], s_out: vec![0.0; n], s_in: vec![0.0; n] };
        for i in 0..n {
            for j in 0..n {
                let p = self.probability(i, j);
                if p > 0.0 {
                    let w = p / self.rate(i, j);
                    m.k_out[i] += p;
                    m.k_in[j] += p;
                    m.s_out[i] += w;
                    m.s_in[j] += w;
                }
            }
        }
        m
    }

    /// Precomputes probabilities and rates for repeated sampling.
    pub fn sampler(&self) -> Sampler {
        let n = self.n();
        let mut prob = vec![0.0; n * n];
        let mut rate = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                prob[i * n + j] = self.probability(i, j);
                rate[i * n + j] = self.rate(i, j);
            }
        }
        Sampler { banks: Arc::new(self.banks()), prob, rate }
    }

    /// Draws sample `index` of the ensemble seeded by `master_seed`.
    pub fn sample_network(&self, master_seed: u64, index: u64) -> InterbankNetwork {
        self.sampler().sample(master_seed, index)
    }
}

/// The generator used for sample `index` under `master_seed`.
pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws networks from a fitted model.
#[derive(Debug, Clone)]
pub struct Sampler {
    banks: Arc<Banks>,
    prob: Vec<f64>,
    rate: Vec<f64>,
}

impl Sampler {
    pub fn banks(&self) -> &Arc<Banks> {
        &self.banks
    }

    /// Independent Bernoulli link per ordered pair, exponential weight per
    /// link. Pairs with zero probability consume no randomness.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> InterbankNetwork {
        let n = self.banks.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let p = self.prob[i * n + j];
                if i == j || p == 0.0 {
                    continue;
                }
                let u: f64 = rng.random();
                if u < p {
                    let e: f64 = Exp1.sample(rng);
                    let w = e / self.rate[i * n + j];
                    // a zero draw would vanish from the sparse network
                    edges.push((i, j, if w > 0.0 { w } else { f64::MIN_POSITIVE }));
                }
            }
        }
        InterbankNetwork::from_indexed_unchecked(self.banks.clone(), edges)
    }

    pub fn sample(&self, master_seed: u64, index: u64) -> InterbankNetwork {
        self.sample_with(&mut sample_rng(master_seed, index))
    }
}
