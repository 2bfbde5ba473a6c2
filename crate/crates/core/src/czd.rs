//! Calderón–Zygmund decomposition at a level and atomic-block validation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{k_value, smallest_doubling_dilate, vitali_select};
use crate::operators::check_bound;
use crate::space::{Ball, Space};

/// Dilation of the selected balls.
pub const COVER_DILATION: f64 = 6.0;
/// Dilation in the mass normalization of the selection test.
pub const SELECTION_DILATION: f64 = 36.0;
/// Dilation used to locate the supports of the compensating functions.
pub const SUPPORT_ETA: f64 = 3.0 * 36.0;

/// `1.01 * max(C_lambda^(3 log2 6), 6^(3n))` from fitted constants.
pub fn default_gamma0(space: &Space) -> f64 {
    let c = space.constants();
    1.01 * c.c_lambda.powf(3.0 * 6f64.log2()).max(6f64.powf(3.0 * c.n))
}

/// `C_lambda^(log2(108) + 1)`, clamped below by 1.
pub fn support_beta(space: &Space) -> f64 {
    space
        .constants()
        .c_lambda
        .powf(SUPPORT_ETA.log2() + 1.0)
        .max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CzOptions {
    /// Selection constant; `None` uses [`default_gamma0`].
    pub gamma0: Option<f64>,
    /// Refuse levels `t <= (gamma0 ||f||_p^p / mu(X))^(1/p)`.
    pub enforce_level_bound: bool,
}

impl Default for CzOptions {
    fn default() -> Self {
        CzOptions {
            gamma0: None,
            enforce_level_bound: true,
        }
    }
}

/// Measured constants and postcondition slacks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzReport {
    /// `t` exceeded the level bound.
    pub level_bound_satisfied: bool,
    /// `(gamma0 ||f||_p^p / mu(X))^(1/p)`.
    pub level_bound: f64,
    /// Points where the selection radius fell back to the whole space.
    pub whole_space_fallbacks: usize,
    /// Smallest `A(B_j) - t^p/gamma0` over selected balls (positive when strict).
    pub selection_margin: f64,
    /// Largest `|f(x)|` outside the union of the dilates.
    pub max_outside: f64,
    /// Largest `|sum_j omega_j(x) - chi(x)|`.
    pub partition_error: f64,
    /// Largest relative error in the per-ball integral matching.
    pub integral_error: f64,
    /// Fitted `gamma` with `sum_j |phi_j| <= gamma t`.
    pub gamma: f64,
    /// Fitted constant in `||phi_j||_inf mu(R_j) <= C sum |f omega_j| w`.
    pub sup_constant: f64,
    /// Fitted constant in the `L^p` size bound of `phi_j` on `R_j`.
    pub lp_constant: f64,
    /// `max |f - g - h|`.
    pub reconstruction_error: f64,
    /// `sum h w`.
    pub h_mass: f64,
}

/// Output of [`cz_decompose`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzDecomposition {
    pub t: f64,
    pub p: f64,
    pub gamma0: f64,
    pub balls: Vec<Ball>,
    pub dilates: Vec<Ball>,
    /// Supports of the compensating functions.
    pub supports: Vec<Ball>,
    /// `omega_j` as `(point, value)` pairs on the realized `6 B_j`.
    pub omega: Vec<Vec<(usize, f64)>>,
    /// `phi_j = coefficient_j * chi_{R_j}`.
    pub phi_coefficients: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub report: CzReport,
}

impl CzDecomposition {
    /// `phi_j` as a dense vector.
    pub fn phi(&self, space: &Space, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; space.len()];
        for &y in space.members(&self.supports[j]) {
            v[y] = self.phi_coefficients[j];
        }
        v
    }
}

fn pow_p(v: f64, p: f64) -> f64 {
    if p == 1.0 {
        v.abs()
    } else {
        v.abs().powf(p)
    }
}

/// Largest selection radius at `x`, or the whole-space radius when the average never drops below the threshold.
fn selection_radius(space: &Space, fp: &[f64], x: usize, threshold: f64) -> (f64, bool) {
    let order = space.order(x);
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &y in order {
        acc += fp[y] * space.weight(y);
        prefix.push(acc);
    }
    let average =
        |r: f64| prefix[space.count_open(x, r)] / space.mu_ball(x, SELECTION_DILATION * r);
    let radii = space.canonical_radii(x);
    let top = *radii.last().expect("every center has a canonical ball");
    if average(top) > threshold {
        return (top, true);
    }
    // Averages are piecewise constant between the break points d and d/36; each piece is
    // represented by its right end.
    let mut candidates: Vec<f64> = space.sorted_distances(x)[1..]
        .iter()
        .flat_map(|&d| [d, d / SELECTION_DILATION])
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let r = candidates
        .into_iter()
        .rev()
        .find(|&r| average(r) > threshold)
        .unwrap_or(top);
    (r, false)
}

/// Decomposes `f = g + h` at level `t`.
pub fn cz_decompose(
    space: &Space,
    f: &[f64],
    p: f64,
    t: f64,
    options: &CzOptions,
) -> Result<CzDecomposition> {
    check_bound(space, f)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!(
            "p must be finite and at least 1, got {p}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("level must be positive, got {t}")));
    }
    let gamma0 = options.gamma0.unwrap_or_else(|| default_gamma0(space));
    if !(gamma0 >= 1.0) {
        return Err(Error::Parameter(format!(
            "gamma0 must be at least 1, got {gamma0}"
        )));
    }
    let n = space.len();
    let fp: Vec<f64> = f.iter().map(|&v| pow_p(v, p)).collect();
    let lp_p: f64 = fp.iter().zip(space.weights()).map(|(a, w)| a * w).sum();
    let level_bound = (gamma0 * lp_p / space.total_mass()).powf(1.0 / p);
    let level_bound_satisfied = t > level_bound;
    if options.enforce_level_bound && !level_bound_satisfied {
        return Err(Error::Precondition(format!(
            "level {t} does not exceed the bound {level_bound}"
        )));
    }
    let threshold = pow_p(t, p) / gamma0;
    let omega_set: Vec<usize> = (0..n).filter(|&x| f[x].abs() > t).collect();

    let picks: Vec<(Ball, bool)> = omega_set
        .par_iter()
        .map(|&x| {
            let (r, fallback) = selection_radius(space, &fp, x, threshold);
            (space.ball(x, r), fallback)
        })
        .collect();
    let whole_space_fallbacks = picks.iter().filter(|p| p.1).count();
    let candidates: Vec<Ball> = picks.iter().map(|p| p.0).collect();
    let balls = vitali_select(space, &candidates, COVER_DILATION)?;
    let dilates: Vec<Ball> = balls
        .iter()
        .map(|b| space.dilate(b, COVER_DILATION))
        .collect();

    let mut cover = vec![0u32; n];
    for d in &dilates {
        for &y in space.members(d) {
            cover[y] += 1;
        }
    }
    if let Some(&x) = omega_set.iter().find(|&&x| cover[x] == 0) {
        return Err(Error::Invariant(format!(
            "point {x} with |f| > t is not covered by the dilated balls"
        )));
    }

    let omega: Vec<Vec<(usize, f64)>> = dilates
        .iter()
        .map(|d| {
            space
                .members(d)
                .iter()
                .map(|&y| (y, 1.0 / cover[y] as f64))
                .collect()
        })
        .collect();
    let beta = support_beta(space);
    let supports: Vec<Ball> = balls
        .iter()
        .map(|b| smallest_doubling_dilate(space, b, SUPPORT_ETA, beta).0)
        .collect();
    let targets: Vec<f64> = omega
        .iter()
        .map(|om| om.iter().map(|&(y, w)| f[y] * w * space.weight(y)).sum())
        .collect();
    let phi_coefficients: Vec<f64> = targets
        .iter()
        .zip(&supports)
        .map(|(s, r)| s / space.mu(r))
        .collect();

    let mut g: Vec<f64> = (0..n)
        .map(|x| if cover[x] == 0 { f[x] } else { 0.0 })
        .collect();
    let mut h = vec![0.0; n];
    let mut phi_abs = vec![0.0; n];
    for j in 0..balls.len() {
        for &(y, w) in &omega[j] {
            h[y] += w * f[y];
        }
        let c = phi_coefficients[j];
        for &y in space.members(&supports[j]) {
            g[y] += c;
            h[y] -= c;
            phi_abs[y] += c.abs();
        }
    }

    let selection_margin = balls
        .iter()
        .map(|b| {
            let sum: f64 = space
                .members(b)
                .iter()
                .map(|&y| fp[y] * space.weight(y))
                .sum();
            sum / space.mu_ball(b.center, SELECTION_DILATION * b.radius) - threshold
        })
        .fold(f64::INFINITY, f64::min);
    let max_outside = (0..n)
        .filter(|&x| cover[x] == 0)
        .map(|x| f[x].abs())
        .fold(0.0, f64::max);
    let mut totals = vec![0.0; n];
    for &(y, w) in omega.iter().flatten() {
        totals[y] += w;
    }
    let partition_error = (0..n)
        .map(|x| (totals[x] - if cover[x] > 0 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    let mut integral_error = 0.0f64;
    let mut sup_constant = 0.0f64;
    let mut lp_constant = 0.0f64;
    for j in 0..balls.len() {
        let members = space.members(&supports[j]);
        let c = phi_coefficients[j];
        let integral: f64 = members.iter().map(|&y| c * space.weight(y)).sum();
        let scale = omega[j]
            .iter()
            .map(|&(y, w)| (f[y] * w * space.weight(y)).abs())
            .sum::<f64>();
        if scale > 0.0 {
            integral_error = integral_error.max((integral - targets[j]).abs() / scale);
            sup_constant = sup_constant.max(c.abs() * space.mu(&supports[j]) / scale);
        }
        let lp_mass: f64 = omega[j]
            .iter()
            .map(|&(y, w)| pow_p(f[y] * w, p) * space.weight(y))
            .sum();
        if lp_mass > 0.0 {
            let mu_r = space.mu(&supports[j]);
            let lhs = c.abs() * mu_r.powf(1.0 / p) * mu_r.powf(1.0 - 1.0 / p);
            lp_constant = lp_constant.max(lhs * pow_p(t, p - 1.0) / lp_mass);
        }
    }
    let gamma = phi_abs.iter().fold(0.0f64, |m, &v| m.max(v)) / t;
    let reconstruction_error = (0..n)
        .map(|x| (f[x] - g[x] - h[x]).abs())
        .fold(0.0, f64::max);
    let h_mass = h.iter().zip(space.weights()).map(|(a, w)| a * w).sum();

    Ok(CzDecomposition {
        t,
        p,
        gamma0,
        balls,
        dilates,
        supports,
        omega,
        phi_coefficients,
        g,
        h,
        report: CzReport {
            level_bound_satisfied,
            level_bound,
            whole_space_fallbacks,
            selection_margin,
            max_outside,
            partition_error,
            integral_error,
            gamma,
            sup_constant,
            lp_constant,
            reconstruction_error,
            h_mass,
        },
    })
}

/// One piece `lambda a` of an atomic block, with `a` supported in `ball`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPart {
    pub a: Vec<f64>,
    pub ball: Ball,
    pub lambda: f64,
}

/// Pass/fail per condition with the measured slack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub passed: bool,
    /// Measured quantity (excess over the allowed value where meaningful).
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicBlockReport {
    pub ball: Ball,
    pub parts: [Ball; 2],
    pub lambdas: [f64; 2],
    /// `|lambda_1| + |lambda_2|`.
    pub block_norm: f64,
    pub support: Check,
    pub mean_zero: Check,
    pub decomposition: Check,
    pub part_supports: [Check; 2],
    /// `||a_j||_p / (mu(rho B_j)^(1/p - 1) K^-1)`; passes when at most 1.
    pub part_sizes: [Check; 2],
}

impl AtomicBlockReport {
    pub fn passed(&self) -> bool {
        self.support.passed
            && self.mean_zero.passed
            && self.decomposition.passed
            && self.part_supports.iter().all(|c| c.passed)
            && self.part_sizes.iter().all(|c| c.passed)
    }
}

fn norm_p(space: &Space, a: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        a.iter()
            .zip(space.weights())
            .map(|(v, w)| pow_p(*v, p) * w)
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

fn size_bound(space: &Space, part: &Ball, ball: &Ball, p: f64, rho: f64) -> f64 {
    let mass = space.mu_ball(part.center, rho * part.radius);
    let exponent = if p.is_infinite() { -1.0 } else { 1.0 / p - 1.0 };
    mass.powf(exponent) / k_value(space, part, ball)
}

/// Checks the atomic-block conditions for `b = lambda_1 a_1 + lambda_2 a_2` on `ball`.
pub fn validate_atomic_block(
    space: &Space,
    b: &[f64],
    ball: &Ball,
    parts: &[BlockPart; 2],
    p: f64,
    rho: f64,
) -> Result<AtomicBlockReport> {
    check_bound(space, b)?;
    for part in parts {
        check_bound(space, &part.a)?;
    }
    if !(rho > 1.0) || !(p > 1.0) {
        return Err(Error::Parameter(format!(
            "need rho > 1 and p > 1, got {rho}, {p}"
        )));
    }
    let n = space.len();
    let outside = |v: &[f64], bl: &Ball| {
        (0..n)
            .filter(|&x| !space.contains(bl, x))
            .map(|x| v[x].abs())
            .fold(0.0, f64::max)
    };
    let l1: f64 = b
        .iter()
        .zip(space.weights())
        .map(|(v, w)| v.abs() * w)
        .sum();
    let mean: f64 = b.iter().zip(space.weights()).map(|(v, w)| v * w).sum();
    let support_excess = outside(b, ball);
    let residual = (0..n)
        .map(|x| (b[x] - parts[0].lambda * parts[0].a[x] - parts[1].lambda * parts[1].a[x]).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let part_support = |part: &BlockPart| {
        let excess = outside(&part.a, &part.ball);
        let nested = space
            .members(&part.ball)
            .iter()
            .all(|&y| space.contains(ball, y));
        Check {
            passed: excess == 0.0 && nested,
            measured: excess,
        }
    };
    let part_size = |part: &BlockPart| {
        let ratio = norm_p(space, &part.a, p) / size_bound(space, &part.ball, ball, p, rho);
        Check {
            passed: ratio <= 1.0 + 1e-12,
            measured: ratio,
        }
    };
    Ok(AtomicBlockReport {
        ball: *ball,
        parts: [parts[0].ball, parts[1].ball],
        lambdas: [parts[0].lambda, parts[1].lambda],
        block_norm: parts[0].lambda.abs() + parts[1].lambda.abs(),
        support: Check {
            passed: support_excess == 0.0,
            measured: support_excess,
        },
        mean_zero: Check {
            passed: mean.abs() <= 1e-10 * l1,
            measured: mean,
        },
        decomposition: Check {
            passed: residual <= 1e-12 * scale,
            measured: residual,
        },
        part_supports: [part_support(&parts[0]), part_support(&parts[1])],
        part_sizes: [part_size(&parts[0]), part_size(&parts[1])],
    })
}

/// Builds a block from two sub-balls of `ball`: each `a_j` is a multiple of `chi_{B_j}` at the
/// size bound, and the coefficients balance the mean.
pub fn make_atomic_block(
    space: &Space,
    ball: &Ball,
    first: &Ball,
    second: &Ball,
    p: f64,
    rho: f64,
) -> Result<(Vec<f64>, [BlockPart; 2])> {
    let n = space.len();
    let make = |part: &Ball| -> Result<(Vec<f64>, f64)> {
        if !space.members(part).iter().all(|&y| space.contains(ball, y)) {
            return Err(Error::NotNested(format!(
                "B({}, {}) is not inside the block ball",
                part.center, part.radius
            )));
        }
        let mass = space.mu(part);
        let bound = size_bound(space, part, ball, p, rho);
        let height = if p.is_infinite() {
            bound
        } else {
            bound / mass.powf(1.0 / p)
        };
        let mut a = vec![0.0; n];
        for &y in space.members(part) {
            a[y] = height;
        }
        Ok((a, height * mass))
    };
    let (a1, m1) = make(first)?;
    let (a2, m2) = make(second)?;
    let (l1, l2) = (1.0, -m1 / m2);
    let b: Vec<f64> = (0..n).map(|x| l1 * a1[x] + l2 * a2[x]).collect();
    Ok((
        b,
        [
            BlockPart {
                a: a1,
                ball: *first,
                lambda: l1,
            },
            BlockPart {
                a: a2,
                ball: *second,
                lambda: l2,
            },
        ],
    ))
}
