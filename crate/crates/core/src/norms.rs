//! Lebesgue, weak, Orlicz and BMO-type norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::beta_six;
use crate::maximal::{oscillation_values, BallTable, DoublingFamily, PairDivisor};
use crate::operators::check_bound;
use crate::space::{log_grid, Ball, Space};

/// `t log^s(2 + t)`.
pub fn phi_s_eval(t: f64, s: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if s == 0.0 {
        t
    } else {
        t * (2.0 + t).ln().powf(s)
    }
}

/// A Young function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OrliczFn {
    /// `t^p`.
    Power { p: f64 },
    /// `t log^s(2 + t)`.
    ZygmundLog { s: f64 },
    /// Samples interpolated linearly in log-log coordinates.
    Table { ts: Vec<f64>, values: Vec<f64> },
}

fn interp_loglog(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1].ln(), xs[k].ln());
    let (y0, y1) = (ys[k - 1].ln(), ys[k].ln());
    (y0 + (y1 - y0) * (x.ln() - x0) / (x1 - x0)).exp()
}

const INDEX_GRID: (f64, f64, usize) = (1e-6, 1e6, 1024);

impl OrliczFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            OrliczFn::Power { p } if !(*p >= 1.0 && p.is_finite()) => Err(Error::Parameter(
                format!("power Young function needs p >= 1, got {p}"),
            )),
            OrliczFn::ZygmundLog { s } if !(*s >= 0.0 && s.is_finite()) => Err(Error::Parameter(
                format!("log exponent must be non-negative, got {s}"),
            )),
            OrliczFn::Table { ts, values } => {
                if ts.len() < 2 || ts.len() != values.len() {
                    return Err(Error::Parameter(
                        "table needs at least two matching samples".into(),
                    ));
                }
                let increasing = |v: &[f64]| {
                    v[0] > 0.0
                        && v.windows(2).all(|w| w[0] < w[1])
                        && v.iter().all(|x| x.is_finite())
                };
                if !increasing(ts) || !increasing(values) {
                    return Err(Error::Parameter(
                        "table samples must be positive and strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `Phi(t)`, with `Phi(t) = 0` for `t <= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            OrliczFn::Power { p } => {
                if *p == 1.0 {
                    t
                } else {
                    t.powf(*p)
                }
            }
            OrliczFn::ZygmundLog { s } => phi_s_eval(t, *s),
            OrliczFn::Table { ts, values } => interp_loglog(ts, values, t),
        }
    }

    /// `t Phi'(t) / Phi(t)`.
    pub fn index_ratio(&self, t: f64) -> f64 {
        match self {
            OrliczFn::Power { p } => *p,
            OrliczFn::ZygmundLog { s } => {
                let l = (2.0 + t).ln();
                1.0 + s * t / ((2.0 + t) * l)
            }
            OrliczFn::Table { .. } => {
                let h: f64 = 1e-4;
                let up = self.eval(t * h.exp()).ln();
                let down = self.eval(t * (-h).exp()).ln();
                (up - down) / (2.0 * h)
            }
        }
    }

    /// `inf {s : Phi(s) > t}`.
    pub fn inverse(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            OrliczFn::Power { p } => t.powf(1.0 / p),
            OrliczFn::Table { ts, values } => interp_loglog(values, ts, t),
            OrliczFn::ZygmundLog { .. } => {
                let (mut lo, mut hi) = (0.0f64, t.max(1.0));
                while self.eval(hi) <= t {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) > t {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= 1e-16 * hi {
                        break;
                    }
                }
                hi
            }
        }
    }

    /// Secant test on the index grid.
    pub fn is_convex(&self) -> bool {
        let ts = log_grid(INDEX_GRID.0, INDEX_GRID.1, 256);
        let mut prev = self.eval(ts[0]) / ts[0];
        let mut last = (ts[0], self.eval(ts[0]));
        for &t in &ts[1..] {
            let v = self.eval(t);
            let slope = (v - last.1) / (t - last.0);
            if slope < prev * (1.0 - 1e-9) {
                return false;
            }
            prev = slope;
            last = (t, v);
        }
        true
    }
}

/// `(a_Phi, b_Phi)`: extreme values of `t Phi'(t) / Phi(t)` on the log grid over `[1e-6, 1e6]`.
pub fn orlicz_indices(phi: &OrliczFn) -> (f64, f64) {
    let (lo, hi, count) = INDEX_GRID;
    log_grid(lo, hi, count)
        .into_iter()
        .map(|t| phi.index_ratio(t))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
}

/// `Psi` with `Psi^{-1}(t) = Phi^{-1}(t) t^(-alpha)`, tabulated on the index grid.
pub fn psi_from_phi(phi: &OrliczFn, alpha: f64) -> Result<OrliczFn> {
    phi.validate()?;
    if !(alpha >= 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let (lo, hi, count) = INDEX_GRID;
    let values = log_grid(lo, hi, count);
    let ts: Vec<f64> = values
        .iter()
        .map(|&t| phi.inverse(t) * t.powf(-alpha))
        .collect();
    if let Some(k) = ts.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition(format!(
            "Phi^-1(t) t^-alpha is not increasing near t = {:e}",
            values[k]
        )));
    }
    Ok(OrliczFn::Table { ts, values })
}

/// `(sum |f|^p w)^(1/p)`; `p = inf` gives the maximum modulus.
pub fn lp_norm(space: &Space, f: &[f64], p: f64) -> Result<f64> {
    check_bound(space, f)?;
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p must be at least 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let w = space.weights();
    if p == 1.0 {
        return Ok(f.iter().zip(w).map(|(v, w)| v.abs() * w).sum());
    }
    let sum: f64 = f.iter().zip(w).map(|(v, w)| v.abs().powf(p) * w).sum();
    Ok(sum.powf(1.0 / p))
}

/// `max_k t_k mu(|f| >= t_k)^(1/p)` over the distinct values of `|f|`.
pub fn weak_lp(space: &Space, f: &[f64], p: f64) -> Result<f64> {
    check_bound(space, f)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!(
            "p must be finite and at least 1, got {p}"
        )));
    }
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f[b].abs().total_cmp(&f[a].abs()));
    let mut best = 0.0f64;
    let mut mass = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let t = f[idx[k]].abs();
        if t == 0.0 {
            break;
        }
        while k < idx.len() && f[idx[k]].abs() == t {
            mass += space.weight(idx[k]);
            k += 1;
        }
        let m = if p == 1.0 { mass } else { mass.powf(1.0 / p) };
        best = best.max(t * m);
    }
    Ok(best)
}

/// `inf {t > 0 : sum Phi(|f|/t) w <= 1}`.
pub fn luxemburg_norm(space: &Space, f: &[f64], phi: &OrliczFn) -> Result<f64> {
    check_bound(space, f)?;
    phi.validate()?;
    let sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup == 0.0 {
        return Ok(0.0);
    }
    let modular = |t: f64| -> f64 {
        f.iter()
            .zip(space.weights())
            .map(|(v, w)| phi.eval(v.abs() / t) * w)
            .sum()
    };
    let mut hi = sup;
    let mut steps = 0;
    while modular(hi) > 1.0 {
        hi *= 2.0;
        steps += 1;
        if steps > 400 {
            return Err(Error::Invariant("Luxemburg bracket did not close".into()));
        }
    }
    let mut lo = hi;
    while modular(lo) <= 1.0 {
        lo /= 2.0;
        steps += 1;
        if steps > 800 {
            return Err(Error::Invariant("Luxemburg bracket did not close".into()));
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if modular(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok(hi)
}

/// Weighted mean over the realized set; a singleton returns its value.
pub fn mean_on_ball(space: &Space, f: &[f64], ball: &Ball) -> Result<f64> {
    check_bound(space, f)?;
    if ball.size == 1 {
        return Ok(f[ball.center]);
    }
    let members = space.members(ball);
    let sum: f64 = members.iter().map(|&y| f[y] * space.weight(y)).sum();
    Ok(sum / space.mu(ball))
}

/// Value of a BMO-type norm with its two terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbmoEstimate {
    pub value: f64,
    pub rho: f64,
    /// Largest normalized oscillation about `m_{B~} f`.
    pub oscillation_term: f64,
    /// Largest `|m_B - m_S| / K_{B,S}` over doubling `B ⊂ S`.
    pub pair_term: f64,
    /// `(center, radius)` attaining the oscillation term.
    pub witness: Option<(usize, f64)>,
}

impl RbmoEstimate {
    fn zero(rho: f64) -> Self {
        RbmoEstimate {
            value: 0.0,
            rho,
            oscillation_term: 0.0,
            pair_term: 0.0,
            witness: None,
        }
    }
}

fn is_constant(f: &[f64]) -> bool {
    f.iter().all(|&v| v == f[0])
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
}

fn pair_term(space: &Space, table: &BallTable, f: &[f64], beta: f64) -> f64 {
    let family = DoublingFamily::new(space, table, f, beta);
    family.pair_sup(space, PairDivisor::K)
}

/// `||f||_*`: the larger of the oscillation term about `m_{B~} f` and the doubling-pair term.
pub fn rbmo_norm(space: &Space, f: &[f64], rho: f64) -> Result<RbmoEstimate> {
    check_bound(space, f)?;
    if !(rho > 1.0) {
        return Err(Error::Parameter(format!("rho must exceed 1, got {rho}")));
    }
    if is_constant(f) {
        return Ok(RbmoEstimate::zero(rho));
    }
    let beta = beta_six(space);
    let table = BallTable::new(space);
    let osc = oscillation_values(space, &table, f, beta, rho);
    let (k, oscillation_term) = argmax(&osc);
    let pair_term = pair_term(space, &table, f, beta);
    Ok(RbmoEstimate {
        value: oscillation_term.max(pair_term),
        rho,
        oscillation_term,
        pair_term,
        witness: Some((table.balls[k].center, table.balls[k].radius)),
    })
}

/// `max_B ((1/mu(rho B)) sum_B |f - m_{B~} f|^r w)^(1/r)`.
pub fn oscillation_power_sup(space: &Space, f: &[f64], r: f64, rho: f64) -> Result<f64> {
    check_bound(space, f)?;
    if is_constant(f) {
        return Ok(0.0);
    }
    let beta = beta_six(space);
    let table = BallTable::new(space);
    let powered = table
        .balls
        .par_iter()
        .map(|b| {
            let tilde = crate::geometry::smallest_doubling_dilate(space, b, 6.0, beta).0;
            let m = mean_on_ball(space, f, &tilde).unwrap_or(0.0);
            let sum: f64 = space
                .members(b)
                .iter()
                .map(|&y| (f[y] - m).abs().powf(r) * space.weight(y))
                .sum();
            (sum / space.mu_ball(b.center, rho * b.radius)).powf(1.0 / r)
        })
        .reduce(|| 0.0, f64::max);
    Ok(powered)
}

/// `inf {s > 0 : (1/mu(2B)) sum_B exp((dev/s)^r) w <= 2}` for one ball.
///
/// The constraint is convex and decreasing in `s`; Newton steps from the infeasible side
/// are kept inside the bracket and fall back to geometric bisection.
fn exp_luxemburg(devs: &[(f64, f64)], dil_mass: f64, r: f64) -> f64 {
    let (dmax, wmax) = devs.iter().fold(
        (0.0f64, 1.0),
        |acc, &(d, w)| if d > acc.0 { (d, w) } else { acc },
    );
    if dmax == 0.0 {
        return 0.0;
    }
    // Value and derivative of the normalized sum minus 2.
    let eval = |s: f64| -> (f64, f64) {
        let (mut g, mut dg) = (0.0, 0.0);
        for &(d, w) in devs {
            let x = (d / s).powf(r);
            let e = x.exp() * w;
            g += e;
            dg -= e * x * r / s;
        }
        (g / dil_mass - 2.0, dg / dil_mass)
    };
    let mut hi = dmax / std::f64::consts::LN_2.powf(1.0 / r);
    let mut lo = 0.5 * dmax / (2.0 * dil_mass / wmax).ln().powf(1.0 / r);
    let mut s = lo;
    for _ in 0..200 {
        let (g, dg) = eval(s);
        if g <= 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
        let newton = s - g / dg;
        let next = if newton > lo && newton < hi && dg < 0.0 {
            newton
        } else {
            (lo * hi).sqrt()
        };
        if (next - s).abs() <= 1e-15 * s {
            return next;
        }
        s = next;
    }
    hi
}

/// The `Osc_{exp L^r}` norm: per-ball exponential Luxemburg values and the doubling-pair term.
pub fn osc_exp_norm(space: &Space, f: &[f64], r: f64) -> Result<RbmoEstimate> {
    check_bound(space, f)?;
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::Parameter(format!("r must be at least 1, got {r}")));
    }
    if is_constant(f) {
        return Ok(RbmoEstimate::zero(2.0));
    }
    let beta = beta_six(space);
    let table = BallTable::new(space);
    let values: Vec<f64> = table
        .balls
        .par_iter()
        .map(|b| {
            let tilde = crate::geometry::smallest_doubling_dilate(space, b, 6.0, beta).0;
            let m = mean_on_ball(space, f, &tilde).unwrap_or(0.0);
            let devs: Vec<(f64, f64)> = space
                .members(b)
                .iter()
                .map(|&y| ((f[y] - m).abs(), space.weight(y)))
                .collect();
            exp_luxemburg(&devs, space.mu_ball(b.center, 2.0 * b.radius), r)
        })
        .collect();
    let (k, oscillation_term) = argmax(&values);
    let pair_term = pair_term(space, &table, f, beta);
    Ok(RbmoEstimate {
        value: oscillation_term.max(pair_term),
        rho: 2.0,
        oscillation_term,
        pair_term,
        witness: Some((table.balls[k].center, table.balls[k].radius)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::DominatingFn;

    fn line(n: usize, w: f64) -> Space {
        let values = (0..n)
            .map(|i| (0..n).map(|j| (i as f64 - j as f64).abs()).collect())
            .collect();
        Space::from_matrix(
            values,
            vec![w; n],
            DominatingFn::Power {
                c0: 2.0,
                kappa: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn lebesgue_and_weak() {
        let s = line(3, 1.0);
        assert_eq!(weak_lp(&s, &[3.0, 1.0, 0.0], 1.0).unwrap(), 3.0);
        assert_eq!(weak_lp(&s, &[0.0; 3], 1.0).unwrap(), 0.0);
        assert_eq!(lp_norm(&s, &[0.0; 3], 2.0).unwrap(), 0.0);
        assert!((lp_norm(&s, &[1.0; 3], 2.0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(lp_norm(&s, &[1.0, -4.0, 2.0], f64::INFINITY).unwrap(), 4.0);
        assert!(lp_norm(&s, &[1.0; 3], 0.5).is_err());
    }

    #[test]
    fn phi_s_values() {
        assert_eq!(phi_s_eval(0.0, 1.0), 0.0);
        assert!((phi_s_eval(2.0, 1.0) - 2.0 * 4f64.ln()).abs() < 1e-15);
        assert!(phi_s_eval(1.0, 0.5) < phi_s_eval(1.1, 0.5));
    }

    #[test]
    fn luxemburg_matches_lp_for_powers() {
        let s = line(5, 0.3);
        let f = [0.2, -1.5, 3.0, 0.0, 0.7];
        for p in [1.0, 1.5, 2.0, 4.0] {
            let a = luxemburg_norm(&s, &f, &OrliczFn::Power { p }).unwrap();
            let b = lp_norm(&s, &f, p).unwrap();
            assert!((a - b).abs() <= 1e-12 * b, "p = {p}: {a} vs {b}");
        }
        assert_eq!(
            luxemburg_norm(&s, &[0.0; 5], &OrliczFn::Power { p: 2.0 }).unwrap(),
            0.0
        );
    }

    #[test]
    fn indices() {
        assert_eq!(orlicz_indices(&OrliczFn::Power { p: 2.5 }), (2.5, 2.5));
        assert_eq!(orlicz_indices(&OrliczFn::Power { p: 1.0 }), (1.0, 1.0));
        let (a, b) = orlicz_indices(&OrliczFn::ZygmundLog { s: 1.0 });
        assert!(a >= 1.0 && b <= 2.0 && a < b);
    }

    #[test]
    fn psi_of_power_is_power() {
        let psi = psi_from_phi(&OrliczFn::Power { p: 2.0 }, 0.25).unwrap();
        let (a, b) = orlicz_indices(&psi);
        assert!((a - 4.0).abs() < 1e-6 && (b - 4.0).abs() < 1e-6, "{a} {b}");
        for t in [0.01, 0.3, 1.0, 7.0, 100.0] {
            assert!((psi.eval(t) / t.powi(4) - 1.0).abs() < 1e-6);
            assert!((psi.eval(psi.inverse(t)) / t - 1.0).abs() < 1e-9);
        }
        let same = psi_from_phi(&OrliczFn::Power { p: 1.5 }, 0.0).unwrap();
        assert!((same.eval(2.0) / 2f64.powf(1.5) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn means() {
        let s = line(3, 1.0);
        assert_eq!(
            mean_on_ball(&s, &[1.0, 2.0, 3.0], &s.ball(1, 5.0)).unwrap(),
            2.0
        );
        assert_eq!(
            mean_on_ball(&s, &[1.0, 2.0, 3.0], &s.ball(2, 0.5)).unwrap(),
            3.0
        );
        assert_eq!(
            mean_on_ball(&s, &[1.0, 0.0, 0.0], &s.ball(0, 1.5)).unwrap(),
            0.5
        );
    }

    #[test]
    fn bmo_norms_vanish_on_constants() {
        let s = line(4, 1.0);
        assert_eq!(rbmo_norm(&s, &[2.0; 4], 2.0).unwrap().value, 0.0);
        assert_eq!(osc_exp_norm(&s, &[2.0; 4], 1.0).unwrap().value, 0.0);
        let f = [1.0, -1.0, 0.5, 2.0];
        let a = rbmo_norm(&s, &f, 2.0).unwrap();
        let shifted: Vec<f64> = f.iter().map(|v| v + 0.25).collect();
        let b = rbmo_norm(&s, &shifted, 2.0).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(a.value > 0.0);
        let o = osc_exp_norm(&s, &f, 1.0).unwrap();
        assert!(o.value > 0.0 && o.value.is_finite());
        let one = line(1, 1.0);
        assert_eq!(osc_exp_norm(&one, &[5.0], 2.0).unwrap().value, 0.0);
    }
}
