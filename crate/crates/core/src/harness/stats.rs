//! Ratio statistics, calibrated symbols, blocks and the endpoint bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::czd::{make_atomic_block, validate_atomic_block, AtomicBlockReport};
use crate::error::{Error, Result};
use crate::fixtures::{distinct_canonical_balls, quantile_pick};
use crate::norms::{lp_norm, osc_exp_norm, phi_s_eval, rbmo_norm, weak_lp};
use crate::operators::{check_bound, sigma_subsets, FunctionVec};
use crate::space::{Ball, Space};

/// A function-to-function map under test.
pub type Transform<'a> = dyn Fn(&[f64]) -> Result<FunctionVec> + Sync + 'a;

/// Largest ratio over a family, with the zero-denominator count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Statistic {
    pub value: Option<f64>,
    pub witness: Option<String>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl Statistic {
    /// First maximum wins; `None` entries are skipped ratios.
    pub fn from_ratios(items: Vec<(String, Option<f64>)>) -> Statistic {
        let mut out = Statistic {
            value: None,
            witness: None,
            evaluated: 0,
            skipped: 0,
        };
        for (label, ratio) in items {
            match ratio {
                None => out.skipped += 1,
                Some(v) => {
                    out.evaluated += 1;
                    if out.value.map_or(true, |best| v > best) {
                        out.value = Some(v);
                        out.witness = Some(label);
                    }
                }
            }
        }
        out
    }

    /// Merges two statistics over disjoint inputs.
    pub fn merge(self, other: Statistic) -> Statistic {
        let (value, witness) = match (self.value, other.value) {
            (Some(a), Some(b)) if b > a => (other.value, other.witness),
            (None, Some(_)) => (other.value, other.witness),
            _ => (self.value, self.witness),
        };
        Statistic {
            value,
            witness,
            evaluated: self.evaluated + other.evaluated,
            skipped: self.skipped + other.skipped,
        }
    }
}

fn require_family(family: &[(String, FunctionVec)]) -> Result<()> {
    if family.is_empty() {
        Err(Error::Parameter("the function family is empty".into()))
    } else {
        Ok(())
    }
}

/// `max ||op f||_q / ||f||_p` over the family.
pub fn estimate_operator_norm(
    space: &Space,
    op: &Transform,
    p: f64,
    q: f64,
    family: &[(String, FunctionVec)],
) -> Result<Statistic> {
    require_family(family)?;
    let items = family
        .par_iter()
        .map(|(label, f)| {
            let denominator = lp_norm(space, f, p)?;
            if denominator == 0.0 {
                return Ok((label.clone(), None));
            }
            Ok((
                label.clone(),
                Some(lp_norm(space, &op(f)?, q)? / denominator),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Statistic::from_ratios(items))
}

/// `max weak_lp(op f, q) / ||f||_p` over the family.
pub fn weak_type_statistic(
    space: &Space,
    op: &Transform,
    p: f64,
    q_weak: f64,
    family: &[(String, FunctionVec)],
) -> Result<Statistic> {
    require_family(family)?;
    let items = family
        .par_iter()
        .map(|(label, f)| {
            let denominator = lp_norm(space, f, p)?;
            if denominator == 0.0 {
                return Ok((label.clone(), None));
            }
            Ok((
                label.clone(),
                Some(weak_lp(space, &op(f)?, q_weak)? / denominator),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Statistic::from_ratios(items))
}

/// Which BMO-type norm a symbol is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SymbolNorm {
    Rbmo,
    OscExp(f64),
}

impl SymbolNorm {
    pub fn eval(&self, space: &Space, b: &[f64]) -> Result<f64> {
        Ok(match self {
            SymbolNorm::Rbmo => rbmo_norm(space, b, 2.0)?.value,
            SymbolNorm::OscExp(r) => osc_exp_norm(space, b, *r)?.value,
        })
    }
}

/// A smooth random mean-zero symbol rescaled so its norm is `target` within `tolerance`.
///
/// Returns the symbol and its measured norm.
pub fn calibrated_symbol(
    space: &Space,
    seed: u64,
    norm: SymbolNorm,
    target: f64,
    tolerance: f64,
) -> Result<(FunctionVec, f64)> {
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diam = space.diameter().max(space.min_gap());
    let mut raw = vec![0.0; n];
    for _ in 0..4 {
        let center = ((rng.gen::<f64>() * n as f64) as usize).min(n - 1);
        let scale = diam * 10f64.powf(rng.gen_range(-1.0..-0.3));
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        for (y, v) in raw.iter_mut().enumerate() {
            *v += sign * (-(space.d(center, y) / scale).powi(2)).exp();
        }
    }
    let mean = raw
        .iter()
        .zip(space.weights())
        .map(|(a, w)| a * w)
        .sum::<f64>()
        / space.total_mass();
    raw.iter_mut().for_each(|v| *v -= mean);
    let base = norm.eval(space, &raw)?;
    if !(base > 0.0) {
        return Err(Error::Invariant("generated symbol has zero norm".into()));
    }
    let scaled = |c: f64| -> Vec<f64> { raw.iter().map(|v| v * c).collect() };
    let mut c = target / base;
    let mut value = norm.eval(space, &scaled(c))?;
    if (value / target - 1.0).abs() > tolerance {
        let (mut lo, mut hi) = (c / 2.0, c * 2.0);
        for _ in 0..60 {
            c = 0.5 * (lo + hi);
            value = norm.eval(space, &scaled(c))?;
            if (value / target - 1.0).abs() <= tolerance {
                break;
            }
            if value > target {
                hi = c;
            } else {
                lo = c;
            }
        }
        if (value / target - 1.0).abs() > tolerance {
            return Err(Error::Invariant(format!(
                "symbol norm {value} missed target {target}"
            )));
        }
    }
    Ok((FunctionVec::new(scaled(c))?, value))
}

fn largest_inside(space: &Space, center: usize, outer: &Ball, max_size: usize) -> Ball {
    let mut best = space.ball(center, space.canonical_radii(center)[0]);
    for &r in space.canonical_radii(center) {
        let b = space.ball(center, r);
        if b.size > max_size || !space.members(&b).iter().all(|&y| space.contains(outer, y)) {
            break;
        }
        best = b;
    }
    best
}

/// Atomic blocks with `L^inf` pieces on up to `count` canonical balls of at least three points.
///
/// The first piece sits at the block center and the second at its farthest member.
pub fn block_family(
    space: &Space,
    count: usize,
) -> Result<Vec<(String, FunctionVec, AtomicBlockReport)>> {
    let balls: Vec<Ball> = distinct_canonical_balls(space)
        .into_iter()
        .filter(|b| b.size >= 3)
        .collect();
    quantile_pick(&balls, count)
        .into_iter()
        .map(|ball| {
            let half = ball.size / 2;
            let first = largest_inside(space, ball.center, &ball, half.max(1));
            let far = *space.members(&ball).last().expect("non-empty ball");
            let second = largest_inside(space, far, &ball, half.max(1));
            let (b, parts) = make_atomic_block(space, &ball, &first, &second, f64::INFINITY, 2.0)?;
            let report = validate_atomic_block(space, &b, &ball, &parts, f64::INFINITY, 2.0)?;
            let label = format!("block(c={},r={:e})", ball.center, ball.radius);
            Ok((label, FunctionVec::new(b)?, report))
        })
        .collect()
}

/// `mu({|g| > lambda})`.
pub fn endpoint_lhs(space: &Space, g: &[f64], lambda: f64) -> f64 {
    g.iter()
        .zip(space.weights())
        .filter(|(v, _)| v.abs() > lambda)
        .map(|(_, w)| w)
        .sum()
}

/// `Phi_{1/r}(prod norms) sum_{sigma} Phi_{1/r_sigma}(|| Phi_{1/r_sigma'}(|f| / lambda) ||_1)`.
///
/// `Phi_s(t) = t log^s(2 + t)`; the empty index set has exponent 0, so `Phi_0(t) = t`.
pub fn endpoint_rhs(
    space: &Space,
    f: &[f64],
    lambda: f64,
    r: &[f64],
    norms: &[f64],
) -> Result<f64> {
    check_bound(space, f)?;
    if r.len() != norms.len() || r.is_empty() {
        return Err(Error::Parameter(
            "one exponent per symbol norm is required".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!(
            "threshold must be positive, got {lambda}"
        )));
    }
    let k = r.len();
    let exponent = |idx: &[usize]| idx.iter().map(|&i| 1.0 / r[i - 1]).sum::<f64>();
    let full: Vec<usize> = (1..=k).collect();
    let outer = phi_s_eval(norms.iter().product(), exponent(&full));
    let mut sum = 0.0;
    for j in 0..=k {
        for sigma in sigma_subsets(k, j)? {
            let s_in = exponent(&sigma.indices);
            let s_out = exponent(&sigma.complement);
            let inner: f64 = f
                .iter()
                .zip(space.weights())
                .map(|(v, w)| phi_s_eval(v.abs() / lambda, s_out) * w)
                .sum();
            sum += phi_s_eval(inner, s_in);
        }
    }
    Ok(outer * sum)
}

/// `count` thresholds from `max 10^(-3/count)` down to `max / 1000`, then `2 max`.
pub fn threshold_grid(max: f64, count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (1..=count)
        .map(|m| max * 10f64.powf(-3.0 * m as f64 / count as f64))
        .collect();
    out.push(2.0 * max);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{make_space, FixtureSpec};

    fn s3() -> Space {
        make_space(&FixtureSpec::DyadicLine {
            n: 3,
            kappa: 1.0,
            c0: 2.0,
            spacing: Some(1.0),
        })
        .unwrap()
    }

    #[test]
    fn trivial_operators() {
        let s = s3();
        let family: Vec<(String, FunctionVec)> = vec![
            ("a".into(), FunctionVec::new(vec![1.0, 0.0, 2.0]).unwrap()),
            ("zero".into(), FunctionVec::zeros(3)),
        ];
        let zero = |_: &[f64]| Ok(FunctionVec::zeros(3));
        let st = estimate_operator_norm(&s, &zero, 2.0, 2.0, &family).unwrap();
        assert_eq!((st.value, st.evaluated, st.skipped), (Some(0.0), 1, 1));
        let id = |f: &[f64]| FunctionVec::new(f.to_vec());
        assert_eq!(
            estimate_operator_norm(&s, &id, 2.0, 2.0, &family)
                .unwrap()
                .value,
            Some(1.0)
        );
        assert_eq!(
            weak_type_statistic(&s, &zero, 1.0, 2.0, &family)
                .unwrap()
                .value,
            Some(0.0)
        );
        assert!(estimate_operator_norm(&s, &id, 2.0, 2.0, &[]).is_err());
    }

    #[test]
    fn endpoint_pieces() {
        let s = s3();
        assert_eq!(endpoint_lhs(&s, &[0.5, -2.0, 1.0], 0.9), 2.0);
        let zero = endpoint_rhs(&s, &[0.0; 3], 1.0, &[1.0], &[1.0]).unwrap();
        assert_eq!(zero, 0.0);
        // k = 1, r = 1: Phi_1(1) (||f|| / lambda + Phi_1(||f|| / lambda)) for an indicator.
        let v = endpoint_rhs(&s, &[1.0, 0.0, 0.0], 1.0, &[1.0], &[1.0]).unwrap();
        let phi1 = |t: f64| t * (2.0 + t).ln();
        assert!((v - phi1(1.0) * (phi1(1.0) + phi1(1.0))).abs() < 1e-15);
        let g = threshold_grid(1.0, 4);
        assert_eq!(g.len(), 5);
        assert!(g[3] > 0.0009 && g[4] == 2.0);
    }

    #[test]
    fn symbols_hit_their_target() {
        let line = make_space(&FixtureSpec::DyadicLine {
            n: 24,
            kappa: 1.0,
            c0: 2.0,
            spacing: None,
        })
        .unwrap();
        let (b, v) = calibrated_symbol(&line, 3, SymbolNorm::Rbmo, 1.0, 0.02).unwrap();
        assert!((v - 1.0).abs() <= 0.02);
        assert!((rbmo_norm(&line, &b, 2.0).unwrap().value - v).abs() < 1e-12);
        let (_, v) = calibrated_symbol(&line, 4, SymbolNorm::OscExp(1.0), 2.0, 0.02).unwrap();
        assert!((v / 2.0 - 1.0).abs() <= 0.02);
    }

    #[test]
    fn blocks_validate() {
        let line = make_space(&FixtureSpec::DyadicLine {
            n: 20,
            kappa: 1.0,
            c0: 2.0,
            spacing: None,
        })
        .unwrap();
        let blocks = block_family(&line, 5).unwrap();
        assert_eq!(blocks.len(), 5);
        for (_, b, report) in blocks {
            assert!(report.passed(), "{report:?}");
            let mean: f64 = b.iter().zip(line.weights()).map(|(a, w)| a * w).sum();
            assert!(mean.abs() < 1e-12);
        }
    }
}
