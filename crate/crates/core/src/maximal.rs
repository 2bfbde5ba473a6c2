//! Maximal operators over the canonical ball family.
//!
//! Every operator here evaluates one number per canonical ball and then takes,
//! at each point, the maximum over the balls containing it. Canonical balls at
//! a fixed center are nested prefixes of the center's distance order, so that
//! last step is a suffix maximum per center.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{beta_six, is_doubling, smallest_doubling_dilate};
use crate::operators::{check_bound, FunctionVec};
use crate::space::{Ball, Space};

/// Canonical balls grouped by center, ascending in radius.
pub(crate) struct BallTable {
    pub balls: Vec<Ball>,
    pub offsets: Vec<usize>,
}

impl BallTable {
    pub fn new(space: &Space) -> BallTable {
        let mut balls = Vec::new();
        let mut offsets = vec![0];
        for c in 0..space.len() {
            for &r in space.canonical_radii(c) {
                balls.push(space.ball(c, r));
            }
            offsets.push(balls.len());
        }
        BallTable { balls, offsets }
    }

    /// At each point, the maximum of `values` over the balls containing it.
    pub fn per_point_max(&self, space: &Space, values: &[f64]) -> Vec<f64> {
        let n = space.len();
        (0..n)
            .into_par_iter()
            .fold(
                || vec![f64::NEG_INFINITY; n],
                |mut acc, c| {
                    let range = self.offsets[c]..self.offsets[c + 1];
                    let balls = &self.balls[range.clone()];
                    let vals = &values[range];
                    let mut suffix = vec![f64::NEG_INFINITY; vals.len() + 1];
                    for k in (0..vals.len()).rev() {
                        suffix[k] = suffix[k + 1].max(vals[k]);
                    }
                    let order = space.order(c);
                    let mut k = 0;
                    for (p, &y) in order.iter().enumerate() {
                        while k < balls.len() && balls[k].size <= p {
                            k += 1;
                        }
                        acc[y] = acc[y].max(suffix[k]);
                    }
                    acc
                },
            )
            .reduce(
                || vec![f64::NEG_INFINITY; n],
                |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
            )
    }
}

/// Prefix sums of `g(y) w_y` along each center's order.
fn weighted_prefix(space: &Space, g: &[f64]) -> Vec<f64> {
    let n = space.len();
    let mut out = vec![0.0; n * (n + 1)];
    for c in 0..n {
        let mut acc = 0.0;
        for (k, &y) in space.order(c).iter().enumerate() {
            acc += g[y] * space.weight(y);
            out[c * (n + 1) + k + 1] = acc;
        }
    }
    out
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Parameter(format!(
            "dilation must be positive, got {rho}"
        )));
    }
    Ok(())
}

/// `M_{r,rho} f(x) = max_{Q ∋ x} ((1/mu(rho Q)) sum_Q |f|^r w)^(1/r)`.
pub fn maximal_mr_rho(space: &Space, f: &[f64], r: f64, rho: f64) -> Result<FunctionVec> {
    fractional(space, f, r, rho, 0.0)
}

/// `M^(alpha)_{p,rho} f(x) = max_{Q ∋ x} (mu(rho Q)^(-(1 - alpha p)) sum_Q |f|^p w)^(1/p)`.
pub fn maximal_m_alpha(
    space: &Space,
    f: &[f64],
    p: f64,
    rho: f64,
    alpha: f64,
) -> Result<FunctionVec> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if alpha * p >= 1.0 {
        return Err(Error::Parameter(format!(
            "need alpha p < 1, got alpha = {alpha}, p = {p}"
        )));
    }
    fractional(space, f, p, rho, alpha)
}

fn fractional(space: &Space, f: &[f64], p: f64, rho: f64, alpha: f64) -> Result<FunctionVec> {
    check_bound(space, f)?;
    check_rho(rho)?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!(
            "exponent must be at least 1, got {p}"
        )));
    }
    let n = space.len();
    let powered: Vec<f64> = f
        .iter()
        .map(|v| if p == 1.0 { v.abs() } else { v.abs().powf(p) })
        .collect();
    let prefix = weighted_prefix(space, &powered);
    let table = BallTable::new(space);
    let exponent = 1.0 - alpha * p;
    let values: Vec<f64> = table
        .balls
        .iter()
        .map(|b| {
            let sum = prefix[b.center * (n + 1) + b.size];
            let dil = space.mu_ball(b.center, rho * b.radius);
            let v = if alpha == 0.0 {
                sum / dil
            } else {
                sum * dil.powf(-exponent)
            };
            if p == 1.0 {
                v
            } else {
                v.powf(1.0 / p)
            }
        })
        .collect();
    Ok(FunctionVec::from(table.per_point_max(space, &values)))
}

/// `M_{(rho)} f = M_{1,rho} f`.
pub fn maximal_m_rho(space: &Space, f: &[f64], rho: f64) -> Result<FunctionVec> {
    maximal_mr_rho(space, f, 1.0, rho)
}

/// Mean of `f` over a ball; a singleton returns its value untouched.
pub(crate) fn ball_mean(space: &Space, prefix: &[f64], f: &[f64], b: &Ball) -> f64 {
    if b.size == 1 {
        f[b.center]
    } else {
        prefix[b.center * (space.len() + 1) + b.size] / space.mu(b)
    }
}

/// Plain averages of `|f|` over canonical `(6, beta_6)`-doubling balls.
pub fn maximal_n(space: &Space, f: &[f64]) -> Result<FunctionVec> {
    check_bound(space, f)?;
    let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let prefix = weighted_prefix(space, &abs);
    let beta = beta_six(space);
    let table = BallTable::new(space);
    let values: Vec<f64> = table
        .balls
        .iter()
        .map(|b| {
            if is_doubling(space, b, 6.0, beta) {
                ball_mean(space, &prefix, &abs, b)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let out = table.per_point_max(space, &values);
    if out.iter().any(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Invariant("a point lies in no doubling ball".into()));
    }
    Ok(FunctionVec::from(out))
}

/// Divisor of the pair term of the sharp maximal function and the BMO-type norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PairDivisor {
    /// `K_{Q,R}`.
    K,
    /// `K~^(alpha)_{Q,R}`.
    KTildeAlpha(f64),
}

/// Doubling canonical balls with their means, shared by the sharp maximal
/// function and the BMO-type norms.
pub(crate) struct DoublingFamily {
    pub balls: Vec<Ball>,
    pub means: Vec<f64>,
    /// Per center, indices into `balls` in ascending size.
    by_center: Vec<Vec<usize>>,
    /// Running maximum and minimum of the means from each position of `by_center` to its end.
    suffix_max: Vec<Vec<f64>>,
    suffix_min: Vec<Vec<f64>>,
    /// Size of the open ball of twice the radius.
    double_size: Vec<usize>,
}

impl DoublingFamily {
    pub fn new(space: &Space, table: &BallTable, f: &[f64], beta: f64) -> DoublingFamily {
        let n = space.len();
        let prefix = weighted_prefix(space, f);
        let balls: Vec<Ball> = table
            .balls
            .iter()
            .copied()
            .filter(|b| is_doubling(space, b, 6.0, beta))
            .collect();
        let means: Vec<f64> = balls
            .iter()
            .map(|b| ball_mean(space, &prefix, f, b))
            .collect();
        let mut by_center = vec![Vec::new(); n];
        for (i, b) in balls.iter().enumerate() {
            by_center[b.center].push(i);
        }
        let suffix = |pick: fn(f64, f64) -> f64, init: f64| -> Vec<Vec<f64>> {
            by_center
                .iter()
                .map(|list| {
                    let mut out = vec![init; list.len()];
                    let mut acc = init;
                    for k in (0..list.len()).rev() {
                        acc = pick(acc, means[list[k]]);
                        out[k] = acc;
                    }
                    out
                })
                .collect()
        };
        let suffix_max = suffix(f64::max, f64::NEG_INFINITY);
        let suffix_min = suffix(f64::min, f64::INFINITY);
        let double_size = balls
            .iter()
            .map(|b| space.count_open(b.center, 2.0 * b.radius))
            .collect();
        DoublingFamily {
            balls,
            means,
            by_center,
            suffix_max,
            suffix_min,
            double_size,
        }
    }

    /// For every doubling `Q`, `max |m_Q - m_R| / divisor(Q, R)` over doubling `R ⊇ Q`.
    ///
    /// With `shared_floor` the search prunes against the best value found anywhere, so
    /// only the overall maximum is exact; otherwise every entry is exact.
    pub fn pair_values(&self, space: &Space, divisor: PairDivisor, shared_floor: bool) -> Vec<f64> {
        let n = space.len();
        let mut rank = vec![0u32; n * n];
        for c in 0..n {
            for (i, &y) in space.order(c).iter().enumerate() {
                rank[c * n + y] = i as u32;
            }
        }
        let top = self.balls.iter().fold(0.0f64, |m, b| m.max(b.radius));
        let best_bits = AtomicU64::new(0f64.to_bits());
        let per_center: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let order = space.order(c);
                // K needs prefix sums of w_y / lambda(c, d(c, y)) along every other center's order.
                let (cross, own) = if divisor == PairDivisor::K {
                    let g: Vec<f64> = (0..n)
                        .map(|y| {
                            let d = space.d(c, y);
                            if d > 0.0 {
                                space.weight(y) / space.lambda(c, d)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mut cross = vec![0.0; n * (n + 1)];
                    for c2 in 0..n {
                        let row = &mut cross[c2 * (n + 1)..(c2 + 1) * (n + 1)];
                        for (k, &y) in space.order(c2).iter().enumerate() {
                            row[k + 1] = row[k] + g[y];
                        }
                    }
                    let mut own = vec![0.0; n + 1];
                    for (k, &y) in order.iter().enumerate() {
                        own[k + 1] = own[k] + g[y];
                    }
                    (cross, own)
                } else {
                    (Vec::new(), Vec::new())
                };
                let mut need = vec![0usize; n];
                let mut added = 0;
                let mut out = Vec::with_capacity(self.by_center[c].len());
                for &q in &self.by_center[c] {
                    let qb = self.balls[q];
                    while added < qb.size {
                        let y = order[added];
                        for (c2, slot) in need.iter_mut().enumerate() {
                            *slot = (*slot).max(rank[c2 * n + y] as usize + 1);
                        }
                        added += 1;
                    }
                    let tilde_sums = match divisor {
                        PairDivisor::KTildeAlpha(alpha) => {
                            k_tilde_partial_sums(space, &qb, top, 1.0 - alpha)
                        }
                        PairDivisor::K => Vec::new(),
                    };
                    let div = |r: usize| -> f64 {
                        match divisor {
                            PairDivisor::K => {
                                let rb = &self.balls[r];
                                let outside =
                                    cross[rb.center * (n + 1) + self.double_size[r]] - own[qb.size];
                                1.0 + outside.max(0.0)
                            }
                            PairDivisor::KTildeAlpha(_) => {
                                tilde_sums[crate::geometry::n_bs(qb.radius, self.balls[r].radius)
                                    as usize]
                            }
                        }
                    };
                    let mq = self.means[q];
                    let mut best = if shared_floor {
                        f64::from_bits(best_bits.load(Ordering::Relaxed))
                    } else {
                        0.0
                    };
                    for c2 in 0..n {
                        let list = &self.by_center[c2];
                        let start = list.partition_point(|&i| self.balls[i].size < need[c2]);
                        if start == list.len() {
                            continue;
                        }
                        let spread =
                            (self.suffix_max[c2][start] - mq).max(mq - self.suffix_min[c2][start]);
                        if spread <= best {
                            continue;
                        }
                        for &r in &list[start..] {
                            let num = (mq - self.means[r]).abs();
                            if num > best {
                                best = best.max(num / div(r));
                            }
                        }
                    }
                    if shared_floor {
                        best_bits.fetch_max(best.to_bits(), Ordering::Relaxed);
                    }
                    out.push((q, best));
                }
                out
            })
            .collect();
        let mut values = vec![0.0; self.balls.len()];
        for (q, v) in per_center.into_iter().flatten() {
            values[q] = v;
        }
        values
    }

    /// Supremum of the pair ratio over all doubling `Q ⊂ R`.
    pub fn pair_sup(&self, space: &Space, divisor: PairDivisor) -> f64 {
        self.pair_values(space, divisor, true)
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// `1 + sum_{k=1}^{N} (mu(6^k B) / lambda(c_B, 6^k r_B))^exponent` for every `N` up to `6^N r_B >= top`.
fn k_tilde_partial_sums(space: &Space, b: &Ball, top: f64, exponent: f64) -> Vec<f64> {
    let last = crate::geometry::n_bs(b.radius, top);
    let mut sums = vec![1.0];
    for k in 1..=last {
        let r = b.radius * 6f64.powi(k as i32);
        let t = space.mu_ball(b.center, r) / space.lambda(b.center, r);
        let t = if exponent == 1.0 { t } else { t.powf(exponent) };
        sums.push(sums[k as usize - 1] + t);
    }
    sums
}

/// `(1/mu(rho B)) sum_B |f - m_{B~} f| w` for every canonical ball.
pub(crate) fn oscillation_values(
    space: &Space,
    table: &BallTable,
    f: &[f64],
    beta: f64,
    rho: f64,
) -> Vec<f64> {
    let prefix = weighted_prefix(space, f);
    table
        .balls
        .par_iter()
        .map(|b| {
            let (tilde, _) = smallest_doubling_dilate(space, b, 6.0, beta);
            let m = ball_mean(space, &prefix, f, &tilde);
            let mut acc = 0.0;
            for &y in space.members(b) {
                acc += (f[y] - m).abs() * space.weight(y);
            }
            acc / space.mu_ball(b.center, rho * b.radius)
        })
        .collect()
}

/// The sharp maximal function; `alpha = 0` divides pairs by `K`, `alpha > 0` by `K~^(alpha)`.
pub fn sharp_maximal(space: &Space, f: &[f64], alpha: f64) -> Result<FunctionVec> {
    check_bound(space, f)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let beta = beta_six(space);
    let table = BallTable::new(space);
    let osc = table.per_point_max(space, &oscillation_values(space, &table, f, beta, 6.0));
    let family = DoublingFamily::new(space, &table, f, beta);
    let divisor = if alpha == 0.0 {
        PairDivisor::K
    } else {
        PairDivisor::KTildeAlpha(alpha)
    };
    let per_q = family.pair_values(space, divisor, false);
    // Spread each doubling ball's best ratio over its points.
    let mut pair = vec![0.0f64; space.len()];
    for (q, b) in family.balls.iter().enumerate() {
        for &y in space.members(b) {
            pair[y] = pair[y].max(per_q[q]);
        }
    }
    Ok(FunctionVec::from(
        osc.iter()
            .zip(&pair)
            .map(|(a, b)| a.max(0.0) + b)
            .collect::<Vec<_>>(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::DominatingFn;

    fn s3() -> Space {
        let values = (0..3)
            .map(|i: i32| (0..3).map(|j: i32| (i - j).abs() as f64).collect())
            .collect();
        Space::from_matrix(
            values,
            vec![1.0; 3],
            DominatingFn::Power {
                c0: 2.0,
                kappa: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn mr_rho_examples() {
        let s = s3();
        let m = maximal_mr_rho(&s, &[1.0, 0.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(m[0], 1.0);
        let m = maximal_mr_rho(&s, &[2.0; 3], 1.0, 1.0).unwrap();
        assert!(m.iter().all(|&v| v == 2.0));
        let m = maximal_mr_rho(&s, &[2.0; 3], 1.0, 6.0).unwrap();
        assert!(m.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn fractional_examples() {
        let s = s3();
        let f = [1.0, 0.0, 0.0];
        let hi = maximal_m_alpha(&s, &f, 1.0, 6.0, 0.75).unwrap();
        assert!((hi[1] - 3f64.powf(-0.25)).abs() < 1e-15);
        let lo = maximal_m_alpha(&s, &f, 1.0, 6.0, 0.25).unwrap();
        assert!((lo[1] - 3f64.powf(-0.75)).abs() < 1e-15);
        let g = [0.3, -1.0, 2.0];
        assert_eq!(
            maximal_m_alpha(&s, &g, 2.0, 6.0, 0.0).unwrap(),
            maximal_mr_rho(&s, &g, 2.0, 6.0).unwrap()
        );
        assert!(maximal_m_alpha(&s, &g, 2.0, 6.0, 0.5).is_err());
    }

    #[test]
    fn n_dominates_pointwise() {
        let s = s3();
        let f = [1.0, 0.0, 0.0];
        let nf = maximal_n(&s, &f).unwrap();
        for x in 0..3 {
            assert!(nf[x] >= f[x]);
        }
        let one = Space::from_matrix(vec![vec![0.0]], vec![0.7], DominatingFn::Measure).unwrap();
        assert_eq!(&*maximal_n(&one, &[-3.5]).unwrap(), &[3.5]);
    }

    #[test]
    fn sharp_vanishes_on_constants() {
        let s = s3();
        assert!(sharp_maximal(&s, &[4.0; 3], 0.5)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let one = Space::from_matrix(vec![vec![0.0]], vec![1.0], DominatingFn::Measure).unwrap();
        assert_eq!(&*sharp_maximal(&one, &[9.0], 0.0).unwrap(), &[0.0]);
        let v = sharp_maximal(&s, &[1.0, 0.0, 0.0], 0.5).unwrap();
        assert!(v.iter().all(|x| x.is_finite() && *x > 0.0));
    }
}
