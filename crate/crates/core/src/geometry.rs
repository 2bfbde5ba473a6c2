//! Ball arithmetic: doubling search, the `K` coefficients and Vitali selection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::space::{Ball, Space};

/// `eta^(3 max(n, nu)) + 30^n + 30^nu`.
pub fn beta_eta(eta: f64, n: f64, nu: f64) -> f64 {
    eta.powf(3.0 * n.max(nu)) + 30f64.powf(n) + 30f64.powf(nu)
}

/// The `(6, beta_6)` doubling threshold of a space, from its fitted constants.
pub fn beta_six(space: &Space) -> f64 {
    let c = space.constants();
    beta_eta(6.0, c.n, c.nu)
}

/// Whether `mu(eta B) <= beta mu(B)`.
pub fn is_doubling(space: &Space, ball: &Ball, eta: f64, beta: f64) -> bool {
    space.mu_ball(ball.center, eta * ball.radius) <= beta * space.mu(ball)
}

/// Returns `(eta^j B, j)` for the smallest `j >= 0` such that it is `(eta, beta)`-doubling.
pub fn smallest_doubling_dilate(space: &Space, ball: &Ball, eta: f64, beta: f64) -> (Ball, u32) {
    assert!(eta > 1.0 && beta >= 1.0, "need eta > 1 and beta >= 1");
    let mut j = 0u32;
    loop {
        let b = if j == 0 {
            *ball
        } else {
            space.ball(ball.center, ball.radius * eta.powi(j as i32))
        };
        if is_doubling(space, &b, eta, beta) {
            return (b, j);
        }
        j += 1;
    }
}

/// Smallest `(eta, beta)`-doubling ball of the form `eta^j B`, `j >= 0`.
pub fn smallest_doubling_ball(space: &Space, ball: &Ball, eta: f64, beta: f64) -> Result<Ball> {
    if !(eta > 1.0) || !(beta >= 1.0) {
        return Err(Error::Parameter(format!(
            "need eta > 1 and beta >= 1, got {eta}, {beta}"
        )));
    }
    Ok(smallest_doubling_dilate(space, ball, eta, beta).0)
}

/// `d(c_B, c_S) + r_B <= r_S`.
pub fn nested_geometric(space: &Space, inner: &Ball, outer: &Ball) -> bool {
    space.d(inner.center, outer.center) + inner.radius <= outer.radius
}

/// Realized-set containment.
pub fn nested_set(space: &Space, inner: &Ball, outer: &Ball) -> bool {
    space
        .members(inner)
        .iter()
        .all(|&y| space.contains(outer, y))
}

/// Realized sets share a point.
pub fn intersects(space: &Space, a: &Ball, b: &Ball) -> bool {
    let (small, big) = if a.size <= b.size { (a, b) } else { (b, a) };
    space.members(small).iter().any(|&y| space.contains(big, y))
}

/// A coefficient with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientValue {
    pub value: f64,
    /// `N_{B,S}` for the discrete variants.
    pub n_bs: Option<u32>,
    /// Summands in evaluation order.
    pub terms: Vec<f64>,
}

fn require_nested(space: &Space, b: &Ball, s: &Ball) -> Result<()> {
    if nested_geometric(space, b, s) {
        Ok(())
    } else {
        Err(Error::NotNested(format!(
            "B({}, {}) is not inside S({}, {})",
            b.center, b.radius, s.center, s.radius
        )))
    }
}

fn k_terms(space: &Space, b: &Ball, s: &Ball, mut sink: impl FnMut(f64)) {
    let c = b.center;
    let two_r = 2.0 * s.radius;
    let order = space.order(c);
    let dists = space.sorted_distances(c);
    // Points outside B form the tail of the center's distance order.
    for k in b.size..order.len() {
        let x = order[k];
        if space.d(s.center, x) < two_r {
            sink(space.weight(x) / space.lambda(c, dists[k]));
        }
    }
}

/// `1 + sum_{x in 2S \ B} w_x / lambda(c_B, d(x, c_B))` without any nesting check.
///
/// Used where balls are nested as point sets only.
pub fn k_value(space: &Space, b: &Ball, s: &Ball) -> f64 {
    let mut sum = 0.0;
    k_terms(space, b, s, |t| sum += t);
    1.0 + sum
}

/// `K_{B,S}`; requires geometric nesting.
pub fn coeff_k(space: &Space, b: &Ball, s: &Ball) -> Result<CoefficientValue> {
    require_nested(space, b, s)?;
    let mut terms = Vec::new();
    k_terms(space, b, s, |t| terms.push(t));
    let value = 1.0 + terms.iter().sum::<f64>();
    Ok(CoefficientValue {
        value,
        n_bs: None,
        terms,
    })
}

/// Smallest `N >= 0` with `6^N r_B >= r_S`.
pub fn n_bs(r_b: f64, r_s: f64) -> u32 {
    let mut n = 0u32;
    while r_b * 6f64.powi(n as i32) < r_s {
        n += 1;
    }
    n
}

fn k_tilde_impl(space: &Space, b: &Ball, s: &Ball, exponent: f64) -> CoefficientValue {
    let n = n_bs(b.radius, s.radius);
    let terms: Vec<f64> = (1..=n)
        .map(|k| {
            let r = b.radius * 6f64.powi(k as i32);
            let t = space.mu_ball(b.center, r) / space.lambda(b.center, r);
            if exponent == 1.0 {
                t
            } else {
                t.powf(exponent)
            }
        })
        .collect();
    let mut value = 1.0;
    for t in &terms {
        value += t;
    }
    CoefficientValue {
        value,
        n_bs: Some(n),
        terms,
    }
}

/// Unchecked `K~^(alpha)`, for callers that only have set containment.
pub fn k_tilde_alpha_value(space: &Space, b: &Ball, s: &Ball, alpha: f64) -> f64 {
    k_tilde_impl(space, b, s, 1.0 - alpha).value
}

/// `K~_{B,S} = 1 + sum_{k=1}^{N} mu(6^k B) / lambda(c_B, 6^k r_B)`.
pub fn coeff_k_tilde(space: &Space, b: &Ball, s: &Ball) -> Result<CoefficientValue> {
    require_nested(space, b, s)?;
    Ok(k_tilde_impl(space, b, s, 1.0))
}

/// `K~^(alpha)_{B,S}`: each summand of `K~` raised to `1 - alpha`.
pub fn coeff_k_tilde_alpha(
    space: &Space,
    b: &Ball,
    s: &Ball,
    alpha: f64,
) -> Result<CoefficientValue> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    require_nested(space, b, s)?;
    Ok(k_tilde_impl(space, b, s, 1.0 - alpha))
}

/// Greedy disjoint selection by descending radius, ties by ascending center.
///
/// Every input ball meets a kept ball whose radius is at least its own.
pub fn vitali_select(space: &Space, balls: &[Ball], dilation: f64) -> Result<Vec<Ball>> {
    if !(dilation >= 1.0) {
        return Err(Error::Parameter(format!(
            "dilation must be at least 1, got {dilation}"
        )));
    }
    let mut sorted: Vec<Ball> = balls.to_vec();
    sorted.sort_by(|a, b| b.radius.total_cmp(&a.radius).then(a.center.cmp(&b.center)));
    let mut taken = vec![false; space.len()];
    let mut kept = Vec::new();
    for b in sorted {
        let members = space.members(&b);
        if members.iter().all(|&y| !taken[y]) {
            for &y in members {
                taken[y] = true;
            }
            kept.push(b);
        }
    }
    Ok(kept)
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
    fn beta_values() {
        assert_eq!(beta_eta(6.0, 1.0, 1.0), 276.0);
        assert_eq!(beta_eta(6.0, 0.0, 0.0), 3.0);
        assert_eq!(beta_eta(2.0, 1.0, 2.0), 994.0);
    }

    #[test]
    fn doubling_search() {
        let s = s3();
        let b = s.ball(1, 0.5);
        assert_eq!(
            smallest_doubling_ball(&s, &b, 6.0, 2.0).unwrap(),
            s.ball(1, 3.0)
        );
        let whole = s.ball(1, 5.0);
        assert_eq!(smallest_doubling_ball(&s, &whole, 6.0, 2.0).unwrap(), whole);
        let one = Space::from_matrix(vec![vec![0.0]], vec![1.0], DominatingFn::Measure).unwrap();
        let b = one.ball(0, 1.0);
        assert_eq!(smallest_doubling_ball(&one, &b, 6.0, 2.0).unwrap(), b);
        assert!(smallest_doubling_ball(&s, &b, 1.0, 2.0).is_err());
    }

    #[test]
    fn k_coefficient_examples() {
        let s = s3();
        let k = coeff_k(&s, &s.ball(1, 0.5), &s.ball(1, 1.5)).unwrap();
        assert_eq!(k.value, 2.0);
        let whole = s.ball(1, 2.0);
        assert_eq!(coeff_k(&s, &whole, &whole).unwrap().value, 1.0);
        assert!(coeff_k(&s, &s.ball(0, 1.5), &s.ball(1, 1.5)).is_err());
    }

    #[test]
    fn k_tilde_examples() {
        let s = s3();
        let b = s.ball(1, 0.5);
        let kt = coeff_k_tilde(&s, &b, &s.ball(1, 1.5)).unwrap();
        assert_eq!((kt.value, kt.n_bs), (1.5, Some(1)));
        let kt = coeff_k_tilde(&s, &b, &s.ball(1, 18.0)).unwrap();
        assert_eq!(kt.n_bs, Some(2));
        assert!((kt.value - (1.0 + 0.5 + 3.0 / 36.0)).abs() < 1e-15);
        assert_eq!(coeff_k_tilde(&s, &b, &b).unwrap().value, 1.0);
        let ka = coeff_k_tilde_alpha(&s, &b, &s.ball(1, 1.5), 0.5).unwrap();
        assert!((ka.value - (1.0 + 0.5f64.sqrt())).abs() < 1e-15);
        let k0 = coeff_k_tilde_alpha(&s, &b, &s.ball(1, 18.0), 0.0).unwrap();
        assert_eq!(
            k0.value,
            coeff_k_tilde(&s, &b, &s.ball(1, 18.0)).unwrap().value
        );
        for a in [0.0, 0.3, 0.9] {
            assert_eq!(coeff_k_tilde_alpha(&s, &b, &b, a).unwrap().value, 1.0);
        }
        assert!(coeff_k_tilde_alpha(&s, &b, &b, 1.0).is_err());
    }

    #[test]
    fn vitali_examples() {
        let s = s3();
        let a = s.ball(0, 0.5);
        let c = s.ball(2, 0.5);
        assert_eq!(vitali_select(&s, &[a, c], 1.0).unwrap().len(), 2);
        assert_eq!(vitali_select(&s, &[a, a], 1.0).unwrap().len(), 1);
        // {0,1}, {0,1,2} and {1,2} pairwise intersect: only the first survives.
        let balls = [s.ball(0, 1.5), s.ball(1, 1.5), s.ball(2, 1.5)];
        assert_eq!(
            vitali_select(&s, &balls, 1.0).unwrap(),
            vec![s.ball(0, 1.5)]
        );
        let balls = [s.ball(0, 1.5), s.ball(1, 1.5), s.ball(2, 0.5)];
        assert_eq!(
            vitali_select(&s, &balls, 1.0).unwrap(),
            vec![s.ball(0, 1.5), s.ball(2, 0.5)]
        );
        assert!(vitali_select(&s, &[], 1.0).unwrap().is_empty());
    }
}
