//! Deterministic test spaces and function families.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::lp_norm;
use crate::operators::FunctionVec;
use crate::space::{Ball, Coords, DominatingFn, MetricSpec, Point, SamplePlan, Space};

fn default_kappa() -> f64 {
    1.0
}

fn default_c0() -> f64 {
    2.0
}

fn default_dim() -> usize {
    1
}

/// Choice of dominating function for random planar clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomLambda {
    /// `lambda = mu(B(x, r))`.
    Measure,
    /// `c0 r^2` with `c0` fitted to the sample.
    Power,
}

/// A space generator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FixtureSpec {
    /// `n` points `i h` with weights `h`; `h = 1/n` unless `spacing` is given.
    DyadicLine {
        n: usize,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spacing: Option<f64>,
    },
    /// Left endpoints of the middle-thirds construction at `level`, uniform weights and
    /// `c0 r^(log 2 / log 3)`; `c0` defaults to the smallest value passing the upper bound.
    CantorLike {
        level: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
    },
    /// Random points of the disc `|z| <= 0.95` in `C^dim` with the Bergman dominating function.
    ComplexBall {
        n: usize,
        m: f64,
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Random points of the unit square with log-uniform weights.
    RandomMetric {
        n: usize,
        seed: u64,
        lambda: RandomLambda,
    },
}

impl FixtureSpec {
    /// Short identifier used in reports.
    pub fn label(&self) -> String {
        match self {
            FixtureSpec::DyadicLine {
                n,
                kappa,
                c0,
                spacing,
            } => match spacing {
                Some(h) => format!("line(n={n},kappa={kappa},c0={c0},h={h})"),
                None => format!("line(n={n},kappa={kappa},c0={c0})"),
            },
            FixtureSpec::CantorLike { level, c0 } => match c0 {
                Some(c) => format!("cantor(level={level},c0={c})"),
                None => format!("cantor(level={level})"),
            },
            FixtureSpec::ComplexBall { n, m, seed, dim } => {
                format!("cball(n={n},m={m},d={dim},seed={seed})")
            }
            FixtureSpec::RandomMetric { n, seed, lambda } => {
                let tag = match lambda {
                    RandomLambda::Measure => "measure",
                    RandomLambda::Power => "power",
                };
                format!("random(n={n},lambda={tag},seed={seed})")
            }
        }
    }

    /// Generator family without the size parameter, for grouping ladder rows.
    pub fn family_label(&self) -> String {
        match self {
            FixtureSpec::DyadicLine { kappa, c0, .. } => format!("line(kappa={kappa},c0={c0})"),
            FixtureSpec::CantorLike { .. } => "cantor".into(),
            FixtureSpec::ComplexBall { m, dim, seed, .. } => {
                format!("cball(m={m},d={dim},seed={seed})")
            }
            FixtureSpec::RandomMetric { lambda, seed, .. } => {
                format!("random({lambda:?},seed={seed})")
            }
        }
    }

    /// Number of points generated.
    pub fn size(&self) -> usize {
        match self {
            FixtureSpec::DyadicLine { n, .. }
            | FixtureSpec::ComplexBall { n, .. }
            | FixtureSpec::RandomMetric { n, .. } => *n,
            FixtureSpec::CantorLike { level, .. } => 1 << level,
        }
    }

    /// The same generator at (about) `n` points; Cantor sets round to a power of two.
    pub fn with_size(&self, n: usize) -> FixtureSpec {
        let mut out = self.clone();
        match &mut out {
            FixtureSpec::DyadicLine { n: m, .. }
            | FixtureSpec::ComplexBall { n: m, .. }
            | FixtureSpec::RandomMetric { n: m, .. } => *m = n,
            FixtureSpec::CantorLike { level, .. } => {
                *level = (n.max(1) as f64).log2().round() as u32
            }
        }
        out
    }
}

/// Distances `|a - b| h` between integer positions, so equal gaps give equal distances.
fn grid_matrix(positions: &[i64], h: f64) -> Vec<Vec<f64>> {
    positions
        .iter()
        .map(|a| positions.iter().map(|b| (a - b).abs() as f64 * h).collect())
        .collect()
}

fn require_upper_doubling(space: Space, label: &str) -> Result<Space> {
    let report = space.check_upper_doubling(&SamplePlan::default());
    match report.violations.first() {
        None => Ok(space),
        Some(v) => Err(Error::Precondition(format!(
            "{label}: mu(B({}, {})) = {} exceeds lambda = {}",
            v.center, v.radius, v.mass, v.lambda
        ))),
    }
}

/// Smallest `c` with `mu(B) <= c g(B)` over canonical balls of `space`.
fn fitted_scale(space: &Space, g: impl Fn(usize, f64) -> f64) -> f64 {
    let mut c: f64 = 0.0;
    for b in space.canonical_balls() {
        c = c.max(space.mu(&b) / g(b.center, b.radius));
    }
    c
}

/// Builds the space described by `spec`; every generated space satisfies `mu(B) <= lambda`.
pub fn make_space(spec: &FixtureSpec) -> Result<Space> {
    let label = spec.label();
    let space = match spec {
        FixtureSpec::DyadicLine {
            n,
            kappa,
            c0,
            spacing,
        } => {
            if *n == 0 || !(*kappa > 0.0) || !(*c0 > 0.0) || spacing.is_some_and(|h| !(h > 0.0)) {
                return Err(Error::Parameter(format!("invalid parameters for {label}")));
            }
            let h = spacing.unwrap_or(1.0 / *n as f64);
            let positions: Vec<i64> = (0..*n as i64).collect();
            Space::from_matrix(
                grid_matrix(&positions, h),
                vec![h; *n],
                DominatingFn::Power {
                    c0: *c0,
                    kappa: *kappa,
                },
            )?
        }
        FixtureSpec::CantorLike { level, c0 } => {
            if *level > 12 || c0.is_some_and(|c| !(c > 0.0)) {
                return Err(Error::Parameter(format!("invalid parameters for {label}")));
            }
            // Positions in units of 3^-level.
            let mut positions = vec![0i64];
            for k in 1..=*level {
                let shift = 2 * 3i64.pow(*level - k);
                let right: Vec<i64> = positions.iter().map(|x| x + shift).collect();
                positions.extend(right);
            }
            positions.sort_unstable();
            let matrix = grid_matrix(&positions, 3f64.powi(-(*level as i32)));
            let weights = vec![1.0 / positions.len() as f64; positions.len()];
            let kappa = 2f64.ln() / 3f64.ln();
            let c0 = match c0 {
                Some(c) => *c,
                None => {
                    let probe =
                        Space::from_matrix(matrix.clone(), weights.clone(), DominatingFn::Measure)?;
                    fitted_scale(&probe, |_, r| r.powf(kappa)).max(1.0) * (1.0 + 1e-12)
                }
            };
            Space::from_matrix(matrix, weights, DominatingFn::Power { c0, kappa })?
        }
        FixtureSpec::ComplexBall { n, m, seed, dim } => {
            if *n == 0 || *dim == 0 || !(*m > 0.0 && *m <= 2.0 * *dim as f64) {
                return Err(Error::Parameter(format!("invalid parameters for {label}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let points: Vec<Point> = (0..*n)
                .map(|i| {
                    let coords = loop {
                        let z: Vec<[f64; 2]> = (0..*dim)
                            .map(|_| [rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)])
                            .collect();
                        let norm = z
                            .iter()
                            .map(|c| c[0] * c[0] + c[1] * c[1])
                            .sum::<f64>()
                            .sqrt();
                        if norm <= 0.95 && norm > 0.0 {
                            break z;
                        }
                    };
                    Point {
                        id: format!("z{i}"),
                        coords: Some(Coords::Complex(coords)),
                    }
                })
                .collect();
            let lambda = DominatingFn::Bergman { m: *m };
            let unit = Space::new(
                points.clone(),
                MetricSpec::ComplexBall,
                vec![1.0; *n],
                lambda.clone(),
            )?;
            let scale = fitted_scale(&unit, |c, r| unit.lambda(c, r));
            Space::new(
                points,
                MetricSpec::ComplexBall,
                vec![(1.0 - 1e-9) / scale; *n],
                lambda,
            )?
        }
        FixtureSpec::RandomMetric { n, seed, lambda } => {
            if *n == 0 {
                return Err(Error::Parameter(format!("invalid parameters for {label}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let points: Vec<Point> = (0..*n)
                .map(|i| Point {
                    id: format!("p{i}"),
                    coords: Some(Coords::Real(vec![rng.gen::<f64>(), rng.gen::<f64>()])),
                })
                .collect();
            let weights: Vec<f64> = (0..*n)
                .map(|_| (rng.gen_range(-2f64..2f64)).exp() / *n as f64)
                .collect();
            match lambda {
                RandomLambda::Measure => Space::new(
                    points,
                    MetricSpec::Euclidean,
                    weights,
                    DominatingFn::Measure,
                )?,
                RandomLambda::Power => {
                    let probe = Space::new(
                        points.clone(),
                        MetricSpec::Euclidean,
                        weights.clone(),
                        DominatingFn::Measure,
                    )?;
                    let c0 = fitted_scale(&probe, |_, r| r * r) * (1.0 + 1e-9);
                    Space::new(
                        points,
                        MetricSpec::Euclidean,
                        weights,
                        DominatingFn::Power { c0, kappa: 2.0 },
                    )?
                }
            }
        }
    };
    require_upper_doubling(space, &label)
}

/// Base shapes of a function family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FamilyKind {
    /// Indicators of distinct canonical balls, spread over the range of masses.
    Indicators,
    /// Independent signs.
    SignedRandom,
    /// `exp(-d(., x0)^2 / s^2)` with random centers and scales.
    Bumps,
    /// Mean-zero two-piece atoms on canonical balls with `||a||_p = mu(B)^(1/p - 1)`.
    Atoms { p: f64 },
}

/// A family with its post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    #[serde(flatten)]
    pub kind: FamilyKind,
    /// Subtract the weighted mean.
    #[serde(default)]
    pub mean_zero: bool,
    /// Rescale every nonzero member to unit `L^p` norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<f64>,
}

impl Family {
    pub fn plain(kind: FamilyKind) -> Family {
        Family {
            kind,
            mean_zero: false,
            normalize: None,
        }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            FamilyKind::Indicators => "indicators".to_string(),
            FamilyKind::SignedRandom => "signed_random".to_string(),
            FamilyKind::Bumps => "bumps".to_string(),
            FamilyKind::Atoms { p } => format!("atoms(p={p})"),
        };
        let mut out = base;
        if self.mean_zero {
            out.push_str("+mean_zero");
        }
        if let Some(p) = self.normalize {
            out.push_str(&format!("+normalized(p={p})"));
        }
        out
    }
}

/// Distinct canonical balls sorted by mass, then center, then size.
pub fn distinct_canonical_balls(space: &Space) -> Vec<Ball> {
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xba11);
    let keys: Vec<(u64, u64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in 0..n {
        let order = space.order(c);
        let mut key = (0u64, 0u64);
        let mut size = 0;
        for &r in space.canonical_radii(c) {
            let b = space.ball(c, r);
            while size < b.size {
                let k = keys[order[size]];
                key = (key.0.wrapping_add(k.0), key.1 ^ k.1);
                size += 1;
            }
            if seen.insert((key, b.size)) {
                out.push(b);
            }
        }
    }
    out.sort_by(|a, b| {
        space
            .mu(a)
            .total_cmp(&space.mu(b))
            .then(a.center.cmp(&b.center))
            .then(a.size.cmp(&b.size))
    });
    out
}

/// Picks `count` entries at evenly spaced quantiles, or all of them.
pub(crate) fn quantile_pick<T: Copy>(items: &[T], count: usize) -> Vec<T> {
    if count >= items.len() {
        return items.to_vec();
    }
    if count == 1 {
        return vec![items[items.len() / 2]];
    }
    (0..count)
        .map(|k| items[k * (items.len() - 1) / (count - 1)])
        .collect()
}

fn weighted_mean(space: &Space, f: &[f64]) -> f64 {
    f.iter()
        .zip(space.weights())
        .map(|(a, w)| a * w)
        .sum::<f64>()
        / space.total_mass()
}

/// Deterministic list of `count` functions (fewer for indicators and atoms on tiny spaces).
pub fn make_function_family(
    space: &Space,
    family: &Family,
    count: usize,
    seed: u64,
) -> Result<Vec<FunctionVec>> {
    if count == 0 {
        return Err(Error::Parameter(
            "a family needs at least one member".into(),
        ));
    }
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = match family.kind {
        FamilyKind::Indicators => quantile_pick(&distinct_canonical_balls(space), count)
            .iter()
            .map(|b| FunctionVec::indicator(n, space.members(b)).into_inner())
            .collect(),
        FamilyKind::SignedRandom => (0..count)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect(),
        FamilyKind::Bumps => {
            let diam = space.diameter().max(space.min_gap());
            (0..count)
                .map(|_| {
                    let center = ((rng.gen::<f64>() * n as f64) as usize).min(n - 1);
                    let scale = diam * 10f64.powf(rng.gen_range(-1.5..0.0));
                    (0..n)
                        .map(|y| (-(space.d(center, y) / scale).powi(2)).exp())
                        .collect()
                })
                .collect()
        }
        FamilyKind::Atoms { p } => {
            if !(p >= 1.0) {
                return Err(Error::Parameter(format!(
                    "atom exponent must be at least 1, got {p}"
                )));
            }
            let balls: Vec<Ball> = distinct_canonical_balls(space)
                .into_iter()
                .filter(|b| b.size >= 2)
                .collect();
            quantile_pick(&balls, count)
                .iter()
                .map(|b| {
                    let members = space.members(b);
                    let (near, far) = members.split_at(members.len() / 2);
                    let mass = |s: &[usize]| s.iter().map(|&y| space.weight(y)).sum::<f64>();
                    let (mn, mf) = (mass(near), mass(far));
                    let mut a = vec![0.0; n];
                    for &y in near {
                        a[y] = 1.0 / mn;
                    }
                    for &y in far {
                        a[y] = -1.0 / mf;
                    }
                    let current = lp_norm(space, &a, p).expect("length matches");
                    let target = if p.is_infinite() {
                        1.0 / space.mu(b)
                    } else {
                        space.mu(b).powf(1.0 / p - 1.0)
                    };
                    a.iter().map(|v| v * target / current).collect()
                })
                .collect()
        }
    };
    raw.into_iter()
        .map(|mut f| {
            if family.mean_zero {
                let m = weighted_mean(space, &f);
                if f.iter().all(|&v| v == f[0]) {
                    f.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    f.iter_mut().for_each(|v| *v -= m);
                }
            }
            if let Some(p) = family.normalize {
                let norm = lp_norm(space, &f, p)?;
                if norm > 0.0 {
                    f.iter_mut().for_each(|v| *v /= norm);
                }
            }
            FunctionVec::new(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn line_with_unit_spacing_is_s3() {
        let s = s3();
        assert_eq!(s.d(0, 2), 2.0);
        assert_eq!(s.weights(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.lambda(1, 3.0), 6.0);
        let unit = make_space(&FixtureSpec::DyadicLine {
            n: 64,
            kappa: 1.0,
            c0: 2.0,
            spacing: None,
        })
        .unwrap();
        assert!((unit.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generators_pass_upper_doubling() {
        for spec in [
            FixtureSpec::CantorLike { level: 5, c0: None },
            FixtureSpec::ComplexBall {
                n: 40,
                m: 2.0,
                seed: 3,
                dim: 1,
            },
            FixtureSpec::RandomMetric {
                n: 40,
                seed: 1,
                lambda: RandomLambda::Measure,
            },
            FixtureSpec::RandomMetric {
                n: 40,
                seed: 1,
                lambda: RandomLambda::Power,
            },
        ] {
            let s = make_space(&spec).unwrap();
            assert_eq!(s.len(), spec.size());
        }
        let one = make_space(&FixtureSpec::ComplexBall {
            n: 1,
            m: 1.0,
            seed: 9,
            dim: 1,
        })
        .unwrap();
        assert_eq!(one.len(), 1);
        assert!(make_space(&FixtureSpec::DyadicLine {
            n: 8,
            kappa: 1.0,
            c0: 0.5,
            spacing: None
        })
        .is_err());
    }

    #[test]
    fn reproducible() {
        let spec = FixtureSpec::RandomMetric {
            n: 30,
            seed: 11,
            lambda: RandomLambda::Power,
        };
        let (a, b) = (make_space(&spec).unwrap(), make_space(&spec).unwrap());
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.d(3, 7).to_bits(), b.d(3, 7).to_bits());
        let fam = Family::plain(FamilyKind::Bumps);
        assert_eq!(
            make_function_family(&a, &fam, 4, 2).unwrap(),
            make_function_family(&b, &fam, 4, 2).unwrap()
        );
    }

    #[test]
    fn families() {
        let s = s3();
        let ind = make_function_family(&s, &Family::plain(FamilyKind::Indicators), 10, 0).unwrap();
        assert_eq!(ind.len(), 6);
        let mz = Family {
            kind: FamilyKind::Indicators,
            mean_zero: true,
            normalize: None,
        };
        let whole = make_function_family(&s, &mz, 10, 0).unwrap();
        assert!(whole.iter().any(|f| f.iter().all(|&v| v == 0.0)));
        let line = make_space(&FixtureSpec::DyadicLine {
            n: 50,
            kappa: 1.0,
            c0: 2.0,
            spacing: None,
        })
        .unwrap();
        let normed = Family {
            kind: FamilyKind::SignedRandom,
            mean_zero: true,
            normalize: Some(2.0),
        };
        for f in make_function_family(&line, &normed, 5, 4).unwrap() {
            assert!((lp_norm(&line, &f, 2.0).unwrap() - 1.0).abs() < 1e-12);
            assert!(weighted_mean(&line, &f).abs() < 1e-14);
        }
        for a in
            make_function_family(&line, &Family::plain(FamilyKind::Atoms { p: 2.0 }), 5, 0).unwrap()
        {
            assert!(weighted_mean(&line, &a).abs() < 1e-12);
        }
        assert!(make_function_family(&s, &Family::plain(FamilyKind::Bumps), 0, 0).is_err());
    }
}
